"""LUT-Q training loop.

Each minibatch runs the three steps of the training algorithm in order:

1. every ``kmeans_interval`` minibatches, refresh ``(d, A)`` of each
   quantized layer with ``M`` k-means steps on the current accumulators;
2. forward with the look-ups ``Q`` and backward with the straight-through
   estimator;
3. SGD update of the full-precision accumulators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from lutq.core.tensor import Tensor, make_rng
from lutq.data_models import EpochRecord, TrainConfig, TrainTrace
from lutq.errors import ArgumentError, DimensionError
from lutq.nn.data import Dataset
from lutq.nn.losses import softmax_cross_entropy
from lutq.nn.network import Gradients, Network
from lutq.quantizers.fixed import dynamic_range

logger = logging.getLogger(__name__)

__all__ = [
    "SGDOptimizer",
    "sgd_step",
    "TrainResult",
    "train",
    "evaluate",
    "calibrate_activation_ranges",
]

# Number of minibatches drawn for activation-range calibration.
CALIBRATION_BATCHES = 8


class SGDOptimizer:
    """Plain SGD with optional classical momentum ``v ← μv − ηg; w ← w + v``.

    The velocities live on the network, so successive steps keep momentum
    whichever optimizer instance applies them.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.0) -> None:
        if learning_rate <= 0:
            raise ArgumentError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.momentum = momentum

    def step(self, net: Network, gradients: Gradients) -> Network:
        if len(gradients) != len(net.layers):
            raise DimensionError(f"{len(gradients)} gradient sets for {len(net.layers)} layers")
        for index, (layer, grads) in enumerate(zip(net.layers, gradients)):
            params = layer.parameters()
            for name, grad in grads.items():
                param = params[name]
                if grad.shape != param.shape:
                    raise DimensionError(f"gradient {name} {grad.shape} does not match parameter {param.shape}")
                if self.momentum:
                    key = (index, name)
                    velocity = self.momentum * net.velocity.get(key, 0.0) - self.learning_rate * grad
                    net.velocity[key] = velocity
                    param += velocity
                else:
                    param -= self.learning_rate * grad
        return net


def sgd_step(
    net: Network,
    gradients: Gradients,
    cfg: TrainConfig,
    optimizer: Optional[SGDOptimizer] = None,
) -> Network:
    """Update the full-precision parameters in place; ``Q`` is left untouched."""
    optimizer = optimizer or SGDOptimizer(cfg.learning_rate, cfg.momentum)
    return optimizer.step(net, gradients)


@dataclass
class TrainResult:
    net: Network
    trace: TrainTrace


def calibrate_activation_ranges(net: Network, x: Tensor) -> Dict[str, float]:
    """Set ``r = 2^⌈log₂ max activation⌉`` for every activation-quantizing layer.

    One inference pass with float activations; ranges stay frozen afterwards.
    """
    ranges: Dict[str, float] = {}
    out = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        out, _ = layer.forward(out, training=False, quantize_activations=False)
        if not layer.quantizes_activations:
            continue
        peak = float(out.max()) if out.size else 0.0
        range_r = dynamic_range(out) if peak > 0.0 else 1.0
        assert layer.act_quant is not None
        layer.act_quant = layer.act_quant.model_copy(update={"range_r": range_r})
        ranges[layer.name] = range_r
        logger.debug("Calibrated %s activation range r=%g", layer.name, range_r)
    return ranges


def _needs_calibration(net: Network) -> bool:
    return any(
        layer.quantizes_activations and layer.act_quant is not None and layer.act_quant.range_r is None
        for layer in net.layers
    )


def _apply_kmeans_steps(net: Network, steps: int) -> None:
    for layer in net.weight_layers:
        if layer.qcfg is not None and layer.qcfg.steps != steps:
            layer.qcfg = layer.qcfg.model_copy(update={"steps": steps})


def train(
    net: Network,
    dataset: Dataset,
    cfg: TrainConfig,
    *,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    calibration: Optional[Dataset] = None,
) -> TrainResult:
    """Train *net* in place; the trace is deterministic given ``cfg.seed``.

    Unset activation ranges are calibrated once, before the first step, on
    *calibration* when given and otherwise on a seeded sample of
    ``CALIBRATION_BATCHES`` minibatches drawn from the training set.
    """
    n_samples = len(dataset)
    if n_samples == 0:
        raise ArgumentError("cannot train on an empty dataset")
    trace = TrainTrace(seed=cfg.seed)
    if cfg.epochs == 0:
        return TrainResult(net=net, trace=trace)

    rng = make_rng(cfg.seed)
    _apply_kmeans_steps(net, cfg.kmeans_steps)
    if _needs_calibration(net):
        if calibration is None:
            calibration = dataset.subset(rng.permutation(n_samples)[: cfg.batch_size * CALIBRATION_BATCHES])
        calibrate_activation_ranges(net, calibration.x)

    optimizer = SGDOptimizer(cfg.learning_rate, cfg.momentum)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_samples)
        batch_losses = []
        correct = 0
        for start in range(0, n_samples, cfg.batch_size):
            index = order[start : start + cfg.batch_size]
            if step % cfg.kmeans_interval == 0:
                net.refresh_quantization()
            logits, caches = net.forward(dataset.x[index], training=True)
            loss, loss_grad = softmax_cross_entropy(logits, dataset.y[index])
            optimizer.step(net, net.backward(loss_grad, caches))
            batch_losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == dataset.y[index]))
            step += 1
        record = EpochRecord(epoch=epoch, loss=float(np.mean(batch_losses)), accuracy=correct / n_samples)
        trace.epochs.append(record)
        logger.info("epoch %d loss=%.6f accuracy=%.4f", epoch, record.loss, record.accuracy)
        if on_epoch is not None:
            on_epoch(record)

    # Q must reflect the final accumulators for inference and serialization.
    net.refresh_quantization()
    return TrainResult(net=net, trace=trace)


def evaluate(net: Network, dataset: Dataset, batch_size: int = 256) -> Tuple[float, float]:
    """Return ``(mean loss, accuracy)`` of inference-mode forwards."""
    if len(dataset) == 0:
        raise ArgumentError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.x[start : start + batch_size]
        y = dataset.y[start : start + batch_size]
        logits, _ = net.forward(x, training=False)
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return total_loss / len(dataset), correct / len(dataset)
