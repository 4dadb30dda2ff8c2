"""Sequential network container with quantized forward and STE backward."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from lutq.core.tensor import Rng, Tensor, rng_uniform
from lutq.data_models import ActQuantConfig, Activation, BatchNormMode, ConstraintKind, QuantizerConfig
from lutq.errors import ArgumentError, DimensionError, StateError
from lutq.nn.layers import AffineLayer, BatchNormLayer, Conv2DLayer, LayerCache, glorot_limit
from lutq.quantizers.dictionary import is_pow2_array

logger = logging.getLogger(__name__)

__all__ = [
    "Layer",
    "WeightLayer",
    "Network",
    "forward",
    "backward_ste",
    "build_mlp",
    "network_class",
]

WeightLayer = Union[AffineLayer, Conv2DLayer]
Layer = Union[AffineLayer, Conv2DLayer, BatchNormLayer]
Gradients = List[Dict[str, Tensor]]


@dataclass(eq=False)
class Network:
    layers: List[Layer] = field(default_factory=list)
    # momentum buffers keyed by (layer index, parameter name)
    velocity: Dict[Tuple[int, str], Tensor] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ArgumentError("a network needs at least one layer")

    @property
    def weight_layers(self) -> List[WeightLayer]:
        return [layer for layer in self.layers if not isinstance(layer, BatchNormLayer)]

    @property
    def quantized(self) -> bool:
        return any(layer.quantized for layer in self.weight_layers)

    def refresh_quantization(self) -> None:
        for layer in self.weight_layers:
            layer.refresh_quantization()
        logger.debug("Refreshed dictionaries of %d weight layers", len(self.weight_layers))

    def forward(
        self, x: Tensor, training: bool, quantize_activations: bool = True
    ) -> Tuple[Tensor, List[LayerCache]]:
        caches: List[LayerCache] = []
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out, cache = layer.forward(out, training, quantize_activations)
            caches.append(cache)
        return out, caches

    def backward(self, loss_grad: Tensor, caches: Optional[Sequence[LayerCache]]) -> Gradients:
        if not caches or len(caches) != len(self.layers):
            raise StateError("backward needs the intermediates of a forward pass over every layer")
        grads: Gradients = [{} for _ in self.layers]
        grad = loss_grad
        for index in range(len(self.layers) - 1, -1, -1):
            grad, grads[index] = self.layers[index].backward(grad, caches[index])
        return grads

    def predict(self, x: Tensor) -> np.ndarray:
        logits, _ = self.forward(x, training=False)
        return np.argmax(logits, axis=1)


def forward(net: Network, x_batch: Tensor, training: bool) -> Tuple[Tensor, List[LayerCache]]:
    """Run *net* on a minibatch; returns the logits and the cached intermediates."""
    return net.forward(x_batch, training)


def backward_ste(net: Network, loss_grad: Tensor, intermediates: Optional[Sequence[LayerCache]]) -> Gradients:
    """Gradients w.r.t. ``w_full``/``bias``/``gamma``/``beta`` per layer.

    Quantization is treated as the identity in the backward pass, so the
    gradient for ``w_full`` is exactly the gradient w.r.t. the look-up ``Q``.
    """
    return net.backward(loss_grad, intermediates)


def build_mlp(
    input_dim: int,
    hidden_units: Sequence[int],
    n_classes: int,
    rng: Rng,
    *,
    qcfg: Optional[QuantizerConfig] = None,
    batchnorm: Optional[BatchNormMode] = None,
    act_quant: Optional[ActQuantConfig] = None,
    batchnorm_output: bool = False,
) -> Network:
    """Affine (+BN) + ReLU hidden blocks and a softmax output layer.

    Every affine layer, first and last included, uses *qcfg*.  Weights are
    Glorot-uniform, biases zero.
    """
    if input_dim < 1 or n_classes < 2:
        raise DimensionError("an MLP needs at least one input and two classes")
    layers: List[Layer] = []
    fan_in = input_dim
    widths = list(hidden_units) + [n_classes]
    for index, fan_out in enumerate(widths):
        last = index == len(widths) - 1
        limit = glorot_limit(fan_in, fan_out)
        with_bn = batchnorm is not None and (not last or batchnorm_output)
        activation = Activation.SOFTMAX if last else Activation.RELU
        affine_activation = Activation.IDENTITY if with_bn else activation
        layers.append(
            AffineLayer(
                w_full=rng_uniform(rng, (fan_out, fan_in), -limit, limit),
                bias=np.zeros(fan_out),
                activation=affine_activation,
                qcfg=qcfg,
                act_quant=act_quant if affine_activation is Activation.RELU else None,
                name=f"fc{index + 1}",
            )
        )
        if with_bn:
            assert batchnorm is not None
            layers.append(
                BatchNormLayer.identity(
                    fan_out,
                    mode=batchnorm,
                    activation=activation,
                    act_quant=act_quant if not last else None,
                    name=f"bn{index + 1}",
                )
            )
        fan_in = fan_out
    net = Network(layers)
    net.refresh_quantization()
    return net


def _weights_multiplier_less(layer: WeightLayer) -> bool:
    cfg = layer.qcfg
    if cfg is None:
        return False
    if cfg.constraint in (ConstraintKind.POW2, ConstraintKind.POW2_FIXED):
        return True
    if cfg.constraint is ConstraintKind.FIXED:
        values = np.asarray(cfg.fixed_values, dtype=np.float64)
        return bool(np.all((values == 0.0) | is_pow2_array(values)))
    return False


def network_class(net: Network) -> str:
    """Name the multiplier profile of *net*.

    ``"fully multiplier-less"`` needs power-of-two (or binary/ternary) weights
    everywhere and multiplier-less batch normalization; with pow-2 weights but
    some traditional BN the network is ``"quasi multiplier-less"``.
    """
    if not all(_weights_multiplier_less(layer) for layer in net.weight_layers):
        return "unconstrained"
    bn_layers = [layer for layer in net.layers if isinstance(layer, BatchNormLayer)]
    if all(layer.mode is BatchNormMode.MULTIPLIER_LESS for layer in bn_layers):
        return "fully multiplier-less"
    return "quasi multiplier-less"
