"""Trainable layers with LUT-Q weights and straight-through gradients.

Weight layers keep a full-precision accumulator ``w_full`` that the optimizer
updates; when a quantizer is configured the forward pass only ever sees the
cached look-up ``Q`` of the last k-means refresh, and the backward pass hands
the gradient w.r.t. ``Q`` straight to ``w_full``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from lutq.core.tensor import Tensor
from lutq.data_models import ActQuantConfig, ActQuantScheme, Activation, BatchNormMode, QuantizerConfig
from lutq.errors import ArgumentError, DimensionError, StateError
from lutq.quantizers.dictionary import QuantizedWeight
from lutq.quantizers.fixed import quantize_activation_fp, quantize_activation_pow2, round_pow2_array
from lutq.quantizers.kmeans import lutq_quantize

__all__ = [
    "LayerCache",
    "AffineLayer",
    "Conv2DLayer",
    "BatchNormLayer",
    "bn_fold_scale",
]

Grads = Dict[str, Tensor]


@dataclass
class LayerCache:
    """Intermediates recorded by a forward pass for the matching backward pass."""

    training: bool
    values: Dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Activation + activation quantization
# ---------------------------------------------------------------------------


class _ActivationMixin:
    activation: Activation
    act_quant: Optional[ActQuantConfig]

    def _check_activation(self) -> None:
        if self.quantizes_activations and self.activation is not Activation.RELU:
            raise ArgumentError("activation quantization is only defined after a ReLU")

    @property
    def quantizes_activations(self) -> bool:
        return self.act_quant is not None and self.act_quant.scheme is not ActQuantScheme.NONE

    def apply_activation(self, z: Tensor, cache: LayerCache, quantize: bool = True) -> Tensor:
        # Softmax layers emit logits; the probabilities belong to the loss.
        if self.activation is not Activation.RELU:
            return z
        out = np.maximum(z, 0.0)
        mask = z > 0.0
        if quantize and self.quantizes_activations:
            cfg = self.act_quant
            assert cfg is not None
            if cfg.range_r is None:
                raise StateError("activation range is not calibrated")
            # clipped straight-through: no gradient above the range
            mask = mask & (out <= cfg.range_r)
            if cfg.scheme is ActQuantScheme.FP:
                out = quantize_activation_fp(out, cfg.n_bits, cfg.range_r)
            else:
                out = quantize_activation_pow2(out, cfg.n_bits, cfg.range_r)
        cache.values["act_mask"] = mask
        return out

    def _activation_backward(self, grad: Tensor, cache: LayerCache) -> Tensor:
        if self.activation is not Activation.RELU:
            return grad
        return grad * cache.values["act_mask"]


# ---------------------------------------------------------------------------
# Weight layers
# ---------------------------------------------------------------------------


class _QuantizedWeightMixin:
    w_full: Tensor
    qcfg: Optional[QuantizerConfig]
    qweight: Optional[QuantizedWeight]

    @property
    def quantized(self) -> bool:
        return self.qcfg is not None

    def refresh_quantization(self) -> None:
        """Refresh ``(d, A)`` from the current accumulator with ``M`` k-means steps."""
        if self.qcfg is None:
            return
        state = (self.qweight.dictionary, self.qweight.assignment) if self.qweight is not None else None
        self.qweight = lutq_quantize(self.w_full, self.qcfg, state)

    @property
    def effective_weight(self) -> Tensor:
        """``Q`` for quantized layers, ``w_full`` otherwise."""
        if self.qcfg is None:
            return self.w_full
        if self.qweight is None:
            raise StateError("quantized layer has no dictionary/assignment yet; refresh first")
        return self.qweight.q


@dataclass(eq=False)
class AffineLayer(_QuantizedWeightMixin, _ActivationMixin):
    """``y = Φ(Qx + b)``; inputs with more than two axes are flattened per sample."""

    w_full: Tensor
    bias: Tensor
    activation: Activation = Activation.IDENTITY
    qcfg: Optional[QuantizerConfig] = None
    qweight: Optional[QuantizedWeight] = None
    act_quant: Optional[ActQuantConfig] = None
    name: str = "affine"

    def __post_init__(self) -> None:
        self.w_full = np.array(self.w_full, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.w_full.ndim != 2 or self.bias.shape != (self.w_full.shape[0],):
            raise DimensionError(f"affine weight {self.w_full.shape} and bias {self.bias.shape} disagree")
        self._check_activation()

    @property
    def in_features(self) -> int:
        return int(self.w_full.shape[1])

    @property
    def out_features(self) -> int:
        return int(self.w_full.shape[0])

    def parameters(self) -> Dict[str, Tensor]:
        return {"w_full": self.w_full, "bias": self.bias}

    def forward(self, x: Tensor, training: bool, quantize_activations: bool = True) -> Tuple[Tensor, LayerCache]:
        batch_shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise DimensionError(f"{self.name}: expected {self.in_features} inputs, got {flat.shape[1]}")
        weight = self.effective_weight
        cache = LayerCache(training, {"x": flat, "x_shape": batch_shape, "weight": weight})
        z = flat @ weight.T + self.bias
        return self.apply_activation(z, cache, quantize_activations), cache

    def backward(self, grad: Tensor, cache: LayerCache) -> Tuple[Tensor, Grads]:
        dz = self._activation_backward(grad, cache)
        x = cache.values["x"]
        # STE: the gradient w.r.t. Q is applied to the accumulator unchanged
        grads = {"w_full": dz.T @ x, "bias": dz.sum(axis=0)}
        dx = (dz @ cache.values["weight"]).reshape(cache.values["x_shape"])
        return dx, grads


def _conv_windows(x: Tensor, fh: int, fw: int, stride: int) -> Tensor:
    windows = np.lib.stride_tricks.sliding_window_view(x, (fh, fw), axis=(2, 3))
    # (B, C, Ho, Wo, Fh, Fw) -> (B, Ho, Wo, C, Fh, Fw)
    return windows[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)


@dataclass(eq=False)
class Conv2DLayer(_QuantizedWeightMixin, _ActivationMixin):
    """2-D convolution over ``(B, C, H, W)`` inputs with an ``O×C×Fh×Fw`` weight."""

    w_full: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    activation: Activation = Activation.IDENTITY
    qcfg: Optional[QuantizerConfig] = None
    qweight: Optional[QuantizedWeight] = None
    act_quant: Optional[ActQuantConfig] = None
    name: str = "conv2d"

    def __post_init__(self) -> None:
        self.w_full = np.array(self.w_full, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.w_full.ndim != 4 or self.bias.shape != (self.w_full.shape[0],):
            raise DimensionError(f"conv weight {self.w_full.shape} and bias {self.bias.shape} disagree")
        if self.stride < 1 or self.padding < 0:
            raise ArgumentError("stride must be >= 1 and padding >= 0")
        self._check_activation()

    def parameters(self) -> Dict[str, Tensor]:
        return {"w_full": self.w_full, "bias": self.bias}

    def forward(self, x: Tensor, training: bool, quantize_activations: bool = True) -> Tuple[Tensor, LayerCache]:
        out_c, in_c, fh, fw = self.w_full.shape
        if x.ndim != 4 or x.shape[1] != in_c:
            raise DimensionError(f"{self.name}: expected (B, {in_c}, H, W) input, got {x.shape}")
        p = self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        if padded.shape[2] < fh or padded.shape[3] < fw:
            raise DimensionError(f"{self.name}: input map {x.shape[2:]} smaller than filter {(fh, fw)}")
        windows = _conv_windows(padded, fh, fw, self.stride)
        batch, out_h, out_w = windows.shape[:3]
        cols = windows.reshape(batch * out_h * out_w, in_c * fh * fw)
        weight = self.effective_weight
        z = cols @ weight.reshape(out_c, -1).T + self.bias
        z = z.reshape(batch, out_h, out_w, out_c).transpose(0, 3, 1, 2)
        cache = LayerCache(
            training,
            {"cols": cols, "padded_shape": padded.shape, "weight": weight, "out_hw": (out_h, out_w)},
        )
        return self.apply_activation(z, cache, quantize_activations), cache

    def backward(self, grad: Tensor, cache: LayerCache) -> Tuple[Tensor, Grads]:
        dz = self._activation_backward(grad, cache)
        out_c, in_c, fh, fw = self.w_full.shape
        out_h, out_w = cache.values["out_hw"]
        batch = dz.shape[0]
        dz_mat = dz.transpose(0, 2, 3, 1).reshape(-1, out_c)
        weight = cache.values["weight"]
        grads = {
            "w_full": (dz_mat.T @ cache.values["cols"]).reshape(self.w_full.shape),
            "bias": dz_mat.sum(axis=0),
        }
        dcols = (dz_mat @ weight.reshape(out_c, -1)).reshape(batch, out_h, out_w, in_c, fh, fw)
        dpadded = np.zeros(cache.values["padded_shape"], dtype=np.float64)
        s = self.stride
        for i in range(fh):
            for j in range(fw):
                dpadded[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        p = self.padding
        dx = dpadded[:, :, p : dpadded.shape[2] - p, p : dpadded.shape[3] - p] if p else dpadded
        return dx, grads


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def _channel_axes(x: Tensor) -> Tuple[int, ...]:
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _per_channel(v: Tensor, ndim: int) -> Tensor:
    return v if ndim == 2 else v[None, :, None, None]


@dataclass(eq=False)
class BatchNormLayer(_ActivationMixin):
    """Batch normalization over features (2-D input) or channels (4-D input).

    In ``multiplierless`` mode the forward pass uses ``γ̂ = â·√(VAR+ε)`` where
    ``â`` is the power-of-two rounding of the folded scale computed from the
    running variance; the backward pass updates the full-precision ``γ``.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    epsilon: float = 1e-5
    momentum: float = 0.9
    mode: BatchNormMode = BatchNormMode.TRADITIONAL
    activation: Activation = Activation.IDENTITY
    act_quant: Optional[ActQuantConfig] = None
    name: str = "batchnorm"

    def __post_init__(self) -> None:
        for attr in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, attr, np.array(getattr(self, attr), dtype=np.float64))
        shapes = {self.gamma.shape, self.beta.shape, self.running_mean.shape, self.running_var.shape}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise DimensionError("batch-norm parameter vectors must share one 1-D shape")
        if self.epsilon <= 0:
            raise ArgumentError("epsilon must be positive")
        self._check_activation()

    @classmethod
    def identity(cls, features: int, **kwargs: Any) -> "BatchNormLayer":
        return cls(
            gamma=np.ones(features),
            beta=np.zeros(features),
            running_mean=np.zeros(features),
            running_var=np.ones(features),
            **kwargs,
        )

    @property
    def features(self) -> int:
        return int(self.gamma.size)

    def parameters(self) -> Dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def effective_gamma(self) -> Tensor:
        """``γ`` in traditional mode, ``γ̂ = â·√(VAR+ε)`` in multiplier-less mode."""
        if self.mode is BatchNormMode.TRADITIONAL:
            return self.gamma
        std = np.sqrt(self.running_var + self.epsilon)
        return _pow2_or_zero(self.gamma / std) * std

    def forward(self, x: Tensor, training: bool, quantize_activations: bool = True) -> Tuple[Tensor, LayerCache]:
        if x.ndim not in (2, 4) or x.shape[1] != self.features:
            raise DimensionError(f"{self.name}: expected {self.features} features/channels, got {x.shape}")
        gamma_hat = self.effective_gamma()
        cache = LayerCache(training, {"gamma_hat": gamma_hat, "ndim": x.ndim})
        if training:
            axes = _channel_axes(x)
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            x_hat = (x - _per_channel(mean, x.ndim)) * _per_channel(inv_std, x.ndim)
            z = _per_channel(gamma_hat, x.ndim) * x_hat + _per_channel(self.beta, x.ndim)
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
            cache.values.update(x_hat=x_hat, inv_std=inv_std)
        else:
            scale, offset = bn_fold_scale(self)
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            z = _per_channel(scale, x.ndim) * x + _per_channel(offset, x.ndim)
            x_hat = (x - _per_channel(self.running_mean, x.ndim)) * _per_channel(inv_std, x.ndim)
            cache.values.update(x_hat=x_hat, inv_std=inv_std, scale=scale)
        return self.apply_activation(z, cache, quantize_activations), cache

    def backward(self, grad: Tensor, cache: LayerCache) -> Tuple[Tensor, Grads]:
        dz = self._activation_backward(grad, cache)
        ndim = cache.values["ndim"]
        axes = (0,) if ndim == 2 else (0, 2, 3)
        x_hat = cache.values["x_hat"]
        # STE through the pow-2 rounding: dL/dγ̂ updates γ
        grads = {"gamma": (dz * x_hat).sum(axis=axes), "beta": dz.sum(axis=axes)}
        if not cache.training:
            return dz * _per_channel(cache.values["scale"], ndim), grads
        count = dz.size // self.features
        dx_hat = dz * _per_channel(cache.values["gamma_hat"], ndim)
        inv_std = _per_channel(cache.values["inv_std"], ndim)
        sum_dx_hat = _per_channel(dx_hat.sum(axis=axes), ndim)
        sum_dx_hat_x_hat = _per_channel((dx_hat * x_hat).sum(axis=axes), ndim)
        dx = inv_std / count * (count * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x_hat)
        return dx, grads


def _pow2_or_zero(values: Tensor) -> Tensor:
    nonzero = values != 0.0
    out = np.zeros_like(values)
    out[nonzero] = round_pow2_array(values[nonzero])
    return out


def bn_fold_scale(layer: BatchNormLayer) -> Tuple[Tensor, Tensor]:
    """Fold inference batch-norm into ``y = a·x + b``.

    In multiplier-less mode ``a`` is replaced by its power-of-two rounding
    ``â`` and the offset uses the same scale, ``b = β − â·E[x]``, so the
    folded layer reproduces the training-time forward exactly.  A zero ``γ``
    folds to ``â = 0``, leaving the constant ``β`` on that channel.
    """
    inv_std = 1.0 / np.sqrt(layer.running_var + layer.epsilon)
    scale = layer.gamma * inv_std
    if layer.mode is BatchNormMode.MULTIPLIER_LESS:
        scale = _pow2_or_zero(scale)
    offset = layer.beta - scale * layer.running_mean
    return scale, offset


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))
