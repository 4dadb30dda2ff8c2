"""Whole-network inference through a chosen affine kernel."""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Optional

import numpy as np

from lutq.core.tensor import Tensor
from lutq.errors import ContractError
from lutq.inference.fixed_point import FixedPointFormat, from_fixed, to_fixed
from lutq.inference.kernels import OpCounter, grouped_affine, naive_affine, shift_affine
from lutq.nn.layers import AffineLayer, BatchNormLayer, LayerCache
from lutq.nn.network import Network

logger = logging.getLogger(__name__)

__all__ = ["Kernel", "input_exponent", "run_network"]


class Kernel(str, Enum):
    NAIVE = "naive"
    GROUPED = "grouped"
    SHIFT = "shift"


def input_exponent(x: Tensor, fmt: FixedPointFormat) -> int:
    """Shared exponent giving ``x`` half the mantissa bits; the rest is accumulator headroom."""
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        return 0
    _, exponent = math.frexp(peak)
    return exponent - fmt.mantissa_bits // 2


def _affine_rows(layer: AffineLayer, x: Tensor, kernel: Kernel, fmt: FixedPointFormat, counter: OpCounter) -> Tensor:
    flat = x.reshape(x.shape[0], -1)
    if kernel is Kernel.NAIVE:
        return np.stack([naive_affine(layer.effective_weight, row, layer.bias, counter) for row in flat])
    if layer.qweight is None:
        raise ContractError(f"{kernel.value} kernel needs quantized weights; layer {layer.name!r} is float")
    if kernel is Kernel.GROUPED:
        return np.stack([grouped_affine(layer.qweight, row, layer.bias, counter) for row in flat])
    rows = []
    for row in flat:
        exponent = input_exponent(row, fmt)
        mantissas = shift_affine(layer.qweight, to_fixed(row, exponent, fmt), layer.bias, exponent, fmt, counter)
        rows.append(from_fixed(mantissas, exponent))
    return np.stack(rows)


def run_network(
    net: Network,
    x: Tensor,
    kernel: Kernel = Kernel.NAIVE,
    *,
    fmt: Optional[FixedPointFormat] = None,
    counter: Optional[OpCounter] = None,
) -> Tensor:
    """Inference-mode logits; affine layers execute on *kernel*, BN uses its folded form."""
    fmt = fmt or FixedPointFormat.from_settings()
    counter = counter if counter is not None else OpCounter()
    out = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            z = _affine_rows(layer, out, kernel, fmt, counter)
            out = layer.apply_activation(z, LayerCache(training=False))
        elif isinstance(layer, BatchNormLayer):
            out, _ = layer.forward(out, training=False)
        elif kernel is Kernel.NAIVE:
            out, _ = layer.forward(out, training=False)
            counter.multiplications += layer.w_full[0].size * out.size
            counter.additions += layer.w_full[0].size * out.size
        else:
            raise ContractError(f"{kernel.value} kernel executes affine layers only; {layer.name!r} is a convolution")
    logger.debug("%s inference: %s", kernel.value, counter.as_dict())
    return out
