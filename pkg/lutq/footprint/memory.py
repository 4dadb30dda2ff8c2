"""Parameter and activation-buffer memory of an architecture.

Parameters: float weights cost 32 bits each; a LUT-Q layer stores its
dictionary in float plus ``⌈log₂K⌉`` bits per weight; an ``fp:n`` layer ``n``
bits per weight.  Biases and batch-norm ``γ``/``β`` stay at 32 bits; running
statistics are not counted.

Buffer: layers run one after another from a buffer holding one layer's input
and output activations, so the buffer is the maximum of that sum over the
conv/affine layers.
"""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

from lutq.data_models import ArchitectureSpec, LayerKind, LayerSpec, WeightQuantPlan, WeightQuantScheme
from lutq.inference.ops import layer_plan

__all__ = [
    "FLOAT_BITS",
    "index_bits",
    "lutq_weight_bits",
    "layer_param_bits",
    "param_memory",
    "layer_buffer_bits",
    "buffer_memory",
]

FLOAT_BITS = 32


def index_bits(k: int) -> int:
    """``⌈log₂K⌉``; a single-entry dictionary needs no index bits."""
    return 0 if k <= 1 else math.ceil(math.log2(k))


def lutq_weight_bits(n_weights: int, k: int) -> int:
    """``K·32 + N·⌈log₂K⌉``."""
    return k * FLOAT_BITS + n_weights * index_bits(k)


def layer_param_bits(layer: LayerSpec, plan: Optional[WeightQuantPlan] = None) -> int:
    if layer.kind is LayerKind.BN:
        return 2 * layer.out_maps * FLOAT_BITS
    if not layer.has_weights:
        return 0
    effective = layer_plan(layer, plan)
    n_weights = layer.weight_count
    if effective.scheme is WeightQuantScheme.LUTQ:
        bits = lutq_weight_bits(n_weights, int(effective.k or 1))
    elif effective.scheme is WeightQuantScheme.FP:
        bits = n_weights * int(effective.bits or FLOAT_BITS)
    else:
        bits = n_weights * FLOAT_BITS
    if layer.bias:
        bits += layer.out_maps * FLOAT_BITS
    return bits


def param_memory(arch: ArchitectureSpec, plan: Optional[WeightQuantPlan] = None) -> Tuple[List[int], int]:
    """Per-layer parameter bits and their exact total."""
    per_layer = [layer_param_bits(layer, plan) for layer in arch.layers]
    return per_layer, sum(per_layer)


def layer_buffer_bits(arch: ArchitectureSpec, layer: LayerSpec) -> int:
    if not layer.has_weights:
        return 0
    bits = layer.activation_bits or arch.activation_bits
    return (layer.input_activations + layer.output_activations) * bits


def buffer_memory(arch: ArchitectureSpec) -> int:
    return max(layer_buffer_bits(arch, layer) for layer in arch.layers)
