"""Analytic operation counts of an architecture under a weight plan.

Conventions:

* conv/affine layers cost one addition per multiply-accumulate (the bias
  starts the accumulator); a float layer needs ``O·S·I·F`` multiplications,
  a LUT-Q layer ``O·S·min(K, I·F)``;
* pruning removes ``⌈p·N⌉`` weights per layer, each saving ``S`` additions;
  with LUT-Q the zero group also costs no multiplication;
* residual ``add`` layers cost one addition per output element, average
  pooling one per input element, max pooling nothing;
* batch normalization and activations are only counted on request.
"""

from __future__ import annotations

import logging
from typing import Optional

from lutq.data_models import (
    ArchitectureSpec,
    BatchNormMode,
    LayerKind,
    LayerOps,
    LayerSpec,
    OpsReport,
    PoolOp,
    WeightQuantPlan,
    WeightQuantScheme,
)
from lutq.errors import ArgumentError
from lutq.quantizers.kmeans import pruned_count

logger = logging.getLogger(__name__)

__all__ = ["layer_plan", "layer_ops", "count_ops"]


def layer_plan(layer: LayerSpec, plan: Optional[WeightQuantPlan]) -> WeightQuantPlan:
    """A layer's own ``weight_quant`` wins over the architecture-wide *plan*."""
    if layer.weight_quant is not None:
        return layer.weight_quant
    return plan if plan is not None else WeightQuantPlan()


def layer_ops(
    layer: LayerSpec,
    plan: Optional[WeightQuantPlan] = None,
    prune_ratio: float = 0.0,
    count_bn_ops: bool = False,
) -> LayerOps:
    outputs = layer.output_activations
    additions = multiplications = 0

    if layer.has_weights:
        fan_in = layer.in_maps * layer.filter_elements
        macs = outputs * fan_in
        skipped = layer.map_elements * pruned_count(prune_ratio, layer.weight_count) if prune_ratio else 0
        additions = macs - skipped
        effective = layer_plan(layer, plan)
        if effective.scheme is WeightQuantScheme.LUTQ:
            groups = int(effective.k or 0) - (1 if prune_ratio else 0)
            multiplications = outputs * min(max(groups, 0), fan_in)
        else:
            multiplications = macs - skipped
    elif layer.kind is LayerKind.ADD:
        additions = outputs
    elif layer.kind is LayerKind.POOL and layer.pool_op is PoolOp.AVG:
        additions = outputs * layer.filter_elements
    elif layer.kind is LayerKind.BN and count_bn_ops:
        if layer.bn_mode is BatchNormMode.TRADITIONAL:
            multiplications = 2 * outputs
            additions = 2 * outputs
        else:
            additions = outputs

    return LayerOps(name=layer.name, kind=layer.kind, additions=additions, multiplications=multiplications)


def count_ops(
    arch: ArchitectureSpec,
    plan: Optional[WeightQuantPlan] = None,
    prune_ratio: float = 0.0,
    count_bn_ops: bool = False,
) -> OpsReport:
    """Per-layer and total additions/multiplications; totals are exact integer sums."""
    if not 0.0 <= prune_ratio < 1.0:
        raise ArgumentError(f"pruning ratio must lie in [0, 1), got {prune_ratio}")
    layers = [layer_ops(layer, plan, prune_ratio, count_bn_ops) for layer in arch.layers]
    report = OpsReport(
        architecture=arch.name,
        plan=str(plan or WeightQuantPlan()),
        prune_ratio=prune_ratio,
        count_bn_ops=count_bn_ops,
        layers=layers,
        additions=sum(layer.additions for layer in layers),
        multiplications=sum(layer.multiplications for layer in layers),
    )
    logger.debug(
        "%s under %s: %d additions, %d multiplications",
        arch.name,
        report.plan,
        report.additions,
        report.multiplications,
    )
    return report
