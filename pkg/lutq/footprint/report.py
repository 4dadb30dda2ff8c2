"""Footprint reports combining memory and operation counts."""

from __future__ import annotations

import logging
from typing import Iterable, Optional

from lutq.data_models import ArchitectureSpec, FootprintReport, LayerFootprint, WeightQuantPlan
from lutq.footprint.memory import layer_buffer_bits, layer_param_bits
from lutq.inference.ops import count_ops, layer_plan

logger = logging.getLogger(__name__)

__all__ = ["build_report", "render_table"]


def build_report(
    arch: ArchitectureSpec,
    plan: Optional[WeightQuantPlan] = None,
    prune_ratio: float = 0.0,
    count_bn_ops: bool = False,
) -> FootprintReport:
    """Per-layer and total parameter bits, buffer bits, additions and multiplications.

    Parameter, addition and multiplication totals are sums over layers; the
    buffer total is the per-layer maximum.
    """
    ops = count_ops(arch, plan, prune_ratio, count_bn_ops)
    layers = []
    for spec, layer_ops in zip(arch.layers, ops.layers):
        layers.append(
            LayerFootprint(
                name=spec.name,
                kind=spec.kind,
                weight_quant=str(layer_plan(spec, plan)) if spec.has_weights else "-",
                param_bits=layer_param_bits(spec, plan),
                buffer_bits=layer_buffer_bits(arch, spec),
                additions=layer_ops.additions,
                multiplications=layer_ops.multiplications,
            )
        )
    report = FootprintReport(
        architecture=arch.name,
        plan=ops.plan,
        prune_ratio=prune_ratio,
        layers=layers,
        param_bits=sum(layer.param_bits for layer in layers),
        buffer_bits=max(layer.buffer_bits for layer in layers),
        additions=ops.additions,
        multiplications=ops.multiplications,
    )
    logger.info(
        "%s [%s]: params %.2f MB, buffer %.2f MB, %.2fM adds, %.2fM mults",
        report.architecture,
        report.plan,
        report.param_mb,
        report.buffer_mb,
        report.additions / 1e6,
        report.multiplications / 1e6,
    )
    return report


_HEADER = ("Net", "Weight Quant.", "Param. Memory (MB)", "Buffer Memory (MB)", "Add. (M)", "Mul. (M)")


def render_table(reports: Iterable[FootprintReport]) -> str:
    """Plain-text table, one row per report; MB are 2^20 bytes, ops in millions."""
    rows = [_HEADER]
    for report in reports:
        plan = report.plan if not report.prune_ratio else f"{report.plan} pruned {report.prune_ratio:.0%}"
        rows.append(
            (
                report.architecture,
                plan,
                f"{report.param_mb:.2f}",
                f"{report.buffer_mb:.2f}",
                f"{report.additions / 1e6:.2f}",
                f"{report.multiplications / 1e6:.2f}",
            )
        )
    widths = [max(len(row[col]) for row in rows) for col in range(len(_HEADER))]
    lines = []
    for index, row in enumerate(rows):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [cell.rjust(width) for cell, width in zip(row[2:], widths[2:])]
        lines.append("  ".join(cells))
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines)
