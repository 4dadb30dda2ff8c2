"""LUT-Q dictionary/assignment solver.

One k-means step is an assignment pass (each weight to its nearest
dictionary value, ties to the lowest index) followed by a centroid pass
(each value to the mean of its weights; empty clusters keep their value).
Constrained variants post-process the centroid pass:

* ``pow2``     every entry is rounded with :func:`round_pow2`
* pruning      ``d_1 = 0`` is never updated and owns exactly ``⌈p·N⌉``
               smallest-magnitude weights
* ``fixed`` / ``uniform`` / ``pow2_fixed``  the centroid pass is skipped entirely
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Tuple

import numpy as np

from lutq.core.tensor import Tensor, check_finite
from lutq.data_models import ConstraintKind, QuantizerConfig
from lutq.errors import ArgumentError, ContractError, DimensionError
from lutq.quantizers.dictionary import AssignmentTensor, Dictionary, QuantizedWeight, quantization_error
from lutq.quantizers.fixed import dynamic_range, pow2_fixed_values, round_pow2_array, uniform_values

logger = logging.getLogger(__name__)

__all__ = [
    "nearest_assignment",
    "initial_dictionary",
    "kmeans_step",
    "kmeans_step_fixed",
    "kmeans_prune",
    "pruned_count",
    "lutq_quantize",
]

QuantState = Tuple[Dictionary, AssignmentTensor]

# Upper bound on the (weights x centroids) distance block held in memory.
_DISTANCE_BLOCK = 1 << 22


def nearest_assignment(w_flat: Tensor, values: Tensor) -> np.ndarray:
    """Return 0-based nearest-value labels; ``argmin`` breaks ties to the lowest index."""
    k = values.size
    labels = np.empty(w_flat.size, dtype=np.int64)
    rows = max(1, _DISTANCE_BLOCK // max(k, 1))
    for start in range(0, w_flat.size, rows):
        block = w_flat[start : start + rows]
        labels[start : start + rows] = np.argmin(np.abs(block[:, None] - values[None, :]), axis=1)
    return labels


def _centroids(w_flat: Tensor, labels: np.ndarray, previous: Tensor) -> Tensor:
    k = previous.size
    sums = np.bincount(labels, weights=w_flat, minlength=k)
    counts = np.bincount(labels, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    return np.where(counts > 0, means, previous)


def _round_centroids(values: Tensor) -> Tensor:
    if np.any(values == 0.0):
        raise ContractError("power-of-two dictionary produced a zero centroid; use pruning to pin zero")
    return round_pow2_array(values)


def _lloyd(
    w_flat: Tensor,
    centroids: Tensor,
    *,
    pow2: bool,
    iterations: int,
    until_stable: bool,
) -> Tuple[Tensor, np.ndarray]:
    labels: Optional[np.ndarray] = None
    for _ in range(iterations):
        new_labels = nearest_assignment(w_flat, centroids)
        if until_stable and labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = _centroids(w_flat, labels, centroids)
        if pow2:
            centroids = _round_centroids(centroids)
    if labels is None:
        labels = nearest_assignment(w_flat, centroids)
    return centroids, labels


def _segment_cost(s1: Tensor, s2: Tensor, lo, hi):
    n = hi - lo
    sums = s1[hi] - s1[lo]
    return (s2[hi] - s2[lo]) - sums * sums / n


def _refine_contiguous(flat: Tensor, values: Tensor, labels: np.ndarray, passes: int) -> Tensor:
    """Re-split every pair of neighbouring clusters optimally over the sorted weights.

    In one dimension an optimal partition is contiguous in sorted order, so for
    two clusters a single pass reaches the global optimum.  Empty clusters keep
    their value.
    """
    counts = np.bincount(labels, minlength=values.size)
    live = np.flatnonzero(counts)
    if live.size < 2:
        return values
    live = live[np.argsort(values[live], kind="stable")]
    xs = np.sort(flat, kind="stable")
    s1 = np.concatenate([[0.0], np.cumsum(xs)])
    s2 = np.concatenate([[0.0], np.cumsum(xs * xs)])
    bounds = np.concatenate([[0], np.cumsum(counts[live])])
    for _ in range(passes):
        moved = False
        for m in range(1, live.size):
            lo, hi = int(bounds[m - 1]), int(bounds[m + 1])
            splits = np.arange(lo + 1, hi)
            total = _segment_cost(s1, s2, lo, splits) + _segment_cost(s1, s2, splits, hi)
            best = int(np.argmin(total))
            current = int(bounds[m]) - lo - 1
            if best != current and total[best] < total[current]:
                bounds[m] = splits[best]
                moved = True
        if not moved:
            break
    refined = values.copy()
    refined[live] = (s1[bounds[1:]] - s1[bounds[:-1]]) / np.diff(bounds)
    return refined


def _squared_error(flat: Tensor, values: Tensor, labels: np.ndarray) -> float:
    return float(np.sum((flat - values[labels]) ** 2))


def _converge(flat: Tensor, start: Tensor, max_iterations: int) -> Tuple[Tensor, np.ndarray]:
    """Lloyd iterations from *start*; a contiguous re-split of the result is
    kept only when it ends strictly below the plain Lloyd error.
    """
    values, labels = _lloyd(flat, start, pow2=False, iterations=max_iterations, until_stable=True)
    refined = _refine_contiguous(flat, values, labels, passes=max_iterations)
    if np.array_equal(refined, values):
        return values, labels
    r_values, r_labels = _lloyd(flat, refined, pow2=False, iterations=max_iterations, until_stable=True)
    if _squared_error(flat, r_values, r_labels) < _squared_error(flat, values, labels):
        logger.debug("contiguous re-split lowered the k=%d clustering error", values.size)
        return r_values, r_labels
    return values, labels


def _flat(w: Tensor) -> Tensor:
    w = np.asarray(w, dtype=np.float64)
    check_finite(w, "weights")
    return w.reshape(-1)


def initial_dictionary(w: Tensor, k: int, *, pow2: bool = False, max_iterations: int = 100) -> QuantState:
    """Standard initialisation: ``k`` values spaced linearly on ``[min W, max W]``,
    refined by k-means until no assignment changes or *max_iterations* passes,
    then by an optimal re-split of neighbouring clusters when that lowers the error.
    """
    flat = _flat(w)
    if k < 1 or k > flat.size:
        raise ArgumentError(f"dictionary size {k} must lie in 1..{flat.size}")
    start = np.linspace(flat.min(), flat.max(), k)
    values, labels = _converge(flat, start, max_iterations)
    kind = ConstraintKind.FREE
    if pow2:
        values = _round_centroids(values)
        labels = nearest_assignment(flat, values)
        kind = ConstraintKind.POW2
    dictionary = Dictionary(values=values, kind=kind)
    return dictionary, AssignmentTensor(labels.reshape(np.shape(w)) + 1)


def kmeans_step(w: Tensor, dictionary: Dictionary, assignment: AssignmentTensor) -> QuantState:
    """One assignment pass plus one centroid pass under the dictionary's constraint."""
    flat = _flat(w)
    if assignment.shape != np.shape(w):
        raise DimensionError(f"assignment shape {assignment.shape} differs from weight shape {np.shape(w)}")
    if dictionary.kind not in (ConstraintKind.FREE, ConstraintKind.POW2):
        raise ArgumentError(f"kmeans_step cannot update a {dictionary.kind.value} dictionary")
    if dictionary.size > flat.size:
        raise ArgumentError(f"dictionary size {dictionary.size} exceeds weight count {flat.size}")
    if dictionary.zero_pinned:
        return kmeans_prune(
            w,
            dictionary.size,
            float(dictionary.prune_ratio or 0.0),
            pow2=dictionary.kind is ConstraintKind.POW2,
            dictionary=dictionary,
            steps=1,
        )
    values, labels = _lloyd(
        flat,
        dictionary.values,
        pow2=dictionary.kind is ConstraintKind.POW2,
        iterations=1,
        until_stable=False,
    )
    return dictionary.with_values(values), AssignmentTensor(labels.reshape(np.shape(w)) + 1)


def kmeans_step_fixed(w: Tensor, dictionary: Dictionary) -> AssignmentTensor:
    """Nearest-value assignment against a dictionary that is never updated."""
    flat = _flat(w)
    if dictionary.kind not in (ConstraintKind.FIXED, ConstraintKind.UNIFORM, ConstraintKind.POW2_FIXED):
        raise ArgumentError(f"kmeans_step_fixed expects a fixed dictionary, got {dictionary.kind.value}")
    if dictionary.size < 1:
        raise ArgumentError("cannot assign against an empty dictionary")
    labels = nearest_assignment(flat, dictionary.values)
    return AssignmentTensor(labels.reshape(np.shape(w)) + 1)


def pruned_count(ratio: float, n: int) -> int:
    """``⌈p·N⌉`` with the product rounded first so 0.3·10 counts 3, not 4."""
    return int(math.ceil(round(ratio * n, 9)))


def kmeans_prune(
    w: Tensor,
    k: int,
    ratio: float,
    *,
    pow2: bool = False,
    dictionary: Optional[Dictionary] = None,
    steps: Optional[int] = None,
    max_iterations: int = 100,
) -> QuantState:
    """Pruned LUT-Q: the ``⌈p·N⌉`` smallest magnitudes go to ``d_1 = 0``,
    the survivors are clustered over ``d_2..d_K``.

    The pruned set is re-selected from the current magnitudes on every call
    (ties broken by position).  Starting from *dictionary* the survivors get
    *steps* k-means steps; without one they are initialised and iterated to
    convergence.
    """
    if not 0.0 <= ratio < 1.0:
        raise ArgumentError(f"pruning ratio must lie in [0, 1), got {ratio}")
    if k < 2:
        raise ArgumentError(f"pruning needs k >= 2, got {k}")
    flat = _flat(w)
    n_zero = pruned_count(ratio, flat.size)
    order = np.argsort(np.abs(flat), kind="stable")
    survivors = np.sort(order[n_zero:])
    if survivors.size < k - 1:
        raise ArgumentError(f"{survivors.size} surviving weights cannot fill {k - 1} non-zero entries")

    kept = flat[survivors]
    if dictionary is not None:
        if dictionary.size != k:
            raise ArgumentError(f"state dictionary has {dictionary.size} entries, expected {k}")
        values, labels = _lloyd(
            kept, dictionary.values[1:], pow2=pow2, iterations=steps or 1, until_stable=False
        )
    else:
        start = np.linspace(kept.min(), kept.max(), k - 1)
        values, labels = _converge(kept, start, max_iterations)
        if pow2:
            values = _round_centroids(values)
            labels = nearest_assignment(kept, values)
        if steps:
            values, labels = _lloyd(kept, values, pow2=pow2, iterations=steps, until_stable=False)

    indices = np.ones(flat.size, dtype=np.int64)
    indices[survivors] = labels + 2
    result = Dictionary(
        values=np.concatenate([[0.0], values]),
        kind=ConstraintKind.POW2 if pow2 else ConstraintKind.FREE,
        prune_ratio=ratio,
    )
    return result, AssignmentTensor(indices.reshape(np.shape(w)))


def _fixed_dictionary(w: Tensor, cfg: QuantizerConfig) -> Dictionary:
    if cfg.constraint is ConstraintKind.FIXED:
        return Dictionary(values=np.asarray(cfg.fixed_values, dtype=np.float64), kind=ConstraintKind.FIXED)
    n_bits = int(cfg.n_bits or 0)
    if cfg.constraint is ConstraintKind.POW2_FIXED:
        top = math.frexp(dynamic_range(w))[1] - 1
        return Dictionary(values=pow2_fixed_values(n_bits, top), kind=ConstraintKind.POW2_FIXED)
    delta = cfg.delta if cfg.delta is not None else dynamic_range(w) / 2 ** (n_bits - 1)
    return Dictionary(values=uniform_values(n_bits, delta), kind=ConstraintKind.UNIFORM)


def lutq_quantize(w: Tensor, cfg: QuantizerConfig, state: Optional[QuantState] = None) -> QuantizedWeight:
    """Compute ``LUTQ(W)``: ``cfg.steps`` k-means steps from *state*, or from the
    standard initialisation when no state is given.
    """
    pow2 = cfg.constraint is ConstraintKind.POW2

    if not cfg.learns_dictionary:
        dictionary = _fixed_dictionary(w, cfg)
        result = QuantizedWeight.build(dictionary, kmeans_step_fixed(w, dictionary))
    elif cfg.zero_pinned:
        dictionary, assignment = kmeans_prune(
            w,
            cfg.size,
            float(cfg.prune_ratio or 0.0),
            pow2=pow2,
            dictionary=state[0] if state is not None else None,
            steps=cfg.steps if state is not None else None,
            max_iterations=cfg.max_init_iterations,
        )
        result = QuantizedWeight.build(dictionary, assignment)
    else:
        if state is None:
            dictionary, assignment = initial_dictionary(
                w, cfg.size, pow2=pow2, max_iterations=cfg.max_init_iterations
            )
        else:
            dictionary, assignment = state
            if dictionary.size != cfg.size:
                raise ArgumentError(f"state dictionary has {dictionary.size} entries, expected {cfg.size}")
        for _ in range(cfg.steps):
            dictionary, assignment = kmeans_step(w, dictionary, assignment)
        result = QuantizedWeight.build(dictionary, assignment)

    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "lutq_quantize k=%d constraint=%s error=%.6g",
            result.k,
            cfg.constraint.value,
            quantization_error(w, result.q),
        )
    return result
