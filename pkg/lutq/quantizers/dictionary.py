"""Dictionary / assignment representation of a LUT-Q quantized weight.

A quantized weight is stored as a short value dictionary ``d`` plus an
integer assignment tensor ``A`` (1-based, same shape as the weight) and is
reconstructed by the table look-up ``Q = d[A]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from lutq.core.tensor import IndexTensor, Tensor, check_finite
from lutq.data_models import ConstraintKind
from lutq.errors import ArgumentError, AssignmentIndexError, DimensionError

__all__ = [
    "Dictionary",
    "AssignmentTensor",
    "QuantizedWeight",
    "lookup",
    "quantization_error",
    "is_pow2_array",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def is_pow2_array(values: np.ndarray) -> np.ndarray:
    """Element-wise test for ``±2^b`` with integer ``b`` (zero is not a power of two)."""
    mantissa, _ = np.frexp(np.abs(np.asarray(values, dtype=np.float64)))
    return mantissa == 0.5


@dataclass(frozen=True)
class Dictionary:
    """Length-K value vector plus the constraint it was produced under.

    ``prune_ratio`` marks the zero-pinned first entry (``values[0] == 0``).
    """

    values: Tensor
    kind: ConstraintKind = ConstraintKind.FREE
    prune_ratio: Optional[float] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise ArgumentError("dictionary must hold at least one value")
        check_finite(values, "dictionary")
        if self.prune_ratio is not None:
            if not 0.0 <= self.prune_ratio < 1.0:
                raise ArgumentError(f"pruning ratio must lie in [0, 1), got {self.prune_ratio}")
            if values[0] != 0.0:
                raise ArgumentError("zero-pinned dictionary must start with 0")
        if self.kind is ConstraintKind.POW2:
            free = values[1:] if self.zero_pinned else values
            if not np.all(is_pow2_array(free)):
                raise ArgumentError(f"power-of-two dictionary has non power-of-two entries: {values}")
        if self.kind is ConstraintKind.POW2_FIXED and not np.all((values == 0.0) | is_pow2_array(values)):
            raise ArgumentError(f"pow2_fixed dictionary must hold zero and powers of two: {values}")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def zero_pinned(self) -> bool:
        return self.prune_ratio is not None

    def with_values(self, values: Tensor) -> "Dictionary":
        return Dictionary(values=values, kind=self.kind, prune_ratio=self.prune_ratio)


@dataclass(frozen=True)
class AssignmentTensor:
    """Integer tensor of 1-based dictionary indices."""

    indices: IndexTensor

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices)
        if indices.size and not np.issubdtype(indices.dtype, np.integer):
            raise ArgumentError("assignment indices must be integers")
        object.__setattr__(self, "indices", _frozen(indices.astype(np.int64)))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.indices.shape)

    def check_range(self, k: int) -> None:
        """Raise :class:`AssignmentIndexError` if any entry lies outside ``1..k``."""
        if self.indices.size and (self.indices.min() < 1 or self.indices.max() > k):
            raise AssignmentIndexError(
                f"assignment entries span [{self.indices.min()}, {self.indices.max()}], dictionary has {k}"
            )

    def counts(self, k: int) -> np.ndarray:
        """Number of entries assigned to each of the ``k`` dictionary slots."""
        return np.bincount(self.indices.reshape(-1) - 1, minlength=k)


def lookup(dictionary: Dictionary, assignment: AssignmentTensor) -> Tensor:
    """Gather ``d[A]`` exactly; the output has the assignment's shape."""
    assignment.check_range(dictionary.size)
    return dictionary.values[assignment.indices - 1]


@dataclass(frozen=True)
class QuantizedWeight:
    """A (dictionary, assignment) pair with its cached look-up ``q``."""

    dictionary: Dictionary
    assignment: AssignmentTensor
    q: Tensor = field(repr=False)

    @classmethod
    def build(cls, dictionary: Dictionary, assignment: AssignmentTensor) -> "QuantizedWeight":
        return cls(dictionary=dictionary, assignment=assignment, q=_frozen(lookup(dictionary, assignment)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.assignment.shape

    @property
    def k(self) -> int:
        return self.dictionary.size


def quantization_error(w: Tensor, q: Tensor) -> float:
    """Return ``½‖W − Q‖²``."""
    w = np.asarray(w, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if w.shape != q.shape:
        raise DimensionError(f"weight shape {w.shape} differs from quantized shape {q.shape}")
    diff = (w - q).reshape(-1)
    return 0.5 * float(np.dot(diff, diff))
