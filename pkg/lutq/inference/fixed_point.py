"""Integer-mantissa fixed-point values with one shared exponent per tensor.

A tensor ``x`` is held as int64 mantissas ``m`` with ``x ≈ m · 2^exponent``.
Mantissas are limited to a signed ``mantissa_bits`` range; leaving it either
saturates or raises :class:`~lutq.errors.FixedPointOverflowError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from lutq.core.tensor import IndexTensor, Tensor, check_finite
from lutq.errors import ArgumentError, ContractError, FixedPointOverflowError
from lutq.settings import get_settings

__all__ = ["FixedPointFormat", "to_fixed", "from_fixed", "as_mantissas"]


@dataclass(frozen=True)
class FixedPointFormat:
    mantissa_bits: int = 32
    saturate: bool = True

    def __post_init__(self) -> None:
        if not 2 <= self.mantissa_bits <= 62:
            raise ArgumentError(f"mantissa width must lie in 2..62 bits, got {self.mantissa_bits}")

    @classmethod
    def from_settings(cls) -> "FixedPointFormat":
        settings = get_settings()
        return cls(mantissa_bits=settings.fixed_point_mantissa_bits, saturate=settings.fixed_point_saturate)

    @property
    def min_mantissa(self) -> int:
        return -(1 << (self.mantissa_bits - 1))

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.mantissa_bits - 1)) - 1

    def fit(self, mantissas: IndexTensor) -> IndexTensor:
        """Saturate *mantissas* to the format, or raise when saturation is off."""
        lo, hi = self.min_mantissa, self.max_mantissa
        if mantissas.size and (mantissas.min() < lo or mantissas.max() > hi):
            if not self.saturate:
                raise FixedPointOverflowError(
                    f"mantissa outside the signed {self.mantissa_bits}-bit range [{lo}, {hi}]"
                )
            return np.clip(mantissas, lo, hi)
        return mantissas


def _resolve(fmt: Optional[FixedPointFormat]) -> FixedPointFormat:
    return fmt if fmt is not None else FixedPointFormat.from_settings()


def to_fixed(x: Tensor, exponent: int, fmt: Optional[FixedPointFormat] = None) -> IndexTensor:
    """Round ``x / 2^exponent`` half up to int64 mantissas within *fmt*."""
    x = np.asarray(x, dtype=np.float64)
    check_finite(x)
    fmt = _resolve(fmt)
    scaled = np.floor(np.ldexp(x, -exponent) + 0.5)
    bound = float(1 << 62)
    scaled = np.clip(scaled, -bound, bound)
    return fmt.fit(scaled.astype(np.int64))


def from_fixed(mantissas: IndexTensor, exponent: int) -> Tensor:
    return np.ldexp(np.asarray(mantissas, dtype=np.float64), exponent)


def as_mantissas(x: np.ndarray, fmt: Optional[FixedPointFormat] = None) -> IndexTensor:
    """Accept integer mantissas (or integral floats) and fit them to *fmt*."""
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        arr = np.asarray(arr, dtype=np.float64)
        check_finite(arr, "mantissas")
        if np.any(arr != np.floor(arr)):
            raise ContractError("fixed-point input must hold integer mantissas")
    return _resolve(fmt).fit(arr.astype(np.int64))
