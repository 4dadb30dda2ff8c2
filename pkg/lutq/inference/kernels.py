"""Affine inference kernels with operation counters.

``naive_affine``   dense ``Wx + b``: ``O·I`` multiplications.
``grouped_affine`` per output row, sum the inputs sharing a dictionary index,
                   then multiply each group sum once: ``O·K`` multiplications
                   (groups whose value is exactly zero are skipped).
``shift_affine``   the grouped kernel on fixed-point mantissas with every
                   ``d_k = ±2^b`` applied as a sign flip plus arithmetic shift.

Negative shifts are arithmetic right shifts, i.e. they round toward −∞;
``grouped_affine_fixed`` evaluates ``⌊S_k · d_k⌋`` so both agree bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from lutq.core.tensor import IndexTensor, Tensor, tensor_matmul
from lutq.errors import ContractError, DimensionError, FixedPointOverflowError
from lutq.inference.fixed_point import FixedPointFormat, as_mantissas, to_fixed
from lutq.quantizers.dictionary import QuantizedWeight, is_pow2_array

logger = logging.getLogger(__name__)

__all__ = [
    "OpCounter",
    "naive_affine",
    "grouped_affine",
    "grouped_affine_fixed",
    "shift_affine",
]

# Half the int64 range; rows at or above it are treated as accumulator overflow.
_ACCUMULATOR_LIMIT = float(2**62)


@dataclass
class OpCounter:
    """Executed-operation instrumentation.

    ``additions`` counts accumulations of inputs (into the output or a group
    register); ``combine_additions`` the adds that fold weighted group sums
    into the output.
    """

    multiplications: int = 0
    additions: int = 0
    combine_additions: int = 0
    shifts: int = 0

    def as_dict(self) -> dict:
        return {
            "multiplications": self.multiplications,
            "additions": self.additions,
            "combine_additions": self.combine_additions,
            "shifts": self.shifts,
        }


def _check_shapes(shape: Tuple[int, ...], x: np.ndarray, bias: np.ndarray) -> None:
    if len(shape) != 2:
        raise DimensionError(f"affine kernels need a 2-D weight, got {shape}")
    out_features, in_features = shape
    if x.shape != (in_features,):
        raise DimensionError(f"input {x.shape} does not match weight {shape}")
    if bias.shape != (out_features,):
        raise DimensionError(f"bias {bias.shape} does not match weight {shape}")


def naive_affine(w: Tensor, x: Tensor, bias: Tensor, counter: Optional[OpCounter] = None) -> Tensor:
    """Dense reference ``Wx + b``; the bias starts each accumulator."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_shapes(w.shape, x, bias)
    if counter is not None:
        counter.multiplications += w.size
        counter.additions += w.size
    return bias + tensor_matmul(w, x)


def _live_groups(qw: QuantizedWeight) -> np.ndarray:
    """Mask of dictionary entries that need work; groups whose value is exactly zero are skipped."""
    return qw.dictionary.values != 0.0


def _group_sums(qw: QuantizedWeight, x: np.ndarray) -> np.ndarray:
    """``S[o, k] = Σ_{i: A_oi = k+1} x_i``, accumulated in input order."""
    out_features, in_features = qw.shape
    k = qw.k
    slots = (qw.assignment.indices - 1) + k * np.arange(out_features)[:, None]
    if np.issubdtype(x.dtype, np.integer):
        sums = np.zeros(out_features * k, dtype=np.int64)
        np.add.at(sums, slots.reshape(-1), np.broadcast_to(x, (out_features, in_features)).reshape(-1))
    else:
        sums = np.bincount(
            slots.reshape(-1),
            weights=np.broadcast_to(x, (out_features, in_features)).reshape(-1),
            minlength=out_features * k,
        )
    return sums.reshape(out_features, k)


def _count_grouped(qw: QuantizedWeight, live: np.ndarray, counter: OpCounter, *, shifts: bool) -> None:
    out_features = qw.shape[0]
    groups = int(np.count_nonzero(live))
    counter.additions += int(np.count_nonzero(live[qw.assignment.indices - 1]))
    counter.combine_additions += out_features * groups
    if shifts:
        counter.shifts += out_features * groups
    else:
        counter.multiplications += out_features * groups


def _wide_rows(bias_m: IndexTensor, sums: IndexTensor, values: Tensor) -> np.ndarray:
    """Rows whose accumulation could leave int64; judged on magnitudes in float64."""
    magnitude = np.abs(sums.astype(np.float64) * values).sum(axis=1) + np.abs(bias_m.astype(np.float64))
    return magnitude >= _ACCUMULATOR_LIMIT


def _accumulate(
    bias_m: IndexTensor, sums: IndexTensor, values: Tensor, products: IndexTensor, wide: np.ndarray, fmt: FixedPointFormat
) -> IndexTensor:
    out = bias_m + products.sum(axis=1)
    if np.any(wide):
        if not fmt.saturate:
            raise FixedPointOverflowError("grouped accumulation exceeds the 64-bit accumulator")
        totals = bias_m.astype(np.float64) + (sums.astype(np.float64) * values).sum(axis=1)
        out = np.where(wide, np.where(totals > 0, fmt.max_mantissa, fmt.min_mantissa), out)
    return fmt.fit(out)


def grouped_affine(
    qw: QuantizedWeight, x: Tensor, bias: Tensor, counter: Optional[OpCounter] = None
) -> Tensor:
    """``y_o = b_o + Σ_k d_k · Σ_{i: A_oi = k} x_i`` with one multiply per non-zero group."""
    x = np.asarray(x, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_shapes(qw.shape, x, bias)
    live = _live_groups(qw)
    sums = _group_sums(qw, x)[:, live]
    values = qw.dictionary.values[live]
    if counter is not None:
        _count_grouped(qw, live, counter, shifts=False)
    if values.size == 0:
        return bias.copy()
    return bias + np.cumsum(sums * values, axis=1)[:, -1]


def grouped_affine_fixed(
    qw: QuantizedWeight,
    x_mantissas: IndexTensor,
    bias: Tensor,
    exponent: int = 0,
    fmt: Optional[FixedPointFormat] = None,
    counter: Optional[OpCounter] = None,
) -> IndexTensor:
    """Grouped kernel on mantissas sharing *exponent*; products are ``⌊S_k·d_k⌋``.

    Rows whose accumulation would leave int64 saturate to the format bounds
    (by the sign of the float total) or raise, per *fmt*.
    """
    fmt = fmt or FixedPointFormat.from_settings()
    x_m = as_mantissas(x_mantissas, fmt)
    bias = np.asarray(bias, dtype=np.float64)
    _check_shapes(qw.shape, x_m, bias)
    live = _live_groups(qw)
    sums = _group_sums(qw, x_m)[:, live]
    values = qw.dictionary.values[live]
    if counter is not None:
        _count_grouped(qw, live, counter, shifts=False)
    bias_m = to_fixed(bias, exponent, fmt)
    wide = _wide_rows(bias_m, sums, values)
    safe = np.where(wide[:, None], 0, sums)
    products = np.floor(safe.astype(np.float64) * values).astype(np.int64)
    return _accumulate(bias_m, sums, values, products, wide, fmt)


def shift_affine(
    qw: QuantizedWeight,
    x_mantissas: IndexTensor,
    bias: Tensor,
    exponent: int = 0,
    fmt: Optional[FixedPointFormat] = None,
    counter: Optional[OpCounter] = None,
) -> IndexTensor:
    """Multiplier-free grouped kernel for power-of-two dictionaries.

    Inputs and the returned outputs are mantissas scaled by ``2^exponent``.
    Zero entries (pruned, ternary or fixed grids) are skipped; every other
    entry must be ``±2^b`` or :class:`ContractError` is raised.
    """
    fmt = fmt or FixedPointFormat.from_settings()
    live = _live_groups(qw)
    values = qw.dictionary.values[live]
    if not np.all(is_pow2_array(values)):
        raise ContractError(f"shift kernel needs a power-of-two dictionary, got {qw.dictionary.values}")
    x_m = as_mantissas(x_mantissas, fmt)
    bias = np.asarray(bias, dtype=np.float64)
    _check_shapes(qw.shape, x_m, bias)
    sums = _group_sums(qw, x_m)[:, live]
    if counter is not None:
        _count_grouped(qw, live, counter, shifts=True)

    bias_m = to_fixed(bias, exponent, fmt)
    wide = _wide_rows(bias_m, sums, values)
    _, exps = np.frexp(np.abs(values))
    shift = (exps - 1).astype(np.int64)
    safe = np.where(wide[:, None], 0, sums)
    signed = np.where(values < 0, -safe, safe)
    left = np.left_shift(signed, np.maximum(shift, 0))
    shifted = np.where(shift >= 0, left, np.right_shift(signed, np.maximum(-shift, 0)))
    return _accumulate(bias_m, sums, values, shifted, wide, fmt)
