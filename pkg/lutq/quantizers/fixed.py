"""Fixed quantization rules: power-of-two rounding, fixed-point and pow-2 grids.

``round_pow2`` decides between ``2^⌊b⌋`` and ``2^⌈b⌉`` with the arithmetic-mean
threshold ``b − ⌊b⌋ ≤ log₂1.5``.  Writing ``|v| = m·2^e`` with ``m`` in
``[0.5, 1)`` turns that test into ``2m ≤ 1.5``, which ``frexp`` evaluates
exactly, so boundary values such as 1.5 and 3.0 never flip.
"""

from __future__ import annotations

import math

import numpy as np

from lutq.core.tensor import Tensor, check_finite
from lutq.data_models import is_power_of_two
from lutq.errors import ArgumentError

__all__ = [
    "round_pow2",
    "round_pow2_array",
    "quantize_fp",
    "quantize_fp_array",
    "quantize_pow2_fixed",
    "quantize_pow2_fixed_array",
    "dynamic_range",
    "uniform_values",
    "pow2_fixed_values",
    "quantize_activation_fp",
    "quantize_activation_pow2",
]


def round_pow2(v: float) -> float:
    """Round *v* to ``±2^b`` using the arithmetic-mean threshold."""
    if not math.isfinite(v):
        raise ArgumentError(f"cannot round non-finite value {v}")
    if v == 0.0:
        raise ArgumentError("zero has no power-of-two representation")
    mantissa, exponent = math.frexp(abs(v))
    magnitude = math.ldexp(1.0, exponent - 1) if 2.0 * mantissa <= 1.5 else math.ldexp(1.0, exponent)
    return math.copysign(magnitude, v)


def round_pow2_array(values: Tensor) -> Tensor:
    """Vectorised :func:`round_pow2`; every entry must be non-zero."""
    values = np.asarray(values, dtype=np.float64)
    check_finite(values)
    if np.any(values == 0.0):
        raise ArgumentError("zero has no power-of-two representation")
    mantissa, exponent = np.frexp(np.abs(values))
    exponent = np.where(2.0 * mantissa <= 1.5, exponent - 1, exponent)
    return np.copysign(np.ldexp(1.0, exponent), values)


def _check_fp_args(n_bits: int, delta: float) -> None:
    if n_bits < 2:
        raise ArgumentError(f"fixed-point quantization needs n_bits >= 2, got {n_bits}")
    if not is_power_of_two(delta):
        raise ArgumentError(f"step size must be a positive power of two, got {delta}")


def quantize_fp(w: float, n_bits: int, delta: float) -> float:
    """Uniform ``n_bits`` fixed-point quantization with step *delta*, saturating."""
    _check_fp_args(n_bits, delta)
    if not math.isfinite(w):
        raise ArgumentError(f"cannot quantize non-finite value {w}")
    top = 2 ** (n_bits - 1) - 1
    ratio = abs(w) / delta
    level = math.floor(ratio + 0.5) if ratio <= top else top
    return math.copysign(delta * level, w) if level else 0.0


def quantize_fp_array(w: Tensor, n_bits: int, delta: float) -> Tensor:
    _check_fp_args(n_bits, delta)
    w = np.asarray(w, dtype=np.float64)
    check_finite(w)
    top = 2 ** (n_bits - 1) - 1
    ratio = np.abs(w) / delta
    level = np.where(ratio <= top, np.floor(ratio + 0.5), float(top))
    return np.sign(w) * delta * level


def quantize_pow2_fixed(w: float, n_bits: int, m: int) -> float:
    """Pow-2 quantization with ``n_bits`` and dynamic range ``2^m``."""
    if n_bits < 2:
        raise ArgumentError(f"pow-2 quantization needs n_bits >= 2, got {n_bits}")
    if not math.isfinite(w):
        raise ArgumentError(f"cannot quantize non-finite value {w}")
    magnitude = abs(w)
    if magnitude <= 2.0 ** (m - 2 ** (n_bits - 2) + 0.5):
        return 0.0
    if magnitude <= 2.0**m:
        return math.copysign(2.0 ** math.floor(math.log2(magnitude) + 0.5), w)
    return math.copysign(2.0**m, w)


def quantize_pow2_fixed_array(w: Tensor, n_bits: int, m: int) -> Tensor:
    if n_bits < 2:
        raise ArgumentError(f"pow-2 quantization needs n_bits >= 2, got {n_bits}")
    w = np.asarray(w, dtype=np.float64)
    check_finite(w)
    magnitude = np.abs(w)
    threshold = 2.0 ** (m - 2 ** (n_bits - 2) + 0.5)
    with np.errstate(divide="ignore"):
        rounded = np.exp2(np.floor(np.log2(np.where(magnitude > 0, magnitude, 1.0)) + 0.5))
    out = np.where(magnitude <= 2.0**m, rounded, 2.0**m)
    out = np.where(magnitude <= threshold, 0.0, out)
    return np.sign(w) * out


def dynamic_range(w: Tensor) -> float:
    """Per-layer range ``r = 2^⌈log₂ max|W|⌉``."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ArgumentError("dynamic range of an empty tensor is undefined")
    check_finite(w)
    peak = float(np.max(np.abs(w)))
    if peak == 0.0:
        raise ArgumentError("dynamic range of an all-zero tensor is undefined")
    mantissa, exponent = math.frexp(peak)
    return math.ldexp(1.0, exponent - 1) if mantissa == 0.5 else math.ldexp(1.0, exponent)


def uniform_values(n_bits: int, delta: float) -> Tensor:
    """The symmetric fixed-point grid ``{s·k·δ}`` as a dictionary, ascending."""
    _check_fp_args(n_bits, delta)
    top = 2 ** (n_bits - 1) - 1
    return np.arange(-top, top + 1, dtype=np.float64) * delta


def pow2_fixed_values(n_bits: int, m: int) -> Tensor:
    """Zero plus ``±2^e`` for the ``2^(n−2)`` exponents ending at ``m``, ascending."""
    if n_bits < 2:
        raise ArgumentError(f"pow-2 grid needs n_bits >= 2, got {n_bits}")
    exponents = np.arange(m - 2 ** (n_bits - 2) + 1, m + 1)
    positive = np.exp2(exponents.astype(np.float64))
    return np.concatenate([-positive[::-1], [0.0], positive])


def quantize_activation_fp(x: Tensor, n_bits: int, range_r: float) -> Tensor:
    """Unsigned uniform quantization of ``x`` onto ``{k·r/(2^n − 1)}`` within ``[0, r]``."""
    step = range_r / (2**n_bits - 1)
    levels = np.floor(np.clip(x, 0.0, range_r) / step + 0.5)
    return levels * step


def quantize_activation_pow2(x: Tensor, n_bits: int, range_r: float) -> Tensor:
    """Unsigned pow-2 quantization onto ``{0} ∪ {2^j ≤ r}``; no bit is spent on the sign."""
    m = int(round(math.log2(range_r)))
    return quantize_pow2_fixed_array(np.clip(x, 0.0, None), n_bits + 1, m)
