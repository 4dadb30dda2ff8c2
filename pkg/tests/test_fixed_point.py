import numpy as np
import pytest

from lutq.errors import ArgumentError, ContractError, FixedPointOverflowError
from lutq.inference.fixed_point import FixedPointFormat, as_mantissas, from_fixed, to_fixed


def test_to_fixed_rounds_half_up():
    fmt = FixedPointFormat()
    assert to_fixed(np.array([0.75, -0.75, 0.3]), -2, fmt).tolist() == [3, -3, 1]
    assert to_fixed(np.array([0.625]), -2, fmt).tolist() == [3]


def test_from_fixed_scales_by_exponent():
    assert from_fixed(np.array([3, -5]), -2).tolist() == [0.75, -1.25]
    assert from_fixed(np.array([3]), 1).tolist() == [6.0]


def test_dyadic_values_survive_the_trip():
    x = np.array([0.5, -1.25, 3.0, 0.0])
    assert np.array_equal(from_fixed(to_fixed(x, -4), -4), x)


def test_range_and_overflow():
    fmt = FixedPointFormat(mantissa_bits=8, saturate=True)
    assert (fmt.min_mantissa, fmt.max_mantissa) == (-128, 127)
    assert to_fixed(np.array([1000.0, -1000.0]), 0, fmt).tolist() == [127, -128]
    with pytest.raises(FixedPointOverflowError):
        to_fixed(np.array([1000.0]), 0, FixedPointFormat(mantissa_bits=8, saturate=False))


def test_format_width_is_bounded():
    with pytest.raises(ArgumentError):
        FixedPointFormat(mantissa_bits=1)
    with pytest.raises(ArgumentError):
        FixedPointFormat(mantissa_bits=63)


def test_as_mantissas_accepts_integral_floats_only():
    assert as_mantissas(np.array([2.0, -3.0]), FixedPointFormat()).tolist() == [2, -3]
    with pytest.raises(ContractError):
        as_mantissas(np.array([0.5]), FixedPointFormat())


def test_format_from_settings(monkeypatch):
    from lutq.settings import get_settings

    monkeypatch.setenv("LUTQ_FIXED_POINT_MANTISSA_BITS", "16")
    monkeypatch.setenv("LUTQ_FIXED_POINT_SATURATE", "false")
    get_settings.cache_clear()
    try:
        fmt = FixedPointFormat.from_settings()
        assert fmt == FixedPointFormat(mantissa_bits=16, saturate=False)
    finally:
        get_settings.cache_clear()
