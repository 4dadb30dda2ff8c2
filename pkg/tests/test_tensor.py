import numpy as np
import pytest

from lutq.core.tensor import make_rng, rng_normal, rng_uniform, tensor_matmul
from lutq.errors import ArgumentError, DimensionError


def test_matmul_identity():
    out = tensor_matmul(np.eye(2), np.array([3.0, 4.0]))
    assert out.tolist() == [3.0, 4.0]


def test_matmul_hand_example():
    out = tensor_matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0]))
    assert out.tolist() == [3.0, 7.0]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        tensor_matmul(np.ones((2, 3)), np.ones(2))


def test_matmul_distributes_over_addition():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = rng.normal(size=(4, 6))
        x = rng.normal(size=6)
        y = rng.normal(size=6)
        lhs = tensor_matmul(m, x + y)
        rhs = tensor_matmul(m, x) + tensor_matmul(m, y)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_rng_uniform_is_deterministic():
    a = rng_uniform(make_rng(0), (3, 4), -1.0, 1.0)
    b = rng_uniform(make_rng(0), (3, 4), -1.0, 1.0)
    assert np.array_equal(a, b)


def test_rng_uniform_range_and_mean():
    values = rng_uniform(make_rng(1), 10_000, 0.0, 1.0)
    assert values.min() >= 0.0
    assert values.max() < 1.0
    assert 0.45 <= values.mean() <= 0.55


def test_rng_uniform_empty_interval():
    with pytest.raises(ArgumentError):
        rng_uniform(make_rng(0), 3, 1.0, 1.0)


def test_rng_normal_rejects_non_positive_std():
    with pytest.raises(ArgumentError):
        rng_normal(make_rng(0), 3, std=0.0)
