"""Dense tensor substrate shared by every other module.

Tensors are plain ``numpy`` float64 arrays; this module adds the few checked
entry points the rest of the toolkit relies on: finiteness validation, a
matrix-vector product with a fixed left-to-right summation order, and seeded
pseudo-randomness that is reproducible across runs and platforms (PCG64).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import numpy.typing as npt

from lutq.errors import ArgumentError, DimensionError

__all__ = [
    "Tensor",
    "IndexTensor",
    "Rng",
    "check_finite",
    "make_rng",
    "rng_uniform",
    "rng_normal",
    "tensor_matmul",
]

Tensor = npt.NDArray[np.float64]
IndexTensor = npt.NDArray[np.int64]
Rng = np.random.Generator


def check_finite(t: np.ndarray, what: str = "tensor") -> None:
    """Raise :class:`ArgumentError` if *t* holds NaN or Inf."""
    if t.size and not np.all(np.isfinite(t)):
        raise ArgumentError(f"{what} contains non-finite values")


def tensor_matmul(a: Tensor, x: Tensor) -> Tensor:
    """Matrix-vector product ``a @ x`` summed strictly left to right per row.

    ``np.cumsum`` accumulates sequentially, so the last column of the running
    sum is the row total in a fixed order regardless of BLAS threading.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {x.shape}")
    if a.shape[1] == 0:
        return np.zeros(a.shape[0], dtype=np.float64)
    return np.cumsum(a * x, axis=1)[:, -1]


def make_rng(seed: int) -> Rng:
    """Return a PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def rng_uniform(rng: Rng, shape: Sequence[int] | int, lo: float, hi: float) -> Tensor:
    """Sample a tensor uniformly from ``[lo, hi)``."""
    if not lo < hi:
        raise ArgumentError(f"empty sampling interval [{lo}, {hi})")
    values = lo + (hi - lo) * rng.random(shape)
    # lo + span * u can round up to hi for u close to 1
    return np.minimum(values, np.nextafter(hi, lo))


def rng_normal(rng: Rng, shape: Sequence[int] | int, std: float = 1.0) -> Tensor:
    """Sample a zero-mean normal tensor with standard deviation *std*."""
    if std <= 0:
        raise ArgumentError(f"std must be positive, got {std}")
    return rng.normal(0.0, std, size=shape)
