"""Dataset ingestion: seeded synthetic blobs and delimiter-separated files."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from lutq.core.tensor import Tensor, check_finite, make_rng, rng_normal
from lutq.errors import ArgumentError, ConfigError, DimensionError

logger = logging.getLogger(__name__)

__all__ = ["Dataset", "make_blobs", "load_delimited"]


@dataclass(frozen=True)
class Dataset:
    """Samples ``x`` (one row per sample) with integer class labels ``y``."""

    x: Tensor
    y: np.ndarray

    def __post_init__(self) -> None:
        if self.x.ndim < 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"samples {self.x.shape} and labels {self.y.shape} disagree")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self) else 0

    @property
    def n_features(self) -> int:
        return int(np.prod(self.x.shape[1:]))

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.x[index], self.y[index])


def make_blobs(
    n_samples: int,
    n_classes: int,
    seed: int,
    *,
    std: float = 0.6,
    radius: float = 3.0,
) -> Dataset:
    """Gaussian blobs in 2-D with centres evenly spaced on a circle.

    Classes are balanced (``n_samples`` split round-robin) and the sample
    order is shuffled with the seeded generator.
    """
    if n_samples < 1 or n_classes < 2:
        raise ArgumentError("blobs need at least one sample and two classes")
    rng = make_rng(seed)
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    labels = labels[rng.permutation(n_samples)]
    x = centres[labels] + rng_normal(rng, (n_samples, 2), std)
    return Dataset(x, labels)


def load_delimited(path: Union[str, Path], delimiter: str = ",") -> Dataset:
    """Load one sample per row with the integer label in the last column."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"dataset file {str(path)!r} does not exist", field="dataset")
    try:
        table = np.loadtxt(path, delimiter=delimiter, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {str(path)!r}: {exc}", field="dataset") from exc
    if table.size == 0 or table.shape[1] < 2:
        raise ConfigError(f"{str(path)!r} holds no samples with a label column", field="dataset")
    check_finite(table, "dataset")
    raw_labels = table[:, -1]
    labels = raw_labels.astype(np.int64)
    if np.any(labels != raw_labels) or np.any(labels < 0):
        raise ConfigError("labels must be non-negative integers", field="dataset")
    logger.info("Loaded %d samples with %d features from %s", table.shape[0], table.shape[1] - 1, path)
    return Dataset(np.ascontiguousarray(table[:, :-1]), labels)
