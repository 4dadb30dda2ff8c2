"""Softmax probabilities and the training loss with its gradient w.r.t. the logits."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from lutq.core.tensor import Tensor
from lutq.errors import DimensionError

__all__ = ["softmax", "softmax_cross_entropy"]


def softmax(logits: Tensor) -> Tensor:
    """Row-wise class probabilities of *logits*."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tuple[float, Tensor]:
    """Mean cross-entropy of integer *labels* under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} disagree")
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = -float(log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / batch
