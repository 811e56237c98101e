"""Output-space reference scorers: maximum softmax probability and energy.

Both are negated so that higher scores mean more OOD, matching the
abnormality scorers; the evaluation harness never needs per-method sign
flags. Energy uses temperature 1 (no tuning in the post-hoc setting).
"""

from __future__ import annotations

import numpy as np

from .graph import plain_forward
from .scoring import _PosthocScorer
from .tensor import Tensor


def _rows(logits) -> np.ndarray:
    a = np.asarray(logits, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"logits must be (N, C) or (C,), got shape {a.shape}")
    return a


def score_msp(logits) -> np.ndarray:
    """Negative maximum softmax probability, in [-1, -1/C]."""
    a = _rows(logits)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return -p.max(axis=1)


def score_energy(logits) -> np.ndarray:
    """Negative log-sum-exp of the logits, computed with max-subtraction."""
    a = _rows(logits)
    m = a.max(axis=1)
    return -(m + np.log(np.exp(a - m[:, None]).sum(axis=1)))


class _LogitScorer(_PosthocScorer):
    def _logits(self, images: Tensor) -> np.ndarray:
        return plain_forward(self.graph, self.weights, images).data


class MspScorer(_LogitScorer):
    """Maximum-softmax-probability baseline (higher score = more OOD)."""

    def _score_chunk(self, images: Tensor) -> np.ndarray:
        return score_msp(self._logits(images))


class EnergyScorer(_LogitScorer):
    """Energy baseline at temperature 1 (higher score = more OOD)."""

    def _score_chunk(self, images: Tensor) -> np.ndarray:
        return score_energy(self._logits(images))
