"""Abnormality scoring over attribution gradients.

Two per-channel statistics are supported:

* zero-deflation: the density of non-zero gradient entries in a channel's
  gradient map (OOD inputs produce denser maps),
* channel-wise average: mean absolute inner gradient divided by the square
  root of the mean absolute gradient at the last feature map under the
  fused log-softmax objective.

Per-layer/per-channel expectations are assembled into a zero-padded
abnormality matrix whose entrywise p-norm (p=2: Frobenius) is the OOD
score. Higher scores mean more OOD everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .archive import SampleBatch, WeightArchive
from .autodiff import backward
from .errors import ConfigurationError
from .graph import (
    ModelGraph,
    forward,
    forward_classifier,
    forward_features,
    plain_features,
)
from .ops import k_softmax
from .tensor import Tensor, as_tensor

METHODS = ("gaia_z", "gaia_a")
FUSION_MODES = ("two_stage", "top1_label", "output_only", "inner_only")


# ---------------------------------------------------------------------------
# per-channel expectations and the abnormality matrix
# ---------------------------------------------------------------------------


def zero_deflation_expectation(grad_map, tau: float = 0.0) -> float:
    """Fraction of gradient entries with magnitude strictly above ``tau``."""
    if tau < 0:
        raise ConfigurationError(f"tau must be >= 0, got {tau}")
    g = np.asarray(grad_map)
    return float(np.count_nonzero(np.abs(g) > tau)) / g.size


def fused_logsoftmax_seed(logits) -> np.ndarray:
    """Backward seed of the summed log-softmax over all classes.

    d(sum_c log softmax_c) / d s_j = 1 - C * softmax_j, so one backward pass
    fuses the whole label space.
    """
    s = np.asarray(logits, dtype=np.float32)
    p = k_softmax(s)
    c = s.shape[-1]
    return (1.0 - c * p).astype(np.float32)


def channel_avg_expectation(inner_grad, output_grad, eps_floor: float = 1e-12) -> float:
    """mean|inner| / sqrt(max(mean|output|, eps_floor))."""
    if eps_floor <= 0:
        raise ConfigurationError(f"eps_floor must be > 0, got {eps_floor}")
    e_inner = float(np.mean(np.abs(np.asarray(inner_grad, dtype=np.float64))))
    e_output = float(np.mean(np.abs(np.asarray(output_grad, dtype=np.float64))))
    return e_inner / math.sqrt(max(e_output, eps_floor))


def matrix_pnorm(values, p: float = 2.0) -> float:
    """Entrywise p-norm of the abnormality matrix; p=2 is the Frobenius norm."""
    if p < 1:
        raise ConfigurationError(f"norm order must be >= 1, got {p}")
    v = np.abs(np.asarray(values, dtype=np.float64))
    return float(np.sum(v**p) ** (1.0 / p))


def decide(score, gamma: float):
    """Threshold rule: out iff score > gamma (boundary counts as in)."""
    if not math.isfinite(gamma):
        raise ConfigurationError(f"gamma must be finite, got {gamma}")
    arr = np.asarray(score)
    labels = np.where(arr > gamma, "out", "in")
    return str(labels) if arr.ndim == 0 else labels


@dataclass(frozen=True)
class AbnormalityMatrix:
    """Zero-padded (layers x max-channels) matrix of abnormality expectations."""

    values: np.ndarray
    tap_ids: tuple[str, ...]
    channel_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != len(self.tap_ids):
            raise ConfigurationError(f"matrix shape {v.shape} does not match rows {self.tap_ids}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConfigurationError("abnormality entries must be finite and non-negative")
        for row, k in enumerate(self.channel_counts):
            if np.any(v[row, k:] != 0.0):
                raise ConfigurationError(f"padding entries of row {row} are not zero")

    @classmethod
    def from_rows(cls, rows: list[np.ndarray], tap_ids) -> "AbnormalityMatrix":
        counts = tuple(len(r) for r in rows)
        k_m = max(counts)
        values = np.zeros((len(rows), k_m), dtype=np.float64)
        for i, row in enumerate(rows):
            values[i, : len(row)] = row
        return cls(values, tuple(tap_ids), counts)

    def pnorm(self, p: float = 2.0) -> float:
        return matrix_pnorm(self.values, p)


# ---------------------------------------------------------------------------
# scorer configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScorerConfig:
    """Knobs of the abnormality scorers (tap subset, tolerance, norm, fusion)."""

    method: str = "gaia_z"
    taps: tuple[str, ...] = ("block3", "block4")
    tau: float = 0.0
    p: float = 2.0
    fusion: str = "two_stage"
    eps_floor: float = 1e-12

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigurationError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.tau < 0:
            raise ConfigurationError(f"tau must be >= 0, got {self.tau}")
        if self.p < 1:
            raise ConfigurationError(f"norm order must be >= 1, got {self.p}")
        if self.eps_floor <= 0:
            raise ConfigurationError(f"eps_floor must be > 0, got {self.eps_floor}")


def resolve_taps(graph: ModelGraph, selection) -> tuple[str, ...]:
    """Match selection entries against tap ids and block labels, in layer order."""
    wanted = list(selection)
    if not wanted:
        raise ConfigurationError("empty tap set: select at least one tap or block label")
    known = {t.tap_id for t in graph.taps} | {t.block_label for t in graph.taps}
    unknown = [s for s in wanted if s not in known]
    if unknown:
        raise ConfigurationError(
            f"tap selection {unknown} matches no tap id or block label; "
            f"graph taps: {[(t.tap_id, t.block_label) for t in graph.taps]}"
        )
    chosen = [t for t in graph.taps if t.tap_id in wanted or t.block_label in wanted]
    chosen.sort(key=lambda t: t.layer_index)
    if not chosen:
        raise ConfigurationError("empty tap set after resolution")
    return tuple(t.tap_id for t in chosen)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@dataclass
class ScoreOutput:
    """Per-sample scores plus the matrices and diagnostics behind them."""

    scores: np.ndarray
    matrices: list[AbnormalityMatrix]
    zero_output_component: np.ndarray | None = None


def _spatial_mean_abs(g: np.ndarray) -> np.ndarray:
    """(N, C, ...) gradient -> (N, C) mean absolute value over spatial axes."""
    axes = tuple(range(2, g.ndim))
    return np.abs(g).astype(np.float64).mean(axis=axes) if axes else np.abs(g).astype(np.float64)


def _density_rows(g: np.ndarray, tau: float) -> np.ndarray:
    """(N, C, ...) gradient -> (N, C) per-channel non-zero density."""
    axes = tuple(range(2, g.ndim))
    above = np.abs(g) > tau
    return above.mean(axis=axes, dtype=np.float64) if axes else above.astype(np.float64)


def _one_hot_argmax(logits: np.ndarray) -> np.ndarray:
    seed = np.zeros_like(logits, dtype=np.float32)
    seed[np.arange(logits.shape[0]), logits.argmax(axis=-1)] = 1.0
    return seed


def _assemble(per_tap_rows: dict[str, np.ndarray], tap_ids, n: int, p: float) -> ScoreOutput:
    matrices = []
    scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        rows = [per_tap_rows[tid][i] for tid in tap_ids]
        lam = AbnormalityMatrix.from_rows(rows, tap_ids)
        matrices.append(lam)
        scores[i] = lam.pnorm(p)
    return ScoreOutput(scores, matrices)


def score_gaia_z(graph: ModelGraph, weights: WeightArchive, batch, cfg: ScorerConfig) -> ScoreOutput:
    """Zero-deflation abnormality of the argmax class' attribution gradients."""
    cfg.validate()
    if cfg.method != "gaia_z":
        raise ConfigurationError(f"score_gaia_z called with method {cfg.method!r}")
    tap_ids = resolve_taps(graph, cfg.taps)
    logits, tape = forward(graph, weights, batch, taps=tap_ids)
    grads = backward(tape, as_tensor(_one_hot_argmax(logits.data)))
    rows = {tid: _density_rows(grads[tid].data, cfg.tau) for tid in tap_ids}
    return _assemble(rows, tap_ids, logits.shape[0], cfg.p)


def score_gaia_a(graph: ModelGraph, weights: WeightArchive, batch, cfg: ScorerConfig) -> ScoreOutput:
    """Channel-wise average abnormality with label-space fusion.

    two_stage (default): inner gradients of the feature extractor seeded with
    ones at the last feature map, divided by the square root of the output
    component (fused log-softmax gradient at the last feature map, classifier
    only). The other fusion modes reproduce the single-component ablations.
    """
    cfg.validate()
    if cfg.method != "gaia_a":
        raise ConfigurationError(f"score_gaia_a called with method {cfg.method!r}")
    tap_ids = resolve_taps(graph, cfg.taps)

    if cfg.fusion == "top1_label":
        logits, tape = forward(graph, weights, batch, taps=tap_ids)
        grads = backward(tape, as_tensor(_one_hot_argmax(logits.data)))
        rows = {tid: _spatial_mean_abs(grads[tid].data) for tid in tap_ids}
        return _assemble(rows, tap_ids, logits.shape[0], cfg.p)

    if cfg.fusion == "inner_only":
        a_last, tape = forward_features(graph, weights, batch, taps=tap_ids)
        grads = backward(tape, as_tensor(np.ones(a_last.shape, dtype=np.float32)))
        rows = {tid: _spatial_mean_abs(grads[tid].data) for tid in tap_ids}
        return _assemble(rows, tap_ids, a_last.shape[0], cfg.p)

    if cfg.fusion == "output_only":
        a_last = plain_features(graph, weights, batch)
        e_out = _output_component(graph, weights, a_last)
        out = ScoreOutput(
            e_out.copy(),
            [AbnormalityMatrix.from_rows([np.array([v])], ("output",)) for v in e_out],
            zero_output_component=e_out == 0.0,
        )
        return out

    # two_stage
    a_last, phi_tape = forward_features(graph, weights, batch, taps=tap_ids)
    inner = backward(phi_tape, as_tensor(np.ones(a_last.shape, dtype=np.float32)))
    e_out = _output_component(graph, weights, a_last)
    denom = np.sqrt(np.maximum(e_out, cfg.eps_floor))
    rows = {
        tid: _spatial_mean_abs(inner[tid].data) / denom[:, None] for tid in tap_ids
    }
    result = _assemble(rows, tap_ids, a_last.shape[0], cfg.p)
    result.zero_output_component = e_out == 0.0
    return result


def _output_component(graph: ModelGraph, weights: WeightArchive, a_last: Tensor) -> np.ndarray:
    """Per-sample mean absolute fused log-softmax gradient at the last feature map."""
    logits, psi_tape = forward_classifier(graph, weights, a_last)
    seed = fused_logsoftmax_seed(logits.data)
    out_grad = backward(psi_tape, as_tensor(seed))["__last_feature__"].data
    flat = np.abs(out_grad.reshape(out_grad.shape[0], -1)).astype(np.float64)
    return flat.mean(axis=1)


def score_batch(graph: ModelGraph, weights: WeightArchive, batch, cfg: ScorerConfig) -> ScoreOutput:
    if cfg.method == "gaia_z":
        return score_gaia_z(graph, weights, batch, cfg)
    return score_gaia_a(graph, weights, batch, cfg)


# ---------------------------------------------------------------------------
# estimator API
# ---------------------------------------------------------------------------


def _as_images(X) -> Tensor:
    if isinstance(X, SampleBatch):
        return X.images
    if isinstance(X, Tensor):
        return X
    return as_tensor(X, "X")


class _PosthocScorer(BaseEstimator):
    """Shared plumbing of the post-hoc OOD scorers.

    Subclasses provide ``_config()`` and work on a fixed (graph, weights)
    pair; ``fit`` only validates, matching the post-hoc setting where the
    model is frozen and no outlier data is available.
    """

    def __init__(self, graph=None, weights=None, gamma=None, batch_size=64):
        self.graph = graph
        self.weights = weights
        self.gamma = gamma
        self.batch_size = batch_size

    def _validate(self) -> None:
        if self.graph is None or self.weights is None:
            raise ConfigurationError("graph and weights must be provided")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")

    def fit(self, X=None, y=None):
        self._validate()
        self.is_fitted_ = True
        return self

    def _score_chunk(self, images: Tensor) -> np.ndarray:
        raise NotImplementedError

    def score_samples(self, X) -> np.ndarray:
        """Per-sample OOD scores, higher means more OOD."""
        self._validate()
        images = _as_images(X)
        chunks = []
        for start in range(0, images.shape[0], self.batch_size):
            chunk = Tensor(images.data[start : start + self.batch_size].copy())
            chunks.append(self._score_chunk(chunk))
        return np.concatenate(chunks)

    def _require_gamma(self) -> float:
        if self.gamma is None:
            raise ConfigurationError("gamma (decision threshold) is not set")
        return float(self.gamma)

    def decision_function(self, X) -> np.ndarray:
        """Positive for in-distribution, in line with sklearn outlier detectors."""
        return self._require_gamma() - self.score_samples(X)

    def predict(self, X) -> np.ndarray:
        """+1 for in-distribution, -1 for OOD; the boundary counts as in."""
        gamma = self._require_gamma()
        return np.where(self.score_samples(X) > gamma, -1, 1)


class GaiaZScorer(_PosthocScorer):
    """Zero-deflation abnormality scorer (higher score = more OOD)."""

    def __init__(self, graph=None, weights=None, taps=("block3", "block4"), tau=0.0,
                 p=2.0, gamma=None, batch_size=64):
        super().__init__(graph, weights, gamma, batch_size)
        self.taps = taps
        self.tau = tau
        self.p = p

    def _config(self) -> ScorerConfig:
        return ScorerConfig(method="gaia_z", taps=tuple(self.taps), tau=self.tau, p=self.p)

    def _validate(self) -> None:
        super()._validate()
        self._config().validate()
        self.tap_ids_ = resolve_taps(self.graph, self.taps)

    def _score_chunk(self, images: Tensor) -> np.ndarray:
        return score_gaia_z(self.graph, self.weights, images, self._config()).scores


class GaiaAScorer(_PosthocScorer):
    """Channel-wise average abnormality scorer (higher score = more OOD)."""

    def __init__(self, graph=None, weights=None, taps=("block3", "block4"), p=2.0,
                 fusion="two_stage", eps_floor=1e-12, gamma=None, batch_size=64):
        super().__init__(graph, weights, gamma, batch_size)
        self.taps = taps
        self.p = p
        self.fusion = fusion
        self.eps_floor = eps_floor

    def _config(self) -> ScorerConfig:
        return ScorerConfig(method="gaia_a", taps=tuple(self.taps), p=self.p,
                            fusion=self.fusion, eps_floor=self.eps_floor)

    def _validate(self) -> None:
        super()._validate()
        self._config().validate()
        self.tap_ids_ = resolve_taps(self.graph, self.taps)

    def _score_chunk(self, images: Tensor) -> np.ndarray:
        return score_gaia_a(self.graph, self.weights, images, self._config()).scores
