"""Detection metrics (FPR95, AUROC) and score-file persistence.

Scores are oriented higher-is-more-OOD. The ID class is the positive class
for the 95% true-positive operating point: the threshold is the nearest-rank
95th percentile of the ID scores, and FPR95 is the fraction of OOD scores
at or below it (ties count as false positives). AUROC uses the rank
statistic with half credit for ties, OOD being the positive class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

CSV_HEADER = ["sample_id", "score", "origin", "dataset", "method"]
ORIGINS = ("ID", "OOD")


@dataclass(frozen=True)
class DetectionMetrics:
    fpr95: float
    auroc: float
    threshold: float
    n_id: int
    n_ood: int


def _scores_1d(values, name: str) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise UsageError(f"{name} score set is empty")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} scores contain non-finite values")
    return a


def compute_fpr95(id_scores, ood_scores) -> tuple[float, float]:
    """(FPR at 95% ID acceptance, nearest-rank threshold)."""
    ids = _scores_1d(id_scores, "ID")
    oods = _scores_1d(ood_scores, "OOD")
    n = ids.size
    k = (95 * n + 99) // 100  # smallest k with k/n >= 0.95, exact integer ceil
    threshold = float(np.sort(ids)[k - 1])
    fpr = float(np.count_nonzero(oods <= threshold)) / oods.size
    return fpr, threshold


def compute_auroc(id_scores, ood_scores) -> float:
    """P(ood > id) + 0.5 P(ood == id) over all pairs, via sorted rank counts."""
    ids = np.sort(_scores_1d(id_scores, "ID"))
    oods = _scores_1d(ood_scores, "OOD")
    below = np.searchsorted(ids, oods, side="left")
    below_or_equal = np.searchsorted(ids, oods, side="right")
    wins = int(below.sum())
    ties = int((below_or_equal - below).sum())
    return (wins + 0.5 * ties) / (ids.size * oods.size)


def evaluate_scores(id_scores, ood_scores) -> DetectionMetrics:
    fpr95, threshold = compute_fpr95(id_scores, ood_scores)
    auroc = compute_auroc(id_scores, ood_scores)
    return DetectionMetrics(fpr95, auroc, threshold,
                            np.asarray(id_scores).size, np.asarray(ood_scores).size)


# ---------------------------------------------------------------------------
# score records and CSV persistence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    score: float
    origin: str  # ID | OOD
    dataset: str
    method: str


@dataclass
class ScoreSet:
    """Labeled per-sample scores; the unit the evaluation harness consumes."""

    records: list[ScoreRecord] = field(default_factory=list)

    def add_batch(self, scores, origin: str, dataset: str, method: str,
                  ids=None) -> None:
        if origin not in ORIGINS:
            raise UsageError(f"origin must be ID or OOD, got {origin!r}")
        scores = np.asarray(scores, dtype=np.float64).ravel()
        if not np.all(np.isfinite(scores)):
            raise DataError("scores contain non-finite values")
        for i, s in enumerate(scores):
            sid = str(ids[i]) if ids is not None else str(i)
            self.records.append(ScoreRecord(sid, float(s), origin, dataset, method))

    def scores(self, origin: str) -> np.ndarray:
        return np.array([r.score for r in self.records if r.origin == origin], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.records)

    def metrics(self) -> DetectionMetrics:
        return evaluate_scores(self.scores("ID"), self.scores("OOD"))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.records:
                # repr round-trips doubles exactly, so persisted metrics
                # equal in-memory metrics
                writer.writerow([r.sample_id, repr(r.score), r.origin, r.dataset, r.method])

    @classmethod
    def from_csv(cls, path) -> "ScoreSet":
        path = Path(path)
        try:
            fh = open(path, "r", newline="", encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot read score file {path}: {e}") from e
        with fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}:1: empty score file") from None
            if header != CSV_HEADER:
                raise DataError(f"{path}:1: bad header {header}, expected {CSV_HEADER}")
            out = cls()
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 5:
                    raise DataError(f"{path}:{line_no}: expected 5 fields, got {len(row)}")
                sid, score_text, origin, dataset, method = row
                try:
                    score = float(score_text)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: bad score {score_text!r}") from None
                if not np.isfinite(score):
                    raise DataError(f"{path}:{line_no}: non-finite score")
                if origin not in ORIGINS:
                    raise DataError(f"{path}:{line_no}: origin must be ID or OOD, got {origin!r}")
                out.records.append(ScoreRecord(sid, score, origin, dataset, method))
        if not out.records:
            raise DataError(f"{path}: score file has no records")
        return out
