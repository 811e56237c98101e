"""FPR95/AUROC against counting oracles, plus score persistence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaia_ood.errors import DataError, UsageError
from gaia_ood.metrics import (
    ScoreSet,
    compute_auroc,
    compute_fpr95,
    evaluate_scores,
)

score_lists = st.lists(st.integers(-50, 50), min_size=1, max_size=100)


def pairwise_auroc(ids, oods):
    wins = ties = 0
    for o in oods:
        for i in ids:
            if o > i:
                wins += 1
            elif o == i:
                ties += 1
    return (wins + 0.5 * ties) / (len(ids) * len(oods))


def nearest_rank_oracle(ids, oods):
    s = sorted(ids)
    n = len(s)
    gamma = None
    for candidate in s:
        if sum(1 for v in s if v <= candidate) / n >= 0.95:
            gamma = candidate
            break
    fpr = sum(1 for v in oods if v <= gamma) / len(oods)
    return fpr, gamma


class TestFpr95:
    def test_nearest_rank_threshold_on_1_to_100(self):
        ids = np.arange(1, 101, dtype=float)
        fpr, gamma = compute_fpr95(ids, np.array([90.0, 96.0]))
        assert gamma == 95.0
        assert fpr == 0.5

    def test_perfect_separation(self):
        fpr, _ = compute_fpr95(np.arange(10, dtype=float), np.arange(100, 110, dtype=float))
        assert fpr == 0.0

    def test_identical_multisets(self):
        ids = np.arange(100, dtype=float)
        fpr, _ = compute_fpr95(ids, ids.copy())
        assert fpr == 0.95

    @given(score_lists, score_lists)
    @settings(max_examples=150, deadline=None)
    def test_matches_counting_oracle(self, ids, oods):
        fpr, gamma = compute_fpr95(np.array(ids, float), np.array(oods, float))
        want_fpr, want_gamma = nearest_rank_oracle(ids, oods)
        assert gamma == want_gamma
        assert fpr == want_fpr

    def test_adding_high_ood_never_increases_fpr(self):
        rng = np.random.default_rng(0)
        ids = rng.standard_normal(50)
        oods = rng.standard_normal(30)
        fpr, gamma = compute_fpr95(ids, oods)
        fpr2, _ = compute_fpr95(ids, np.append(oods, gamma + 1.0))
        assert fpr2 <= fpr

    def test_empty_sets_rejected(self):
        with pytest.raises(UsageError):
            compute_fpr95(np.array([]), np.array([1.0]))
        with pytest.raises(UsageError):
            compute_fpr95(np.array([1.0]), np.array([]))


class TestAuroc:
    def test_perfect_separation(self):
        assert compute_auroc(np.array([0.0, 1.0]), np.array([2.0, 3.0])) == 1.0

    def test_all_ties(self):
        x = np.array([1.0, 2.0, 3.0])
        assert compute_auroc(x, x.copy()) == 0.5

    @given(score_lists, score_lists)
    @settings(max_examples=150, deadline=None)
    def test_matches_pairwise_oracle_exactly(self, ids, oods):
        got = compute_auroc(np.array(ids, float), np.array(oods, float))
        assert got == pairwise_auroc(ids, oods)

    @given(score_lists, score_lists)
    @settings(max_examples=80, deadline=None)
    def test_negation_antisymmetry(self, ids, oods):
        a = compute_auroc(np.array(ids, float), np.array(oods, float))
        b = compute_auroc(-np.array(ids, float), -np.array(oods, float))
        assert abs((1.0 - a) - b) < 1e-12

    @given(score_lists, score_lists, st.integers(1, 9), st.integers(-10, 10))
    @settings(max_examples=80, deadline=None)
    def test_invariant_under_increasing_affine_map(self, ids, oods, scale, shift):
        ids = np.array(ids, float)
        oods = np.array(oods, float)
        a = compute_auroc(ids, oods)
        b = compute_auroc(scale * ids + shift, scale * oods + shift)
        assert a == b

    def test_empty_sets_rejected(self):
        with pytest.raises(UsageError):
            compute_auroc(np.array([]), np.array([1.0]))


class TestScoreSet:
    def _example(self):
        sset = ScoreSet()
        rng = np.random.default_rng(1)
        sset.add_batch(rng.standard_normal(40) / 3.0, "ID", "cifar-ish", "gaia-z")
        sset.add_batch(rng.standard_normal(25) / 3.0 + 0.7, "OOD", "noise", "gaia-z")
        return sset

    def test_csv_round_trip_preserves_metrics_exactly(self, tmp_path):
        sset = self._example()
        in_memory = sset.metrics()
        path = tmp_path / "scores.csv"
        sset.to_csv(path)
        reloaded = ScoreSet.from_csv(path).metrics()
        assert reloaded == in_memory  # exact float equality via repr round-trip

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,value\n1,2\n")
        with pytest.raises(DataError, match=":1: bad header"):
            ScoreSet.from_csv(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("sample_id,score,origin,dataset,method\n0,1.5,ID,d,m\n1,notanumber,ID,d,m\n")
        with pytest.raises(DataError, match=":3: bad score"):
            ScoreSet.from_csv(path)

    def test_bad_origin_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("sample_id,score,origin,dataset,method\n0,1.5,MAYBE,d,m\n")
        with pytest.raises(DataError, match=":2: origin"):
            ScoreSet.from_csv(path)

    def test_header_only_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("sample_id,score,origin,dataset,method\n")
        with pytest.raises(DataError, match="no records"):
            ScoreSet.from_csv(path)

    def test_evaluate_scores_fields(self):
        m = evaluate_scores(np.arange(1, 101, dtype=float), np.array([90.0, 96.0]))
        assert m.n_id == 100 and m.n_ood == 2
        assert m.threshold == 95.0
        assert 0.0 <= m.fpr95 <= 1.0 and 0.0 <= m.auroc <= 1.0
