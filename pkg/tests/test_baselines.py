"""MSP and Energy reference scorers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaia_ood.baselines import EnergyScorer, MspScorer, score_energy, score_msp


class TestMsp:
    def test_uniform_logits(self):
        assert score_msp(np.zeros((1, 4)))[0] == pytest.approx(-0.25, abs=1e-12)

    def test_single_logit_is_most_id_extreme(self):
        assert score_msp(np.array([3.7]))[0] == pytest.approx(-1.0, abs=1e-12)

    def test_known_three_class_case(self):
        want = -np.exp(2.0) / (np.exp(2.0) + 2.0)
        assert score_msp(np.array([2.0, 0.0, 0.0]))[0] == pytest.approx(want, rel=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
    @settings(max_examples=100, deadline=None)
    def test_score_range(self, logits):
        c = len(logits)
        s = score_msp(np.array(logits))[0]
        assert -1.0 - 1e-12 <= s <= -1.0 / c + 1e-12


class TestEnergy:
    def test_zero_logits_ten_classes(self):
        assert score_energy(np.zeros((1, 10)))[0] == pytest.approx(-np.log(10.0), rel=1e-12)

    def test_shift_identity(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((8, 6)).astype(np.float32)
        base = score_energy(logits)
        for t in (-7.5, 0.25, 3.0):
            shifted = score_energy(logits + np.float32(t))
            np.testing.assert_allclose(shifted, base - t, atol=1e-5)

    def test_matches_float64_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            logits = (rng.standard_normal(7) * rng.uniform(0.1, 20)).astype(np.float32)
            want = -float(np.log(np.sum(np.exp(logits.astype(np.float64)))))
            assert score_energy(logits)[0] == pytest.approx(want, abs=1e-5)

    def test_large_logits_stay_finite(self):
        assert np.isfinite(score_energy(np.array([[1e4, -1e4, 500.0]]))).all()


class TestLogitsOnlyDependence:
    def test_same_logits_same_scores(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((5, 4))
        assert np.array_equal(score_msp(logits), score_msp(logits.copy()))
        assert np.array_equal(score_energy(logits), score_energy(logits.copy()))

    def test_estimators_agree_with_functions(self, tiny_model, tiny_batch):
        graph, weights = tiny_model
        from gaia_ood.graph import plain_forward

        logits = plain_forward(graph, weights, tiny_batch).data
        msp = MspScorer(graph=graph, weights=weights).fit()
        energy = EnergyScorer(graph=graph, weights=weights).fit()
        assert np.array_equal(msp.score_samples(tiny_batch), score_msp(logits))
        assert np.array_equal(energy.score_samples(tiny_batch), score_energy(logits))
