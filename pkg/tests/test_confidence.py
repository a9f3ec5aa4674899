import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmreg import (ConfidenceTier, chi2_cdf, chi2_inv, classify,
                    orientation_score, position_score, tangent_frames)
from ssmreg.confidence import DEFAULT_LADDER, ConfidenceError

from .util import random_rotation, random_unit


class TestChi2Inv:
    def test_table_values(self):
        assert chi2_inv(0.95, 3) == pytest.approx(7.814728, abs=1e-5)
        assert chi2_inv(0.95, 2) == pytest.approx(5.991465, abs=1e-5)

    def test_two_dof_closed_form(self):
        # chi-square with 2 DOF is exponential: quantile -2 ln(1 - p)
        for p in (0.5, 0.9, 0.99, 0.999999):
            assert chi2_inv(p, 2) == pytest.approx(-2 * np.log(1 - p), rel=1e-9)

    def test_small_p_limit(self):
        assert chi2_inv(1e-12, 3) < 1e-3

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.uniform(0.01, 0.999999)
            k = int(rng.integers(1, 9001))
            assert chi2_inv(p, k) == pytest.approx(
                scipy.stats.chi2.ppf(p, k), rel=1e-8, abs=1e-8)

    def test_roundtrip_cdf(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = rng.uniform(0.001, 0.999999)
            k = int(rng.integers(1, 9001))
            x = chi2_inv(p, k)
            assert scipy.stats.chi2.cdf(x, k) == pytest.approx(p, abs=1e-6)

    @given(st.floats(0.01, 0.99), st.floats(0.001, 0.009),
           st.integers(1, 500))
    @settings(max_examples=40, deadline=None)
    def test_strictly_increasing_in_p(self, p, dp, k):
        assert chi2_inv(p + dp, k) > chi2_inv(p, k)

    @given(st.floats(0.05, 0.999), st.integers(1, 1000))
    @settings(max_examples=40, deadline=None)
    def test_increasing_in_dof(self, p, k):
        assert chi2_inv(p, k + 1) > chi2_inv(p, k)

    def test_domain_errors(self):
        with pytest.raises(ConfidenceError):
            chi2_inv(0.0, 3)
        with pytest.raises(ConfidenceError):
            chi2_inv(1.0, 3)
        with pytest.raises(ConfidenceError):
            chi2_inv(0.5, 0)


class TestPositionScore:
    def test_zero_residuals(self):
        assert position_score(np.zeros((5, 3)), np.eye(3)) == 0.0
        tier, p = classify(0.0, 0.0, 5)
        assert tier == ConfidenceTier.VERY_CONFIDENT
        assert p == 0.95

    def test_matched_noise_expectation(self):
        # residuals drawn from the assumed covariance: E[E_p] = 3 n
        rng = np.random.default_rng(3)
        a = rng.normal(size=(3, 3)) * 0.5
        sigma = a @ a.T + np.eye(3)
        chol = np.linalg.cholesky(sigma)
        n = 2000
        trials = [position_score(rng.standard_normal((n, 3)) @ chol.T, sigma)
                  for _ in range(30)]
        assert np.mean(trials) == pytest.approx(3 * n, rel=0.02)

    def test_single_gross_residual_fails_small_n(self):
        n = 10
        resid = np.zeros((n, 3))
        resid[0] = [10.0, 0.0, 0.0]  # 10 sigma
        e_p = position_score(resid, np.eye(3))
        assert e_p == pytest.approx(100.0)
        assert e_p > chi2_inv(0.95, 3 * n)


class TestOrientationScore:
    def test_perfectly_aligned(self):
        rng = np.random.default_rng(4)
        y = random_unit(rng, size=8)
        g1, g2 = tangent_frames(y)
        assert orientation_score(y, y, g1, g2, 5.0, 1.0) == pytest.approx(0.0)

    def test_single_pair_hand_evaluation(self):
        # rotate the normal by theta within the gamma1 plane
        kappa, beta = 6.0, 1.5
        theta = 0.3
        x_n = np.array([0.0, 0.0, 1.0])
        g1 = np.array([1.0, 0.0, 0.0])
        g2 = np.array([0.0, 1.0, 0.0])
        y_n = np.array([np.sin(theta), 0.0, np.cos(theta)])
        e_o = orientation_score(y_n[None], x_n[None], g1[None], g2[None],
                                kappa, beta)
        expected = kappa * theta**2 + (kappa - 2 * beta) * np.arcsin(np.sin(theta))**2
        assert e_o == pytest.approx(expected, rel=1e-10)

    def test_monte_carlo_mean_of_quadratic_form(self):
        # pairs drawn from the assumed Kent model: the three-term quadratic
        # form double counts the two tangential DOF, so its per-pair mean is
        # kappa*(sigma1^2+sigma2^2) + 2 = 2/(1-e^2) + 2, about 4.67 at
        # e = 0.5 (not 2; the chi-square comparison at 2n DOF is a separate
        # modeling choice)
        rng = np.random.default_rng(5)
        kappa, beta = 20.0, 5.0
        e = 2 * beta / kappa
        n = 100_000
        x_n = np.tile([0.0, 0.0, 1.0], (n, 1))
        g1, g2 = tangent_frames(x_n)
        d1 = rng.standard_normal(n) / np.sqrt(kappa - 2 * beta)
        d2 = rng.standard_normal(n) / np.sqrt(kappa + 2 * beta)
        y = x_n + d1[:, None] * g1 + d2[:, None] * g2
        y /= np.linalg.norm(y, axis=1)[:, None]
        e_o = orientation_score(y, x_n, g1, g2, kappa, beta)
        expected_per_pair = 2.0 / (1.0 - e**2) + 2.0
        assert e_o / n == pytest.approx(expected_per_pair, rel=0.03)

    def test_clamps_inverse_trig(self):
        y = np.array([[0.0, 0.0, 1.0 + 1e-14]])
        y /= np.linalg.norm(y)
        g1 = np.array([[1.0, 0.0, 0.0]])
        g2 = np.array([[0.0, 1.0, 0.0]])
        assert np.isfinite(orientation_score(y, y, g1, g2, 3.0, 0.5))

    def test_rigid_conjugation_invariance(self):
        # rotating data and model by a common axis-permutation rotation
        # leaves both scores unchanged (tangent frames map consistently)
        rng = np.random.default_rng(6)
        q = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        x_n = random_unit(rng, size=64)
        y_n = random_unit(rng, size=64)
        resid = rng.normal(size=(64, 3))
        a = rng.normal(size=(3, 3)) * 0.3
        sigma = a @ a.T + np.eye(3)
        g1, g2 = tangent_frames(x_n)
        e_o = orientation_score(y_n, x_n, g1, g2, 7.0, 2.0)
        e_p = position_score(resid, sigma)
        g1q, g2q = tangent_frames(x_n @ q.T)
        e_o_rot = orientation_score(y_n @ q.T, x_n @ q.T, g1q, g2q, 7.0, 2.0)
        e_p_rot = position_score(resid @ q.T, q @ sigma @ q.T)
        assert e_o_rot == pytest.approx(e_o, rel=1e-8)
        assert e_p_rot == pytest.approx(e_p, rel=1e-8)


class TestClassify:
    def test_ladder_brackets(self):
        n = 200
        # E_o between the 0.9975 and 0.9999 thresholds, E_p far below
        e_o = 0.5 * (chi2_inv(0.9975, 2 * n) + chi2_inv(0.9999, 2 * n))
        tier, p = classify(1.0, e_o, n)
        assert tier == ConfidenceTier.SOMEWHAT_CONFIDENT
        assert p == 0.9999

    def test_position_gate(self):
        n = 50
        e_p = chi2_inv(0.999999, 3 * n) * 1.01
        tier, p = classify(e_p, 0.0, n)
        assert tier == ConfidenceTier.NO_CONFIDENCE
        assert p is None

    @given(st.integers(1, 400), st.floats(0, 4000), st.floats(0, 4000),
           st.floats(0.0, 500.0), st.floats(0.0, 500.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_scores(self, n, e_p, e_o, dp, do):
        tier_hi, _ = classify(e_p + dp, e_o + do, n)
        tier_lo, _ = classify(e_p, e_o, n)
        assert tier_lo <= tier_hi

    def test_rejects_nonfinite(self):
        with pytest.raises(ConfidenceError):
            classify(float("nan"), 1.0, 10)

    def test_tier_serialization(self):
        assert str(ConfidenceTier.VERY_CONFIDENT) == "very_confident"
        assert ConfidenceTier.from_string("low_confidence") == \
            ConfidenceTier.LOW_CONFIDENCE
        assert len(DEFAULT_LADDER) == 4
