import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmreg import (KentNoise, NoiseError, OrientedPoint, PositionNoise,
                    SimilarityTransform, circular_sd, compose_covariance,
                    kent_from_sd, mahalanobis_sq, match_nll,
                    mean_angular_error, sample_noise, sample_noise_batch,
                    tangent_frame, tangent_frames)

from .util import random_rotation, random_unit


class TestKentFromSd:
    def test_thirty_degrees(self):
        kappa, beta = kent_from_sd(30.0, 0.5)
        assert kappa == pytest.approx(1.0 / (np.pi / 6) ** 2, rel=1e-12)
        assert kappa == pytest.approx(3.6476, abs=1e-4)
        assert beta == pytest.approx(0.9119, abs=1e-4)

    def test_zero_eccentricity(self):
        _, beta = kent_from_sd(10.0, 0.0)
        assert beta == 0.0

    def test_ten_degrees(self):
        kappa, _ = kent_from_sd(10.0, 0.5)
        assert kappa == pytest.approx(32.828, abs=1e-3)

    def test_invalid(self):
        with pytest.raises(NoiseError):
            kent_from_sd(0.0, 0.5)
        with pytest.raises(NoiseError):
            kent_from_sd(10.0, 1.5)


class TestTangentFrame:
    def test_z_axis(self):
        g1, g2 = tangent_frame(np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(g1, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(g2, [0.0, 1.0, 0.0])

    def test_x_axis(self):
        g1, g2 = tangent_frame(np.array([1.0, 0.0, 0.0]))
        for g in (g1, g2):
            assert abs(g[0]) < 1e-12
        assert abs(g1 @ g2) < 1e-12

    @given(st.integers(0, 10**9))
    @settings(max_examples=100, deadline=None)
    def test_orthonormal_right_handed(self, seed):
        n = random_unit(np.random.default_rng(seed))
        g1, g2 = tangent_frame(n)
        assert abs(np.linalg.norm(g1) - 1) < 1e-12
        assert abs(np.linalg.norm(g2) - 1) < 1e-12
        assert abs(g1 @ g2) < 1e-12
        assert abs(g1 @ n) < 1e-12
        assert abs(g2 @ n) < 1e-12
        np.testing.assert_allclose(np.cross(g1, g2), n, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        normals = random_unit(rng, size=40)
        g1b, g2b = tangent_frames(normals)
        for k in range(40):
            g1, g2 = tangent_frame(normals[k])
            np.testing.assert_allclose(g1b[k], g1, atol=1e-15)
            np.testing.assert_allclose(g2b[k], g2, atol=1e-15)

    def test_zero_vector(self):
        with pytest.raises(NoiseError):
            tangent_frame(np.zeros(3))


class TestMahalanobis:
    def test_zero_residual(self):
        assert mahalanobis_sq(np.zeros(3), np.eye(3)) == 0.0

    def test_diagonal(self):
        assert mahalanobis_sq(np.array([0.0, 0.0, 2.0]),
                              np.diag([1.0, 1.0, 4.0])) == pytest.approx(1.0)

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.normal(size=(3, 3))
            sigma = a @ a.T + 0.1 * np.eye(3)
            r = rng.normal(size=3)
            expected = r @ np.linalg.inv(sigma) @ r
            assert mahalanobis_sq(r, sigma) == pytest.approx(expected, rel=1e-10)

    @given(st.integers(0, 10**9), st.floats(0.1, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_isotropic_scaling(self, seed, sd):
        r = np.random.default_rng(seed).normal(size=3)
        expected = float(r @ r) / sd**2
        assert mahalanobis_sq(r, sd**2 * np.eye(3)) == pytest.approx(expected, rel=1e-12)

    def test_non_spd(self):
        with pytest.raises(NoiseError):
            mahalanobis_sq(np.ones(3), -np.eye(3))


class TestMatchNll:
    def setup_method(self):
        self.pos = PositionNoise(np.eye(3))
        rng = np.random.default_rng(11)
        self.transform = SimilarityTransform(1.02, random_rotation(rng),
                                             rng.normal(size=3))

    def test_perfect_match_scores_minus_kappa(self):
        rng = np.random.default_rng(2)
        x = OrientedPoint(rng.normal(size=3), random_unit(rng))
        y_n = self.transform.rotate(x.normal)
        y = OrientedPoint(self.transform.apply(x.position), y_n)
        g1, g2 = tangent_frame(y_n)
        kent = KentNoise(5.0, 1.5, g1, g2)
        nll = match_nll(x, y, self.pos, kent, self.transform)
        assert nll == pytest.approx(-5.0, abs=1e-12)

    def test_unit_isotropic_residual(self):
        t = SimilarityTransform.identity()
        x = OrientedPoint(np.zeros(3), np.array([0.0, 0.0, 1.0]))
        y = OrientedPoint(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
        kent = KentNoise(4.0, 0.0)
        nll = match_nll(x, y, self.pos, kent, t)
        assert nll == pytest.approx(-4.0 + 0.5, abs=1e-12)

    def test_termwise_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = rng.normal(size=(3, 3)) * 0.4
            pos = PositionNoise(a @ a.T + np.eye(3),
                                0.1 * np.eye(3))
            transform = SimilarityTransform(rng.uniform(0.9, 1.1),
                                            random_rotation(rng),
                                            rng.normal(size=3))
            x = OrientedPoint(rng.normal(size=3) * 5, random_unit(rng))
            y = OrientedPoint(rng.normal(size=3) * 5, random_unit(rng))
            gref = random_unit(rng)
            g1, g2 = tangent_frame(gref)
            kappa, beta = 6.0, 2.0
            kent = KentNoise(kappa, beta, g1, g2)

            # independent term-by-term recomputation
            sigma = transform.r @ pos.sigma_x @ transform.r.T + pos.sigma_y
            resid = y.position - (transform.a * transform.r @ x.position
                                  + transform.t)
            rxn = transform.r @ x.normal
            expected = (0.5 * resid @ np.linalg.inv(sigma) @ resid
                        - kappa * y.normal @ rxn
                        - beta * ((g1 @ rxn) ** 2 - (g2 @ rxn) ** 2))
            nll = match_nll(x, y, pos, kent, transform)
            assert nll == pytest.approx(expected, rel=1e-10)

    def test_monotone_along_ray(self):
        t = SimilarityTransform.identity()
        rng = np.random.default_rng(9)
        x = OrientedPoint(np.zeros(3), np.array([0.0, 0.0, 1.0]))
        direction = random_unit(rng)
        kent = KentNoise(3.0, 0.0)
        values = [match_nll(x, OrientedPoint(c * direction, x.normal),
                            self.pos, kent, t)
                  for c in (4.0, 2.0, 1.0, 0.5, 0.0)]
        assert values == sorted(values, reverse=True)

    def test_minimized_at_aligned_normal(self):
        t = SimilarityTransform.identity()
        rng = np.random.default_rng(13)
        x = OrientedPoint(np.zeros(3), random_unit(rng))
        g1, g2 = tangent_frame(x.normal)
        kent = KentNoise(8.0, 2.0, g1, g2)
        best = match_nll(x, OrientedPoint(np.zeros(3), x.normal),
                         self.pos, kent, t)
        for _ in range(50):
            y = OrientedPoint(np.zeros(3), random_unit(rng))
            assert match_nll(x, y, self.pos, kent, t) >= best - 1e-12


class TestCircularSd:
    def test_all_zero(self):
        assert circular_sd(np.zeros(10)) == 0.0

    def test_constant_angle(self):
        theta = 0.4
        expected = np.sqrt(-2 * np.log(np.cos(theta)))
        assert circular_sd(np.full(7, theta)) == pytest.approx(expected, rel=1e-12)

    def test_wrapped_gaussian_monte_carlo(self):
        rng = np.random.default_rng(17)
        draws = np.abs(rng.normal(0.0, 0.2, size=100_000))
        assert circular_sd(draws) == pytest.approx(0.2, abs=0.01)

    def test_empty(self):
        with pytest.raises(NoiseError):
            circular_sd(np.array([]))

    def test_mean_angular_error(self):
        assert mean_angular_error(np.array([0.1, 0.3])) == pytest.approx(0.2)


class TestSampleNoise:
    def test_near_noiseless_limit(self):
        rng = np.random.default_rng(0)
        pos = PositionNoise(1e-20 * np.eye(3))
        kent = KentNoise(1e12, 0.0)
        x = OrientedPoint(np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.0]))
        out = sample_noise(rng, pos, kent, x)
        np.testing.assert_allclose(out.position, x.position, atol=1e-8)
        np.testing.assert_allclose(out.normal, x.normal, atol=1e-5)

    def test_position_sd_monte_carlo(self):
        # generator profile: SDs 0.5 x 0.5 x 0.75 mm
        rng = np.random.default_rng(21)
        pos = PositionNoise.from_sds([0.5, 0.5, 0.75])
        kent = KentNoise.from_sd(10.0, 0.5)
        n = 100_000
        p = np.zeros((n, 3))
        nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
        p_out, _ = sample_noise_batch(rng, pos, kent, p, nrm)
        sds = p_out.std(axis=0)
        np.testing.assert_allclose(sds, [0.5, 0.5, 0.75], rtol=0.05)

    def test_anisotropy_ratio(self):
        # e = 0.5: variance ratio along gamma1/gamma2 = (k+2b)/(k-2b) = 3
        rng = np.random.default_rng(23)
        pos = PositionNoise(1e-20 * np.eye(3))
        kent = KentNoise.from_sd(10.0, 0.5)
        n = 200_000
        normal = np.array([0.0, 0.0, 1.0])
        g1, g2 = tangent_frame(normal)
        _, n_out = sample_noise_batch(rng, pos, kent,
                                      np.zeros((n, 3)), np.tile(normal, (n, 1)))
        c1 = n_out @ g1
        c2 = n_out @ g2
        assert c1.var() > c2.var()
        assert c1.var() / c2.var() == pytest.approx(3.0, rel=0.05)

    def test_deterministic_given_seed(self):
        pos = PositionNoise.from_sds([1.0, 1.0, 2.0])
        kent = KentNoise.from_sd(30.0, 0.5)
        p = np.random.default_rng(1).normal(size=(50, 3))
        nrm = random_unit(np.random.default_rng(2), size=50)
        a = sample_noise_batch(np.random.default_rng(99), pos, kent, p, nrm)
        b = sample_noise_batch(np.random.default_rng(99), pos, kent, p, nrm)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_rejects_unsamplable_kent(self):
        kent = KentNoise(2.0, 1.0)  # kappa - 2 beta = 0
        with pytest.raises(NoiseError):
            sample_noise(np.random.default_rng(0),
                         PositionNoise(np.eye(3)), kent,
                         OrientedPoint(np.zeros(3), np.array([1.0, 0, 0])))


class TestPositionNoise:
    def test_compose_covariance(self):
        rng = np.random.default_rng(31)
        r = random_rotation(rng)
        pos = PositionNoise.from_sds([1.0, 1.0, 2.0], sigma_y=0.3 * np.eye(3))
        sigma = compose_covariance(pos, r)
        np.testing.assert_allclose(sigma, r @ np.diag([1, 1, 4.0]) @ r.T
                                   + 0.3 * np.eye(3), atol=1e-12)

    def test_validation(self):
        with pytest.raises(NoiseError):
            PositionNoise(np.diag([1.0, 1.0, 0.0]))
        with pytest.raises(NoiseError):
            PositionNoise(np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))
        with pytest.raises(NoiseError):
            KentNoise(1.0, 0.8)
