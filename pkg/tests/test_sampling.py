import math

import numpy as np
import pytest
from scipy import integrate

from tgp.errors import ConfigError, NumericalError
from tgp.model import BaseMeasure, TgpModel
from tgp.rff import sample_basis
from tgp.sampling import (
    WeightedSampleSet, draw_weighted, project, resample, tilt_factor, weighted_cdf,
    weighted_from_log, weighted_marginal_cdf, write_samples,
)


def tilted_1d(theta_scale=1.0, S=6, seed=0):
    basis = sample_basis(1, S, 0.8, seed=seed)
    theta = theta_scale * np.random.default_rng(seed).standard_normal(S)
    return TgpModel(basis, BaseMeasure([0.3], [[1.5]]), theta=theta)


class TestWeights:
    def test_zero_theta_uniform_weights(self):
        basis = sample_basis(2, 5, 1.0)
        m = TgpModel(basis, BaseMeasure(np.zeros(2), np.eye(2)), theta=np.zeros(5))
        ws = draw_weighted(m, 1000, seed=1)
        np.testing.assert_array_equal(ws.weights, 1.0)
        assert ws.ess == pytest.approx(1000)
        assert ws.normalizer() == (1.0, 0.0)

    def test_tilt_factor(self):
        m = tilted_1d()
        x = np.array([0.4])
        assert tilt_factor(m, x) == pytest.approx(math.exp(m.theta @ m.basis.phi(x)))
        assert tilt_factor(m, np.array([[0.4], [0.5]])).shape == (2,)

    def test_normalizer_matches_quadrature(self):
        m = tilted_1d()
        f = lambda t: math.exp(float(m.log_unnorm_density(np.array([t]))))  # noqa: E731
        want, _ = integrate.quad(f, -15, 15, limit=200)
        est, se = draw_weighted(m, 200_000, seed=2).normalizer()
        assert abs(est - want) <= 4 * se

    def test_mean_matches_quadrature(self):
        m = tilted_1d()
        f = lambda t: math.exp(float(m.log_unnorm_density(np.array([t]))))  # noqa: E731
        Z, _ = integrate.quad(f, -15, 15, limit=200)
        mean, _ = integrate.quad(lambda t: t * f(t), -15, 15, limit=200)
        ws = draw_weighted(m, 200_000, seed=3)
        assert float(ws.normalized @ ws.points[:, 0]) == pytest.approx(mean / Z, abs=0.01)

    def test_seed_determinism(self):
        m = tilted_1d()
        a, b = draw_weighted(m, 500, seed=9), draw_weighted(m, 500, seed=9)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_huge_log_weights_do_not_overflow(self):
        ws = weighted_from_log(np.zeros((3, 1)), [1000.0, 999.0, -np.inf])
        np.testing.assert_allclose(ws.weights, [1.0, math.exp(-1.0), 0.0])
        assert ws.log_shift == 1000.0

    def test_invalid_sets(self):
        with pytest.raises(NumericalError):
            weighted_from_log(np.zeros((2, 1)), [-np.inf, -np.inf])
        with pytest.raises(NumericalError):
            WeightedSampleSet(np.zeros((2, 1)), np.array([1.0, -1.0]))
        with pytest.raises(ConfigError):
            WeightedSampleSet(np.zeros((2, 1)), np.ones(3))
        with pytest.raises(ConfigError):
            draw_weighted(tilted_1d(), 0)


class TestResample:
    def test_only_positive_weight_points(self):
        ws = WeightedSampleSet(np.arange(4.0)[:, None], np.array([0.0, 1.0, 0.0, 3.0]))
        out = resample(ws, 4000, seed=0)
        assert set(out[:, 0].tolist()) <= {1.0, 3.0}
        assert np.mean(out[:, 0] == 3.0) == pytest.approx(0.75, abs=0.03)

    def test_deterministic(self):
        ws = WeightedSampleSet(np.arange(5.0)[:, None], np.ones(5))
        np.testing.assert_array_equal(resample(ws, 10, seed=4), resample(ws, 10, seed=4))

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            resample(WeightedSampleSet(np.zeros((1, 1)), np.ones(1)), 0)


class TestMarginals:
    def test_weighted_cdf_hand_values(self):
        F = weighted_cdf([2.0, 0.0, 1.0], [1.0, 1.0, 2.0], [-1.0, 0.0, 0.5, 1.0, 2.0, 3.0])
        np.testing.assert_allclose(F, [0.0, 0.25, 0.25, 0.75, 1.0, 1.0])

    def test_unsorted_grid(self):
        with pytest.raises(ConfigError):
            weighted_cdf([0.0], [1.0], [1.0, 0.0])

    def test_projection(self):
        ws = WeightedSampleSet(np.array([[1.0, 2.0], [3.0, -1.0]]), np.ones(2))
        v = np.array([0.6, 0.8])
        np.testing.assert_allclose(project(ws, v), [2.2, 1.0])
        np.testing.assert_allclose(weighted_marginal_cdf(ws, v, [1.5, 3.0]), [0.5, 1.0])
        with pytest.raises(ConfigError):
            project(ws, [1.0, 1.0])


class TestWriteSamples:
    def test_exact_round_trip(self, tmp_path):
        pts = np.random.default_rng(0).standard_normal((5, 2)) * 1e-3
        w = np.array([0.1, 1 / 3, 2.0, 1e-300, 5.0])
        path = tmp_path / "s.csv"
        write_samples(path, pts, w)
        back = np.loadtxt(path, delimiter=",")
        np.testing.assert_array_equal(back[:, :2], pts)
        np.testing.assert_array_equal(back[:, 2], w)
