"""Conditional density families: log densities, simulation, scores."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltlik.density import (
    DensityError,
    GaussianVar,
    GaussianVarParams,
    LogNormalVar,
    finite_difference_score,
)
from tiltlik.oracles import gh_expectation
from tiltlik.rng import substream

LOG_2PI = np.log(2.0 * np.pi)


def std_normal_phi(density):
    return density.pack(
        GaussianVarParams(np.zeros(2), np.zeros((2, 2)), np.eye(2))
    )


def generic_phi(density):
    return density.pack(
        GaussianVarParams(
            np.array([0.3, -0.2]),
            np.array([[0.5, 0.1], [-0.3, 0.8]]),
            np.array([[1.2, 0.0], [0.3, 0.9]]),
        )
    )


class TestGaussianLogpdf:
    def test_standard_normal_at_origin(self):
        g = GaussianVar(2, 2)
        val = g.logpdf(np.zeros(2), np.array([3.0, -1.0]), std_normal_phi(g))
        assert val == pytest.approx(-LOG_2PI, abs=1e-14)

    def test_radius_sqrt2_point(self):
        # identity covariance, zero mean: logpdf (1,1) = -log(2 pi) - 1
        g = GaussianVar(2, 2)
        val = g.logpdf(np.ones(2), np.zeros(2), std_normal_phi(g))
        assert val == pytest.approx(-LOG_2PI - 1.0, abs=1e-14)

    def test_normalizes_by_quadrature(self):
        g = GaussianVar(2, 2)
        phi = generic_phi(g)
        z = np.array([0.4, 1.3])
        params = g.unpack(phi)
        mass = gh_expectation(
            lambda x: np.exp(g.logpdf(x, z, phi))
            / np.exp(g.logpdf(x, z, phi)),
            params.intercept + params.transition @ z,
            params.chol_cov,
            10,
        )
        assert mass == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch_raises(self):
        g = GaussianVar(2, 2)
        with pytest.raises(DensityError):
            g.logpdf(np.zeros(3), np.zeros(2), std_normal_phi(g))
        with pytest.raises(DensityError):
            g.unpack(np.zeros(5))

    def test_nonpositive_cholesky_diagonal_rejected(self):
        with pytest.raises(DensityError):
            GaussianVarParams(np.zeros(2), np.zeros((2, 2)), -np.eye(2))


class TestLogNormal:
    def test_matches_gaussian_plus_jacobian(self):
        ln = LogNormalVar(2, 2)
        g = GaussianVar(2, 2)
        phi = generic_phi(ln)
        x = np.array([1.4, 0.7])
        z = np.array([0.9, 1.1])
        expected = g.logpdf(np.log(x), np.log(z), phi) - np.log(x).sum()
        assert ln.logpdf(x, z, phi) == pytest.approx(expected, rel=1e-14)

    def test_normalization_by_quadrature_on_log_scale(self):
        # integral of the level density equals the Gaussian mass in logs
        ln = LogNormalVar(2, 2)
        phi = generic_phi(ln)
        z = np.array([0.9, 1.1])
        params = ln.unpack(phi)
        mean = params.intercept + params.transition @ np.log(z)

        def level_density_ratio(y):
            # y are log-scale nodes; h(e^y) * e^{sum y} should equal the
            # Gaussian density in logs, so the ratio integrates to one
            x = np.exp(y)
            return np.exp(
                ln.logpdf(x, z, phi) + y.sum(axis=1)
                - GaussianVar.logpdf(ln, np.log(x), z, phi)
            )

        mass = gh_expectation(level_density_ratio, mean, params.chol_cov, 12)
        assert mass == pytest.approx(1.0, abs=1e-10)

    def test_levels_positive(self):
        ln = LogNormalVar(2, 2)
        phi = generic_phi(ln)
        draws = ln.simulate(np.array([1.0, 1.0]), phi, 5000, substream(3, 1))
        assert np.all(draws > 0)

    def test_rejects_nonpositive_levels(self):
        ln = LogNormalVar(2, 2)
        with pytest.raises(DensityError):
            ln.logpdf(np.array([-1.0, 1.0]), np.ones(2), generic_phi(ln))


class TestSimulate:
    def test_lln_standard_normal(self):
        g = GaussianVar(2, 2)
        draws = g.simulate(np.zeros(2), std_normal_phi(g), 10**6, substream(7))
        assert np.all(np.abs(draws.mean(axis=0)) < 4e-3)

    def test_seed_determinism(self):
        g = GaussianVar(2, 2)
        a = g.simulate(np.ones(2), generic_phi(g), 100, substream(11, 2))
        b = g.simulate(np.ones(2), generic_phi(g), 100, substream(11, 2))
        np.testing.assert_array_equal(a, b)

    def test_transition_mean(self):
        # transition [[0, 1], [0, 0.95]] at z = (0, 1): mean (1, 0.95)
        g = GaussianVar(2, 2)
        phi = g.pack(
            GaussianVarParams(
                np.zeros(2), np.array([[0.0, 1.0], [0.0, 0.95]]), np.eye(2)
            )
        )
        draws = g.simulate(np.array([0.0, 1.0]), phi, 200_000, substream(13))
        se = 1.0 / np.sqrt(draws.shape[0])
        assert abs(draws[:, 0].mean() - 1.0) < 4 * se
        assert abs(draws[:, 1].mean() - 0.95) < 4 * se

    def test_requires_positive_n(self):
        g = GaussianVar(2, 2)
        with pytest.raises(DensityError):
            g.simulate(np.zeros(2), std_normal_phi(g), 0, substream(1))

    def test_logpdf_mean_matches_entropy(self):
        # mean logpdf over own draws ~ -(differential entropy)
        g = GaussianVar(2, 2)
        phi = generic_phi(g)
        params = g.unpack(phi)
        z = np.array([0.2, -0.4])
        draws = g.simulate(z, phi, 10**5, substream(17))
        vals = g.logpdf(draws, z, phi)
        entropy = 0.5 * 2 * (1 + LOG_2PI) + np.log(np.diag(params.chol_cov)).sum()
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() + entropy) < 3 * se


class TestScore:
    def test_univariate_mode_is_zero(self):
        g = GaussianVar(1, 1)
        phi = g.pack(
            GaussianVarParams(np.array([0.7]), np.zeros((1, 1)), np.eye(1))
        )
        s = g.score(np.array([0.7]), np.array([0.0]), phi)
        assert s[0] == pytest.approx(0.0, abs=1e-14)

    def test_univariate_scale_identity(self):
        # d logf / d sigma = -1/sigma + x^2/sigma^3 vanishes at x = sigma;
        # sigma is the Cholesky entry of a zero-mean univariate family
        g = GaussianVar(1, 1)
        sigma = 1.7
        phi = g.pack(
            GaussianVarParams(
                np.array([0.0]), np.zeros((1, 1)), np.array([[sigma]])
            )
        )
        s = g.score(np.array([sigma]), np.array([0.0]), phi)
        assert s[-1] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("family", [GaussianVar, LogNormalVar])
    def test_matches_finite_differences(self, family):
        density = family(2, 2)
        gen = substream(23, family.__name__)
        for _ in range(20):
            params = GaussianVarParams(
                gen.normal(0, 0.5, 2),
                gen.normal(0, 0.4, (2, 2)),
                np.tril(gen.normal(0, 0.2, (2, 2))) + np.diag([1.1, 0.9]),
            )
            phi = density.pack(params)
            z = np.exp(gen.normal(0, 0.3, 2))
            x = density.simulate(z, phi, 1, gen)[0]
            an = density.score(x, z, phi)
            fd = finite_difference_score(density, x, z, phi)
            assert np.max(np.abs(an - fd) / (1.0 + np.abs(fd))) < 1e-5

    def test_batched_score_shape(self):
        g = GaussianVar(2, 2)
        phi = generic_phi(g)
        draws = g.simulate(np.ones(2), phi, 50, substream(29))
        s = g.score(draws, np.ones(2), phi)
        assert s.shape == (50, g.param_dim)


@settings(max_examples=25, deadline=None)
@given(
    mu=st.floats(-2, 2),
    sig=st.floats(0.3, 2.5),
    x=st.floats(-3, 3),
)
def test_univariate_score_closed_form(mu, sig, x):
    """Score of N(mu, sig^2) against the textbook expressions."""
    g = GaussianVar(1, 1)
    phi = g.pack(
        GaussianVarParams(np.array([mu]), np.zeros((1, 1)), np.array([[sig]]))
    )
    s = g.score(np.array([x]), np.array([0.0]), phi)
    assert s[0] == pytest.approx((x - mu) / sig**2, rel=1e-9, abs=1e-9)
    assert s[-1] == pytest.approx(
        -1.0 / sig + (x - mu) ** 2 / sig**3, rel=1e-9, abs=1e-9
    )
