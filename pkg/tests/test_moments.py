"""Euler-equation moment models and their Jacobians."""

import numpy as np
import pytest

from tiltlik.moments import (
    MomentError,
    by_name,
    euler_crra,
    euler_log_utility,
    euler_quadratic,
    make_euler_crra,
    make_euler_log,
    make_euler_log_growth,
    make_euler_quadratic,
    moment_jacobian,
)
from tiltlik.oracles import (
    closed_form_tilted_normal,
    gh_expectation,
)
from tiltlik.rng import substream


class TestLogUtility:
    def test_exact_offset(self):
        assert euler_log_utility(
            np.array([1.0, 1 / 0.85]), np.array([1.0, 1.0]), [0.85]
        ) == pytest.approx(0.0, abs=1e-15)

    def test_direct_arithmetic(self):
        val = euler_log_utility(np.array([2.0, 2.0]), np.array([1.0, 1.0]), [0.85])
        assert val == pytest.approx(-0.15, abs=1e-15)

    def test_unit_discount_identity(self):
        # beta = 1 and R_next C_now = C_next gives zero
        val = euler_log_utility(np.array([3.0, 1.5]), np.array([2.0, 0.7]), [1.0])
        assert val == pytest.approx(0.0, abs=1e-15)

    def test_rejects_nonpositive_consumption(self):
        with pytest.raises(MomentError):
            euler_log_utility(np.array([-1.0, 1.0]), np.array([1.0, 1.0]), [0.9])


class TestCrra:
    def test_nests_log_utility_at_gamma_one(self):
        gen = substream(5, "nest")
        for _ in range(50):
            x = np.exp(gen.normal(0, 0.5, 2))
            z = np.exp(gen.normal(0, 0.5, 2))
            beta = gen.uniform(0.5, 0.99)
            assert euler_crra(x, z, [beta, 1.0]) == pytest.approx(
                euler_log_utility(x, z, [beta]), rel=1e-12
            )

    def test_flat_consumption(self):
        val = euler_crra(np.array([1.0, 1 / 0.85]), np.array([1.0, 1.0]), [0.85, 5.0])
        assert val == pytest.approx(0.0, abs=1e-14)

    def test_direct_arithmetic(self):
        val = euler_crra(np.array([2.0, 2.0]), np.array([1.0, 1.0]), [0.85, 2.0])
        assert val == pytest.approx(0.85 * 2 * 0.25 - 1.0, abs=1e-14)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(MomentError):
            euler_crra(np.ones(2), np.ones(2), [0.9, 0.0])


class TestQuadratic:
    def test_unit_discount(self):
        assert euler_quadratic(
            np.array([2.0, 0.5]), np.array([1.0, 3.0]), [1.0]
        ) == pytest.approx(0.0, abs=1e-15)

    def test_offset(self):
        assert euler_quadratic(
            np.array([1.0, 1.0]), np.array([0.85, 2.0]), [0.85]
        ) == pytest.approx(0.0, abs=1e-15)

    def test_zero_mean_under_tilted_density_by_quadrature(self):
        # the enforced restriction holds exactly under the analytic tilt
        mq = make_euler_quadratic()
        gen = substream(9, "quadgrid")
        for _ in range(8):
            c_t = gen.uniform(0.3, 1.5)
            r_t = gen.uniform(0.6, 1.6)
            beta = gen.uniform(0.7, 0.95)
            rho_c = gen.uniform(-0.5, 0.5)
            rho_r = gen.uniform(-0.5, 0.5)
            t = closed_form_tilted_normal(c_t, r_t, beta, rho_c, rho_r)
            val = gh_expectation(
                lambda x: mq.evaluate(x, np.array([c_t, r_t]), [beta])[:, 0],
                t.mean,
                np.linalg.cholesky(t.cov),
                40,
            )
            assert abs(val) < 1e-8


class TestJacobians:
    def test_log_utility_unit_point(self):
        m = make_euler_log()
        jac = moment_jacobian(m, np.ones(2), np.ones(2), [0.9])
        assert jac[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_crra_flat_consumption_gamma_derivative(self):
        m = make_euler_crra()
        jac = moment_jacobian(m, np.array([1.0, 1.3]), np.array([1.0, 0.8]), [0.9, 3.0])
        assert jac[0, 1] == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize(
        "factory", [make_euler_log, make_euler_crra, make_euler_quadratic,
                    lambda: make_euler_log_growth(0.05)]
    )
    def test_analytic_matches_finite_differences(self, factory):
        model = factory()
        gen = substream(31, model.name)
        fd_model = type(model)(
            name=model.name,
            theta_dim=model.theta_dim,
            m_dim=model.m_dim,
            evaluator=model.evaluator,
        )
        for _ in range(1000 // 4):
            x = np.exp(gen.normal(0, 0.4, 2))
            z = np.exp(gen.normal(0, 0.4, 2))
            if model.theta_dim == 1:
                theta = [gen.uniform(0.5, 0.99)]
            else:
                theta = [gen.uniform(0.5, 0.99), gen.uniform(0.5, 6.0)]
            an = model.jacobian(x, z, theta)
            fd = fd_model.jacobian(x, z, theta)
            assert np.max(np.abs(an - fd) / (1.0 + np.abs(fd))) < 1e-5

    def test_batch_shapes(self):
        m = make_euler_crra()
        x = np.exp(substream(3).normal(0, 0.3, (40, 2)))
        vals = m.evaluate(x, np.ones(2), [0.9, 2.0])
        jac = m.jacobian(x, np.ones(2), [0.9, 2.0])
        assert vals.shape == (40, 1)
        assert jac.shape == (40, 1, 2)


class TestRegistry:
    def test_known_names(self):
        for name in ("euler_log", "euler_crra", "euler_quadratic"):
            assert by_name(name).name == name

    def test_unknown_name(self):
        with pytest.raises(MomentError):
            by_name("euler_recursive")


class TestGrowthMoment:
    def test_plain_growth_equals_log_utility_with_unit_consumption(self):
        m = make_euler_log_growth(0.0)
        x = np.array([1.2, 1.05])
        z = np.array([0.9, 1.0])
        expected = euler_log_utility(x, np.array([1.0, z[1]]), [0.9])
        assert m.evaluate(x, z, [0.9])[0] == pytest.approx(expected, rel=1e-14)

    def test_measurement_error_scaling(self):
        plain = make_euler_log_growth(0.0)
        adj = make_euler_log_growth(0.05)
        x = np.array([1.2, 1.05])
        z = np.ones(2)
        lhs = adj.evaluate(x, z, [0.9])[0] + 1.0
        rhs = (plain.evaluate(x, z, [0.9])[0] + 1.0) * np.exp(-0.025)
        assert lhs == pytest.approx(rhs, rel=1e-14)
