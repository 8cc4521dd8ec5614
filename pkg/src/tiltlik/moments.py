"""Conditional moment restriction models m(x, z, theta).

A `MomentModel` bundles a vectorized moment function with its Jacobian in
theta (analytic where supplied, central finite differences otherwise).  The
shipped instances are the consumption Euler equations under log, CRRA and
quadratic utility, written on level variables:

  euler_log        beta * C_now * R_next / C_next - 1
  euler_crra       beta * R_next * (C_next / C_now)^(-gamma) - 1
  euler_quadratic  beta * R_next * C_next - C_now

x is the next-period observation (C_next, R_next); z is the conditioning
point (C_now, R_now).  Densities defined on logs must hand level variables
to these functions (see `density.LogNormalVar`).  All solvers downstream
accept vector-valued moments even though the shipped instances are scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MomentModel",
    "MomentError",
    "euler_log_utility",
    "euler_crra",
    "euler_quadratic",
    "moment_jacobian",
    "make_euler_log",
    "make_euler_crra",
    "make_euler_quadratic",
    "make_euler_log_growth",
    "by_name",
]


class MomentError(ValueError):
    """Invalid inputs for a moment function."""


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def euler_log_utility(x, z, theta):
    """Log-utility Euler residual beta * C_now * R_next / C_next - 1."""
    xb, single = _as_batch(x)
    z = np.asarray(z, dtype=float)
    beta = float(np.atleast_1d(theta)[0])
    c_next, r_next = xb[:, 0], xb[:, 1]
    c_now = z[0]
    if c_now <= 0 or np.any(c_next <= 0):
        raise MomentError("consumption must be strictly positive")
    m = beta * c_now * r_next / c_next - 1.0
    return float(m[0]) if single else m


def euler_crra(x, z, theta):
    """CRRA Euler residual beta * R_next * (C_next / C_now)^(-gamma) - 1."""
    xb, single = _as_batch(x)
    z = np.asarray(z, dtype=float)
    beta, gamma = float(theta[0]), float(theta[1])
    if gamma <= 0:
        raise MomentError("risk aversion gamma must be positive")
    c_next, r_next = xb[:, 0], xb[:, 1]
    c_now = z[0]
    if c_now <= 0 or np.any(c_next <= 0):
        raise MomentError("consumption must be strictly positive")
    m = beta * r_next * (c_next / c_now) ** (-gamma) - 1.0
    return float(m[0]) if single else m


def euler_quadratic(x, z, theta):
    """Quadratic-utility Euler residual beta * R_next * C_next - C_now."""
    xb, single = _as_batch(x)
    z = np.asarray(z, dtype=float)
    beta = float(np.atleast_1d(theta)[0])
    m = beta * xb[:, 1] * xb[:, 0] - z[0]
    return float(m[0]) if single else m


@dataclass
class MomentModel:
    """Vector moment function with Jacobian and optional fast structure.

    evaluator(x, z, theta) must return (m_dim,) for a single x and
    (n, m_dim) for a batch.  jacobian, when given, follows the same shape
    convention with a trailing theta axis.  `beta_feature`, when given,
    certifies the structure m = theta[0] * feature(x, z) - 1 used by the
    Monte Carlo fast path.
    """

    name: str
    theta_dim: int
    m_dim: int
    evaluator: Callable
    jacobian_fn: Optional[Callable] = None
    beta_feature: Optional[Callable] = None
    fd_rel_step: float = 1e-6

    def evaluate(self, x, z, theta) -> np.ndarray:
        m = np.asarray(self.evaluator(x, z, theta), dtype=float)
        if np.asarray(x).ndim == 1:
            return m.reshape(self.m_dim)
        return m.reshape(-1, self.m_dim)

    def jacobian(self, x, z, theta) -> np.ndarray:
        if self.jacobian_fn is not None:
            jac = np.asarray(self.jacobian_fn(x, z, theta), dtype=float)
            if np.asarray(x).ndim == 1:
                return jac.reshape(self.m_dim, self.theta_dim)
            return jac.reshape(-1, self.m_dim, self.theta_dim)
        return self._fd_jacobian(x, z, theta)

    def _fd_jacobian(self, x, z, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        single = np.asarray(x).ndim == 1
        cols = []
        for k in range(self.theta_dim):
            h = self.fd_rel_step * max(1.0, abs(theta[k]))
            hi, lo = theta.copy(), theta.copy()
            hi[k] += h
            lo[k] -= h
            cols.append((self.evaluate(x, z, hi) - self.evaluate(x, z, lo)) / (2 * h))
        if single:
            return np.stack(cols, axis=-1).reshape(self.m_dim, self.theta_dim)
        return np.stack(cols, axis=-1).reshape(-1, self.m_dim, self.theta_dim)


def moment_jacobian(model: MomentModel, x, z, theta) -> np.ndarray:
    """Jacobian of the moment vector in theta for one observation."""
    return model.jacobian(x, z, theta)


def make_euler_log() -> MomentModel:
    def jac(x, z, theta):
        xb, single = _as_batch(x)
        z = np.asarray(z, dtype=float)
        d = z[0] * xb[:, 1] / xb[:, 0]
        return d[0] if single else d

    def feature(x, z):
        xb, _ = _as_batch(x)
        return np.asarray(z, dtype=float)[0] * xb[:, 1] / xb[:, 0]

    return MomentModel("euler_log", 1, 1, euler_log_utility, jac, feature)


def make_euler_crra() -> MomentModel:
    def jac(x, z, theta):
        xb, single = _as_batch(x)
        z = np.asarray(z, dtype=float)
        beta, gamma = float(theta[0]), float(theta[1])
        ratio = xb[:, 0] / z[0]
        core = xb[:, 1] * ratio ** (-gamma)
        d_beta = core
        d_gamma = -beta * core * np.log(ratio)
        out = np.stack([d_beta, d_gamma], axis=-1)
        return out[0] if single else out

    return MomentModel("euler_crra", 2, 1, euler_crra, jac)


def make_euler_quadratic() -> MomentModel:
    def jac(x, z, theta):
        xb, single = _as_batch(x)
        d = xb[:, 1] * xb[:, 0]
        return d[0] if single else d

    return MomentModel("euler_quadratic", 1, 1, euler_quadratic, jac)


def make_euler_log_growth(me_log_var: float = 0.0) -> MomentModel:
    """Log-utility Euler residual on growth data x = (dC_next, R_next).

    dC is the gross consumption growth level, so C_now / C_next = 1 / dC_next.
    A known log-additive measurement error on consumption growth with
    variance `me_log_var` inflates E[1 / dC~] by exp(me_log_var / 2); the
    residual carries the offsetting factor so the restriction refers to true
    consumption:

        m = beta * exp(-me_log_var / 2) * R_next / dC_next - 1
    """
    adj = float(np.exp(-0.5 * me_log_var))

    def evaluator(x, z, theta):
        xb, single = _as_batch(x)
        beta = float(np.atleast_1d(theta)[0])
        if np.any(xb[:, 0] <= 0):
            raise MomentError("consumption growth must be strictly positive")
        m = beta * adj * xb[:, 1] / xb[:, 0] - 1.0
        return float(m[0]) if single else m

    def jac(x, z, theta):
        xb, single = _as_batch(x)
        d = adj * xb[:, 1] / xb[:, 0]
        return d[0] if single else d

    def feature(x, z):
        xb, _ = _as_batch(x)
        return adj * xb[:, 1] / xb[:, 0]

    return MomentModel("euler_log_growth", 1, 1, evaluator, jac, feature)


_REGISTRY = {
    "euler_log": make_euler_log,
    "euler_crra": make_euler_crra,
    "euler_quadratic": make_euler_quadratic,
}


def by_name(name: str) -> MomentModel:
    """Look up a shipped moment model by its configuration name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise MomentError(
            f"unknown moment model {name!r}; choose from {sorted(_REGISTRY)}"
        ) from None
