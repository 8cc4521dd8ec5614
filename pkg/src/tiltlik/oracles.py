"""Independent verification oracles.

Closed forms and brute-force numerics used by the test suite to check the
estimation machinery from a second, unrelated direction: tensor-product
Gauss-Hermite expectations, the analytic tilted normal of the quadratic
utility pricing example, the closed-form VAR maximum likelihood fit, a
bracketing root solver for one-dimensional tilting multipliers, and central
finite differences.

This module must stay independent of the solver code it is used to check:
it imports nothing from projection, estimator, baselines, inference,
counterfactual, or experiments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "QuadratureRule",
    "gauss_hermite_rule",
    "gh_expectation",
    "TiltedNormal",
    "closed_form_tilted_normal",
    "centered_quadratic_moment",
    "var_mle",
    "projection_multiplier_1d",
    "fd_gradient",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Gaussian-measure quadrature nodes with log weights summing to 0."""

    nodes: np.ndarray        # (n_nodes, dim)
    log_weights: np.ndarray  # (n_nodes,), logsumexp == 0
    order: int

    def __post_init__(self):
        total = np.exp(self.log_weights).sum()
        if not np.isclose(total, 1.0, rtol=0, atol=1e-12):
            raise ValueError("quadrature weights must sum to one")


def gauss_hermite_rule(mean, chol_cov, order: int) -> QuadratureRule:
    """Tensor-product Gauss-Hermite rule for N(mean, chol_cov chol_cov').

    Uses the probabilists' nodes (weight exp(-t^2/2)), normalized so the
    weights are a probability vector, then maps nodes through the
    location-scale transform.  Exact for polynomials of degree < 2 * order
    per coordinate.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.atleast_2d(np.asarray(chol_cov, dtype=float))
    dim = mean.shape[0]
    t, w = np.polynomial.hermite_e.hermegauss(int(order))
    w = w / w.sum()
    grids = list(itertools.product(range(order), repeat=dim))
    nodes_std = np.array([[t[i] for i in idx] for idx in grids])
    logw = np.array([sum(np.log(w[i]) for i in idx) for idx in grids])
    # renormalize exactly in log space to absorb rounding
    logw = logw - _logsumexp(logw)
    nodes = mean + nodes_std @ L.T
    return QuadratureRule(nodes=nodes, log_weights=logw, order=int(order))


def gh_expectation(f, mean, chol_cov, order: int) -> float:
    """E[f(X)] for X ~ N(mean, chol_cov chol_cov') by Gauss-Hermite.

    f must accept an (n, dim) array and return (n,) values.
    """
    rule = gauss_hermite_rule(mean, chol_cov, order)
    vals = np.asarray(f(rule.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand not finite at quadrature nodes")
    return float(np.exp(rule.log_weights) @ vals)


@dataclass(frozen=True)
class TiltedNormal:
    """Exact tilted bivariate normal of the quadratic-utility example.

    Tilting N((a, b), I) by exp(mu * [(x1 - a)(x2 - b) - k]) gives another
    normal with the same mean, variances 1 / (1 - mu^2) and covariance
    mu / (1 - mu^2) = k, where mu solves mu / (1 - mu^2) = k.
    """

    mean: np.ndarray
    cov: np.ndarray
    mu: float
    lam: float
    k: float


def _tilt_root(k: float) -> float:
    """Unique root of mu / (1 - mu^2) = k in (-1, 1)."""
    if not np.isfinite(k):
        raise ValueError("target covariance must be finite")
    if k == 0.0:
        return 0.0
    return (-1.0 + np.sqrt(1.0 + 4.0 * k * k)) / (2.0 * k)


def closed_form_tilted_normal(C_t, R_t, beta, rho_c, rho_R) -> TiltedNormal:
    """Conditional density after enforcing E[R C] = C_t / beta on the unit VAR.

    The base is N((rho_c C_t, rho_R R_t), I); the enforced covariance is
    k = (C_t / beta) (1 - R_t beta rho_c rho_R).
    """
    k = (C_t / beta) * (1.0 - R_t * beta * rho_c * rho_R)
    mu = _tilt_root(k)
    v = 1.0 / (1.0 - mu * mu)
    lam = mu * k + 0.5 * np.log1p(-mu * mu)
    mean = np.array([rho_c * C_t, rho_R * R_t])
    cov = np.array([[v, k], [k, v]])
    return TiltedNormal(mean=mean, cov=cov, mu=float(mu), lam=float(lam), k=float(k))


def centered_quadratic_moment(C_t, R_t, beta, rho_c, rho_R):
    """Centered covariance form of the quadratic-utility pricing restriction.

    Returns a vectorized m(x) = (x1 - rho_c C_t)(x2 - rho_R R_t) - k whose
    zero-mean set under the unit-variance VAR base is matched exactly by
    `closed_form_tilted_normal`.
    """
    a = rho_c * C_t
    b = rho_R * R_t
    k = (C_t / beta) * (1.0 - R_t * beta * rho_c * rho_R)

    def moment(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x[:, 0] - a) * (x[:, 1] - b) - k

    return moment


def var_mle(data: np.ndarray):
    """Closed-form Gaussian VAR(1) maximum likelihood fit.

    data rows are observations; each column j of x_{t+1} is regressed on an
    intercept and x_t by ordinary least squares, and the innovation
    covariance is the maximum likelihood (1/n) residual moment matrix.
    Returns (intercept, transition, sigma).
    """
    data = np.asarray(data, dtype=float)
    y = data[1:]
    x = data[:-1]
    n, d = y.shape
    design = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    intercept = coef[0]
    transition = coef[1:].T
    resid = y - design @ coef
    sigma = resid.T @ resid / n
    return intercept, transition, sigma


def projection_multiplier_1d(m_values, log_weights=None, tol: float = 1e-13):
    """Bracketing solve of the scalar tilting stationarity condition.

    Finds mu with sum_j w_j exp(mu m_j) m_j = 0 by expanding a bracket and
    calling Brent's method, then evaluates lam = -log sum_j w_j exp(mu m_j).
    Independent of the Newton path it is used to cross-check.
    """
    m = np.asarray(m_values, dtype=float).ravel()
    if log_weights is None:
        logw = np.full(m.shape, -np.log(m.size))
    else:
        logw = np.asarray(log_weights, dtype=float).ravel()
    if not (m.min() < 0.0 < m.max()):
        raise ValueError("zero is not inside the support hull")

    def grad(mu):
        a = logw + mu * m
        c = a.max()
        return float(np.exp(a - c) @ m)

    # grad is strictly increasing in mu; expand until it changes sign
    lo, hi = -1.0, 1.0
    while grad(lo) > 0.0:
        lo *= 2.0
        if lo < -1e6:
            raise ValueError("failed to bracket the multiplier")
    while grad(hi) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("failed to bracket the multiplier")
    mu = brentq(grad, lo, hi, xtol=tol, rtol=8.881784197001252e-16)
    a = logw + mu * m
    lam = -_logsumexp(a)
    return float(mu), float(lam)


def fd_gradient(f, x, rel_step: float = 1e-6):
    """Central finite-difference gradient with per-coordinate scaled steps."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        hi = x.copy()
        lo = x.copy()
        hi[k] += h
        lo[k] -= h
        g[k] = (f(hi) - f(lo)) / (2.0 * h)
    return g


def _logsumexp(a):
    a = np.asarray(a, dtype=float)
    c = a.max()
    return c + np.log(np.exp(a - c).sum())
