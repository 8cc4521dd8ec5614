"""Benchmark estimators on instrumented unconditional moments.

Conditional restrictions E[m(x, z, theta) | z] = 0 are turned into
unconditional ones g_i(theta) = m(x_i, z_i, theta) kron instr(z_i) using
instruments that are functions of z only.  Two comparators are provided:

  CU-GMM  theta minimizing gbar' W(theta)^+ gbar with the weight matrix
          recomputed at every theta (centered sample covariance of g_i,
          pseudo-inverted when near singular);
  ETEL    exponential tilting of the empirical measure in the inner step
          (reusing the projection solver on {g_i}), with theta maximizing
          the average log tilted weight.

In the just-identified case both solve gbar(theta) = 0 and coincide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .moments import MomentModel
from .projection import NoInteriorSolution, SolverOptions, solve_multipliers

__all__ = [
    "InstrumentedMoments",
    "BaselineResult",
    "estimate_cu_gmm",
    "estimate_etel",
    "default_instruments",
]

_PENALTY = 1.0e6


def default_instruments(z):
    """Constant plus the conditioning variables: (1, z_1, ..., z_k)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return np.concatenate([[1.0], z])


@dataclass
class InstrumentedMoments:
    """A moment model crossed with instruments measurable in z."""

    base: MomentModel
    instruments: Callable = default_instruments
    n_inst: Optional[int] = None

    def g_matrix(self, data, theta):
        """Stacked g_i(theta) = m_i kron instr_i, shape (N-1, g_dim)."""
        data = np.asarray(data, dtype=float)
        x, z = data[1:], data[:-1]
        inst = np.stack([np.asarray(self.instruments(zi), float) for zi in z])
        if self.n_inst is None:
            self.n_inst = inst.shape[1]
        m = np.stack([self.base.evaluate(x[i], z[i], theta) for i in range(len(x))])
        # kron over the trailing axes: (N, m_dim, n_inst) flattened row-wise
        g = (m[:, :, None] * inst[:, None, :]).reshape(len(x), -1)
        return g

    @property
    def g_dim(self):
        if self.n_inst is None:
            raise ValueError("g_dim unknown until instruments are evaluated")
        return self.base.m_dim * self.n_inst


@dataclass
class BaselineResult:
    theta_hat: np.ndarray
    objective: float
    converged: bool
    evaluations: int


def _run_nm(fun, theta0, optimizer_opts):
    opts = dict(optimizer_opts or {})
    xatol = opts.pop("xatol", 1e-8)
    fatol = opts.pop("fatol", 1e-12)
    maxfev = opts.pop("maxfev", 2000 * max(1, len(np.atleast_1d(theta0))))
    res = minimize(
        fun,
        np.atleast_1d(np.asarray(theta0, dtype=float)),
        method="Nelder-Mead",
        options={"xatol": xatol, "fatol": fatol, "maxfev": maxfev, **opts},
    )
    return res


def estimate_cu_gmm(data, im: InstrumentedMoments, init, optimizer_opts=None):
    """Continuously updated GMM on the instrumented moments.

    The quadratic form uses the centered covariance of g_i recomputed at
    each proposal; eigenvalues below 1e-12 of the largest are truncated by
    the pseudo-inverse, and a proposal whose weight matrix fails entirely is
    penalized rather than fatal.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0] - 1

    def objective(theta):
        try:
            g = im.g_matrix(data, theta)
        except Exception:
            return _PENALTY
        if n <= g.shape[1]:
            raise ValueError("need more observations than moment conditions")
        gbar = g.mean(axis=0)
        w = np.cov(g.T, bias=True).reshape(g.shape[1], g.shape[1])
        try:
            w_inv = np.linalg.pinv(w, rcond=1e-12, hermitian=True)
        except np.linalg.LinAlgError:
            return _PENALTY
        return float(gbar @ w_inv @ gbar)

    res = _run_nm(objective, init, optimizer_opts)
    return BaselineResult(
        theta_hat=np.atleast_1d(res.x),
        objective=float(res.fun),
        converged=bool(res.success) and res.fun < _PENALTY,
        evaluations=int(res.nfev),
    )


def estimate_etel(
    data,
    im: InstrumentedMoments,
    init,
    optimizer_opts=None,
    solver: SolverOptions | None = None,
):
    """Exponentially tilted empirical likelihood on the instrumented moments.

    Inner step: tilt the empirical measure of {g_i(theta)} to mean zero via
    the projection solver, giving weights w_i proportional to
    exp(mu' g_i).  Outer step: maximize (1/N) sum_i log w_i, equivalently
    mu' gbar + lam - log N.  Proposals whose moment cloud does not contain
    zero are penalized as infeasible.
    """
    data = np.asarray(data, dtype=float)
    solver = solver or SolverOptions()

    def neg_objective(theta):
        try:
            g = im.g_matrix(data, theta)
        except Exception:
            return _PENALTY
        try:
            res = solve_multipliers(g, solver)
        except NoInteriorSolution:
            return _PENALTY
        if not res.converged:
            return _PENALTY
        return -float(res.mu @ g.mean(axis=0) + res.lam)

    res = _run_nm(neg_objective, init, optimizer_opts)
    return BaselineResult(
        theta_hat=np.atleast_1d(res.x),
        objective=-float(res.fun),
        converged=bool(res.success) and res.fun < _PENALTY,
        evaluations=int(res.nfev),
    )
