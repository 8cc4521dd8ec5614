"""Inner information-projection solver.

Given moment values m_j evaluated on a simulated conditional sample (or on
deterministic quadrature nodes), find the exponential-tilting multipliers:
mu minimizes

    T(mu) = sum_j w_j exp(mu' m_j) + ridge * |mu|^2

and lam = -log T0(mu) is the exact log normalizer of the tilted weights,
T0 being the unpenalized objective.  T is smooth and convex with Hessian
sum_j w_j exp(mu' m_j) m_j m_j' + 2 ridge I, so damped Newton from mu = 0
is globally convergent whenever a minimizer exists, which it does exactly
when 0 lies in the interior of the convex hull of {m_j}.  When it does not,
the objective decreases forever along some ray; this is detected through a
multiplier-norm cap and a stalled line search and reported as
`NoInteriorSolution` so callers can treat the proposal as infeasible.

All iterations work with the normalized tilt weights

    r_j = w_j exp(mu' m_j) / T0(mu),

which sum to one by construction: the gradient of log T0 is sum_j r_j m_j
(the tilted moment mean, whose norm is the convergence criterion) and the
scaled Hessian is sum_j r_j m_j m_j'.  This keeps every quantity finite for
arbitrarily large mu' m_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SolverOptions",
    "ProjectionResult",
    "NoInteriorSolution",
    "solve_multipliers",
    "solve_multipliers_batch",
    "analytic_gaussian_tilt",
    "tilted_logdensity",
]


class NoInteriorSolution(RuntimeError):
    """Zero is not in the interior of the convex hull of the moment values."""


@dataclass(frozen=True)
class SolverOptions:
    """Newton solver controls.

    ridge adds a quadratic penalty to the objective, useful when the
    simulated sample is small; it is off by default and the log normalizer
    is always taken from the unpenalized objective.
    """

    tol_grad: float = 1e-10
    max_iter: int = 200
    ridge: float = 0.0
    ls_shrink: float = 0.5
    ls_decrease: float = 1e-4
    mu_cap: float = 1e3
    max_ls_shrinks: int = 50

    def __post_init__(self):
        if self.tol_grad <= 0:
            raise ValueError("tol_grad must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class ProjectionResult:
    """Multipliers and diagnostics of one projection solve.

    weights are the normalized tilt weights exp(mu' m_j + lam) w_j; they are
    strictly positive and sum to one, and their m-weighted mean has norm
    grad_norm.
    """

    mu: np.ndarray
    lam: float
    weights: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


def _prepare(m_samples, log_weights):
    m = np.asarray(m_samples, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError("m_samples must be a vector or a 2-d array")
    if not np.all(np.isfinite(m)):
        raise ValueError("m_samples must be finite")
    n, m_dim = m.shape
    if n < m_dim + 1:
        raise ValueError("need at least m_dim + 1 sample points")
    if log_weights is None:
        logw = np.full(n, -np.log(n))
    else:
        logw = np.asarray(log_weights, dtype=float)
        if logw.shape != (n,):
            raise ValueError("log_weights must match the sample length")
        logw = logw - _logsumexp(logw)
    return m, logw


def solve_multipliers(
    m_samples,
    options: SolverOptions | None = None,
    log_weights=None,
    mu0=None,
) -> ProjectionResult:
    """Solve one projection: multipliers for one conditioning point.

    m_samples : (N_s, m_dim) moment values on the conditional sample; a flat
        vector is treated as scalar moments.
    log_weights : optional log weights replacing the equal-weight sample,
        e.g. a quadrature rule's log weights (normalized internally).
    mu0 : optional warm start; defaults to the zero vector, where the
        objective is exactly one.

    Raises NoInteriorSolution when the moment values do not straddle zero.
    Returns converged=False (without raising) when the iteration cap is hit.
    """
    opts = options or SolverOptions()
    m, logw = _prepare(m_samples, log_weights)
    n, m_dim = m.shape

    if m_dim == 1:
        mn, mx = m.min(), m.max()
        if (mn >= 0.0 and mx > 0.0) or (mx <= 0.0 and mn < 0.0):
            raise NoInteriorSolution(
                "scalar moment values do not straddle zero; the restriction "
                "cannot be satisfied by reweighting this sample"
            )

    mu = np.zeros(m_dim) if mu0 is None else np.asarray(mu0, dtype=float).copy()
    tau = opts.ridge

    def state(mu_vec):
        a = logw + m @ mu_vec
        log_t0 = _logsumexp(a)
        r = np.exp(a - log_t0)
        return log_t0, r

    def objective(log_t0, mu_vec):
        # log T0 when unpenalized (monotone in T0), T0 + ridge|mu|^2 otherwise
        if tau == 0.0:
            return log_t0
        return np.exp(log_t0) + tau * float(mu_vec @ mu_vec)

    log_t0, r = state(mu)
    obj = objective(log_t0, mu)
    iterations = 0
    converged = False
    gnorm = np.inf

    for iterations in range(1, opts.max_iter + 1):
        gbar = r @ m
        if tau == 0.0:
            grad = gbar
            hess = m.T @ (r[:, None] * m)
        else:
            t0 = np.exp(log_t0)
            grad = t0 * gbar + 2.0 * tau * mu
            hess = t0 * (m.T @ (r[:, None] * m)) + 2.0 * tau * np.eye(m_dim)
        gnorm = float(np.linalg.norm(grad if tau else gbar))
        if gnorm <= opts.tol_grad:
            converged = True
            iterations -= 1
            break

        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if slope >= 0.0:
            step = -grad
            slope = -float(grad @ grad)

        scale = 1.0
        shrinks = 0
        while True:
            cand = mu + scale * step
            log_t0_c, r_c = state(cand)
            obj_c = objective(log_t0_c, cand)
            if np.isfinite(obj_c) and obj_c <= obj + opts.ls_decrease * scale * slope:
                break
            shrinks += 1
            if shrinks > opts.max_ls_shrinks:
                raise NoInteriorSolution(
                    "line search stalled; objective decreases along a ray, "
                    "zero is outside the interior of the moment hull"
                )
            scale *= opts.ls_shrink
        if obj_c > obj + 1e-12 * max(1.0, abs(obj)):
            raise RuntimeError("objective increased along a Newton step")
        mu, log_t0, r, obj = cand, log_t0_c, r_c, obj_c
        if float(np.linalg.norm(mu)) > opts.mu_cap:
            raise NoInteriorSolution(
                "multiplier norm exceeded the divergence cap; zero is outside "
                "the interior of the moment hull"
            )
    else:
        # loop exhausted without meeting the gradient tolerance
        gbar = r @ m
        gnorm = float(np.linalg.norm(gbar))

    lam = -log_t0
    return ProjectionResult(
        mu=mu,
        lam=float(lam),
        weights=r,
        grad_norm=gnorm,
        iterations=iterations,
        converged=converged,
    )


def solve_multipliers_batch(
    m_matrix,
    options: SolverOptions | None = None,
    mu0=None,
):
    """Vectorized scalar-moment projections over many conditioning points.

    m_matrix : (B, N_s) moment values, one row per conditioning point.
    mu0 : optional (B,) warm starts, typically the previous outer proposal's
        multipliers under common random numbers.

    Returns a dict of arrays: mu, lam, grad_norm (B,), iterations (int),
    feasible and converged (B,) booleans.  Infeasible rows (values that do
    not straddle zero) are flagged rather than raised so sweeps can apply
    their penalty and continue.  The ridge option is not supported on this
    path.
    """
    opts = options or SolverOptions()
    if opts.ridge != 0.0:
        raise ValueError("ridge is only supported by solve_multipliers")
    m = np.asarray(m_matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("m_matrix must be (B, N_s)")
    b, n = m.shape
    logw = -np.log(n)

    feasible = (m.min(axis=1) < 0.0) & (m.max(axis=1) > 0.0)
    # rows that are identically ~zero are feasible with mu = 0
    degenerate = np.max(np.abs(m), axis=1) == 0.0
    feasible |= degenerate

    mu = np.zeros(b) if mu0 is None else np.asarray(mu0, dtype=float).copy()
    mu[~feasible | degenerate] = 0.0

    # The scalar stationarity condition s(mu) = sum_j r_j(mu) m_j is smooth
    # and strictly increasing (its derivative is the tilted variance), so the
    # minimizer is the unique root of s.  Newton steps are taken when they
    # stay inside the running sign-change bracket, bisection otherwise; one
    # matrix pass per iteration either way.
    lo = np.full(b, -np.inf)
    hi = np.full(b, np.inf)
    log_t0 = np.zeros(b)
    gnorm = np.zeros(b)
    converged = degenerate.copy()
    active = feasible & ~converged
    iterations = 0

    a = np.empty_like(m)
    e = np.empty_like(m)

    def row_state(mu_vec):
        np.multiply(mu_vec[:, None], m, out=a)
        c = a.max(axis=1)
        np.subtract(a, c[:, None], out=a)
        np.exp(a, out=e)
        s0 = e.sum(axis=1)
        s1 = np.einsum("ij,ij->i", e, m)
        s2 = np.einsum("ij,ij,ij->i", e, m, m)
        log_t0 = c + np.log(s0) + logw
        g = s1 / s0
        v = s2 / s0 - g * g
        return log_t0, g, v

    for iterations in range(1, opts.max_iter + 1):
        if not active.any():
            break
        log_t0_new, g, v = row_state(mu)
        log_t0 = np.where(active, log_t0_new, log_t0)
        gnorm = np.where(active, np.abs(g), gnorm)
        newly = active & (np.abs(g) <= opts.tol_grad)
        converged |= newly
        active &= ~newly
        if not active.any():
            break

        pos = active & (g > 0.0)
        neg = active & (g < 0.0)
        hi = np.where(pos, np.minimum(hi, mu), hi)
        lo = np.where(neg, np.maximum(lo, mu), lo)

        with np.errstate(divide="ignore", invalid="ignore"):
            newton = mu - g / v
            # fallback: bisect a finite bracket, else expand away from the
            # known side by a doubling step
            both = np.isfinite(lo) & np.isfinite(hi)
            span = np.where(both, 0.5 * (np.where(both, lo, 0.0) + np.where(both, hi, 0.0)), np.nan)
        expand = np.maximum(1.0, np.abs(mu))
        one_sided = np.where(np.isfinite(lo), mu + expand, mu - expand)
        fallback = np.where(both, span, one_sided)
        bad = (
            ~np.isfinite(newton)
            | (newton <= lo)
            | (newton >= hi)
        )
        mu = np.where(active, np.where(bad, fallback, newton), mu)

        blown = active & (np.abs(mu) > opts.mu_cap)
        feasible &= ~blown
        active &= ~blown

    log_t0_new, g, _ = row_state(mu)
    log_t0 = np.where(feasible, log_t0_new, 0.0)
    gnorm = np.where(feasible, np.abs(g), np.inf)
    gnorm[degenerate] = 0.0
    converged &= feasible

    lam = -log_t0
    return {
        "mu": mu,
        "lam": lam,
        "grad_norm": gnorm,
        "iterations": iterations,
        "feasible": feasible,
        "converged": converged,
    }


def analytic_gaussian_tilt(C_t, R_t, beta, rho_c, rho_R) -> float:
    """Analytic multiplier of the quadratic-utility example.

    For the unit-variance Gaussian VAR base and the centered covariance
    restriction with target k = (C_t / beta)(1 - R_t beta rho_c rho_R), the
    multiplier solves mu / (1 - mu^2) = k; the root in (-1, 1) is
    (-1 + sqrt(1 + 4 k^2)) / (2 k), and 0 at k = 0.
    """
    k = (C_t / beta) * (1.0 - R_t * beta * rho_c * rho_R)
    if not np.isfinite(k):
        raise ValueError("tilt target must be finite")
    if k == 0.0:
        return 0.0
    return float((-1.0 + np.sqrt(1.0 + 4.0 * k * k)) / (2.0 * k))


def tilted_logdensity(base_logpdf, mu, m_value, lam):
    """Log density of the tilted measure: base + mu' m + lam."""
    base = np.asarray(base_logpdf, dtype=float)
    m = np.asarray(m_value, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if m.ndim <= 1 and base.ndim == 0:
        return float(base + mu @ np.atleast_1d(m) + lam)
    return base + np.atleast_2d(m) @ mu + lam


def _logsumexp(a):
    c = a.max()
    return float(c + np.log(np.exp(a - c).sum()))
