"""Outer estimation: tilted log likelihood and its maximization.

The sample objective at parameters psi = (theta, phi) is

    Q_N(psi) = (1/N) sum_i [ log f(x_i | z_i, phi)
                             + mu_i' m(x_i, z_i, theta) + lam_i ],

where (mu_i, lam_i) solve the information projection at z_i on a sample of
n_sim draws from f(. | z_i, phi).  Draws come from substreams derived from
(rng_root, i), so with a fixed rng_root the simulated objective is a
deterministic function of psi (common random numbers); simulation uses the
densities' location-scale transform of standard innovations, which keeps
the objective continuous in phi as well.

Maximization is derivative free (Nelder-Mead on transformed coordinates)
because the multipliers depend on psi only implicitly.  Infeasible
projections contribute a large finite penalty per observation instead of
aborting, which keeps the simplex moving near the feasible boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .moments import MomentModel
from .projection import (
    NoInteriorSolution,
    SolverOptions,
    solve_multipliers,
    solve_multipliers_batch,
)
from .rng import substream
from .transforms import ParamMap

__all__ = [
    "TiltedModel",
    "EstimationResult",
    "tilted_loglik",
    "estimate",
    "conditioning_pairs",
    "INFEASIBLE_PENALTY",
]

INFEASIBLE_PENALTY = -1.0e6

_PROJ_KEY = "proj"


@dataclass
class TiltedModel:
    """A conditional base density tied to a moment restriction model.

    conditioning maps the raw data matrix to (x, z) observation pairs; the
    default "markov" rule uses z_i = x_{i-1}, so no pair ever conditions on
    future observations.  n_sim defaults to max(10000, 20 N) at estimation
    time when left at None, keeping the simulation noise negligible
    relative to sampling noise.
    """

    density: object
    moments: MomentModel
    conditioning: str | Callable = "markov"
    n_sim: Optional[int] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    theta_map: Optional[ParamMap] = None
    phi_map: Optional[ParamMap] = None

    def __post_init__(self):
        if self.n_sim is not None and self.n_sim < 10 * self.moments.m_dim:
            raise ValueError("n_sim must be at least 10 * m_dim")
        if self.theta_map is None:
            self.theta_map = ParamMap.all_free(self.moments.theta_dim)
        if self.phi_map is None:
            self.phi_map = ParamMap.all_free(self.density.param_dim)

    def effective_n_sim(self, n_obs: int) -> int:
        if self.n_sim is not None:
            return self.n_sim
        return max(10_000, 20 * n_obs)

    def split_psi(self, psi):
        psi = np.asarray(psi, dtype=float)
        k = self.moments.theta_dim
        return psi[:k], psi[k:]


@dataclass
class EstimationResult:
    """Optimum, covariance blocks and convergence metadata."""

    psi_hat: np.ndarray
    loglik: float
    theta_block_cov: Optional[np.ndarray]
    phi_block_cov: Optional[np.ndarray]
    infeasible_count: int
    converged: bool
    evaluations: int
    message: str = ""

    @property
    def theta_hat(self):
        return self.psi_hat[: self._theta_dim]

    @property
    def phi_hat(self):
        return self.psi_hat[self._theta_dim :]

    _theta_dim: int = 0


def conditioning_pairs(model: TiltedModel, data: np.ndarray):
    """Materialize (x_i, z_i) pairs from the raw data matrix."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be a 2-d array of observations")
    if data.shape[0] < 2:
        raise ValueError("need at least two observations")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    if model.conditioning == "markov":
        return data[1:], data[:-1]
    x, z = model.conditioning(data)
    return np.asarray(x, dtype=float), np.asarray(z, dtype=float)


class TiltedObjective:
    """Cached evaluator of Q_N(theta) at a fixed phi.

    Simulates the per-observation conditional samples once (common random
    numbers) and re-solves only the projections when theta moves.  Scalar
    moment models go through the vectorized batch solver with warm starts
    carried between calls; when the moment has the certified structure
    m = theta[0] * feature - 1 the per-draw features are precomputed too.
    """

    def __init__(self, model: TiltedModel, data, phi, rng_root: int):
        self.model = model
        self.phi = np.asarray(phi, dtype=float)
        self.x, self.z = conditioning_pairs(model, data)
        self.n_obs = self.x.shape[0]
        n_sim = model.effective_n_sim(self.n_obs)
        self.draws = np.empty((self.n_obs, n_sim, model.density.x_dim))
        for i in range(self.n_obs):
            gen = substream(rng_root, _PROJ_KEY, i)
            self.draws[i] = model.density.simulate(self.z[i], self.phi, n_sim, gen)
        self.base_ll_i = np.array(
            [
                model.density.logpdf(self.x[i], self.z[i], self.phi)
                for i in range(self.n_obs)
            ]
        )
        self._mu_warm = None
        self._features = None
        self._data_features = None
        if model.moments.beta_feature is not None and model.moments.theta_dim == 1:
            self._features = np.empty((self.n_obs, n_sim))
            self._data_features = np.empty(self.n_obs)
            for i in range(self.n_obs):
                self._features[i] = model.moments.beta_feature(
                    self.draws[i], self.z[i]
                )
                self._data_features[i] = model.moments.beta_feature(
                    self.x[i][None, :], self.z[i]
                )[0]

    def _moment_matrix(self, theta):
        if self._features is not None:
            return float(theta[0]) * self._features - 1.0
        mm = self.model.moments
        out = np.empty((self.n_obs, self.draws.shape[1]))
        for i in range(self.n_obs):
            out[i] = mm.evaluate(self.draws[i], self.z[i], theta)[:, 0]
        return out

    def _data_moments(self, theta):
        if self._data_features is not None:
            return (float(theta[0]) * self._data_features - 1.0)[:, None]
        mm = self.model.moments
        return np.stack(
            [mm.evaluate(self.x[i], self.z[i], theta) for i in range(self.n_obs)]
        )

    def value(self, theta):
        """Tilted log likelihood at theta; returns (value, infeasible_count)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        mm = self.model.moments
        m_dat = self._data_moments(theta)
        if mm.m_dim == 1:
            mmat = self._moment_matrix(theta)
            out = solve_multipliers_batch(
                mmat, self.model.solver, mu0=self._mu_warm
            )
            ok = out["converged"]
            self._mu_warm = np.where(ok, out["mu"], 0.0)
            contrib = np.where(
                ok,
                self.base_ll_i + out["mu"] * m_dat[:, 0] + out["lam"],
                INFEASIBLE_PENALTY,
            )
            infeasible = int(np.sum(~ok))
            return float(np.mean(contrib)), infeasible
        total = 0.0
        infeasible = 0
        for i in range(self.n_obs):
            mvals = mm.evaluate(self.draws[i], self.z[i], theta)
            try:
                res = solve_multipliers(mvals, self.model.solver)
            except NoInteriorSolution:
                res = None
            if res is None or not res.converged:
                total += INFEASIBLE_PENALTY
                infeasible += 1
                continue
            total += self.base_ll_i[i] + float(res.mu @ m_dat[i]) + res.lam
        return total / self.n_obs, infeasible


def tilted_loglik(model: TiltedModel, data, psi, rng_root: int):
    """Average tilted log likelihood over the data at parameters psi.

    Returns (value, infeasible_count).  Identical (model, data, psi,
    rng_root) give bit-identical values; infeasible projections contribute
    the INFEASIBLE_PENALTY per observation.
    """
    theta, phi = model.split_psi(psi)
    obj = TiltedObjective(model, data, phi, rng_root)
    return obj.value(theta)


def _flat_simplex(res, xatol):
    simplex, fvals = res.get("final_simplex", (None, None))
    if simplex is None:
        return False
    f_spread = float(np.max(fvals) - np.min(fvals))
    x_spread = float(np.max(np.abs(simplex - simplex[0])))
    return f_spread < 1e-12 * max(1.0, abs(float(fvals[0]))) and x_spread > 10 * xatol


def estimate(
    model: TiltedModel,
    data,
    init,
    mode: str = "two_step",
    optimizer_opts: Optional[dict] = None,
    rng_root: int = 0,
    compute_cov: bool = False,
    cov_n_sim: int = 50_000,
) -> EstimationResult:
    """Maximize the tilted log likelihood over psi = (theta, phi).

    mode "two_step" first maximizes the base log likelihood over phi, then
    the tilted objective over theta at the fitted phi; "joint" maximizes
    over both blocks at once.  A fixed rng_root is used for every proposal,
    so the simulated objective is deterministic in psi.  Coordinates are
    optimized on the transformed scale defined by the model's parameter
    maps (e.g. discount factors through a logistic).
    """
    if mode not in ("two_step", "joint"):
        raise ValueError("mode must be 'two_step' or 'joint'")
    opts = dict(optimizer_opts or {})
    xatol = opts.pop("xatol", 1e-6)
    fatol = opts.pop("fatol", 1e-10)
    maxfev_opt = opts.pop("maxfev", None)

    theta0, phi0 = model.split_psi(np.asarray(init, dtype=float))
    tmap, pmap = model.theta_map, model.phi_map
    try:
        model.density.unpack(pmap.to_full(pmap.to_free(phi0)))
    except Exception as exc:
        raise ValueError(f"initial point infeasible: {exc}") from exc

    x, z = conditioning_pairs(model, data)
    n_obs = x.shape[0]
    evaluations = 0
    infeasible_at_opt = 0

    def base_loglik(phi):
        return float(
            np.mean(
                [model.density.logpdf(x[i], z[i], phi) for i in range(n_obs)]
            )
        )

    def run_nm(fun, u0, dim):
        maxfev = maxfev_opt or 2000 * dim
        res = minimize(
            fun,
            u0,
            method="Nelder-Mead",
            options={
                "xatol": xatol,
                "fatol": fatol,
                "maxfev": maxfev,
                **opts,
            },
        )
        return res

    if mode == "two_step":
        u_phi0 = pmap.to_free(phi0)

        def neg_base(u):
            nonlocal evaluations
            evaluations += 1
            try:
                return -base_loglik(pmap.to_full(u))
            except Exception:
                return 1e12

        if pmap.n_free > 0:
            res_phi = run_nm(neg_base, u_phi0, max(1, pmap.n_free))
            phi_hat = pmap.to_full(res_phi.x)
            phi_converged = bool(res_phi.success)
        else:
            phi_hat = pmap.to_full(np.empty(0))
            phi_converged = True

        objective = TiltedObjective(model, data, phi_hat, rng_root)
        state = {"inf": 0}

        def neg_tilted(u):
            nonlocal evaluations
            evaluations += 1
            val, inf = objective.value(tmap.to_full(u))
            state["inf"] = inf
            return -val

        res_theta = run_nm(neg_tilted, tmap.to_free(theta0), max(1, tmap.n_free))
        theta_hat = tmap.to_full(res_theta.x)
        loglik, infeasible_at_opt = objective.value(theta_hat)
        converged = bool(res_theta.success) and phi_converged
        if _flat_simplex(res_theta, xatol):
            converged = False
            message = "flat objective in the theta direction"
        else:
            message = ""
    else:
        u0 = np.concatenate([tmap.to_free(theta0), pmap.to_free(phi0)])
        k = tmap.n_free
        state = {"inf": 0}

        def neg_joint(u):
            nonlocal evaluations
            evaluations += 1
            theta = tmap.to_full(u[:k])
            phi = pmap.to_full(u[k:])
            val, inf = tilted_loglik(
                model, data, np.concatenate([theta, phi]), rng_root
            )
            state["inf"] = inf
            return -val

        res = run_nm(neg_joint, u0, u0.size)
        theta_hat = tmap.to_full(res.x[:k])
        phi_hat = pmap.to_full(res.x[k:])
        loglik, infeasible_at_opt = tilted_loglik(
            model, data, np.concatenate([theta_hat, phi_hat]), rng_root
        )
        converged = bool(res.success)
        message = ""
        if _flat_simplex(res, xatol):
            converged = False
            message = "flat objective direction at the optimum"

    if infeasible_at_opt >= n_obs:
        raise NoInteriorSolution(
            "every conditioning point is infeasible at the optimum"
        )

    psi_hat = np.concatenate([theta_hat, phi_hat])
    theta_cov = phi_cov = None
    if compute_cov and converged:
        from .inference import asymptotic_covariance

        blocks = asymptotic_covariance(
            model, data, psi_hat, rng_root=rng_root, n_sim=cov_n_sim
        )
        theta_cov, phi_cov = blocks.theta_block, blocks.phi_block

    result = EstimationResult(
        psi_hat=psi_hat,
        loglik=float(loglik),
        theta_block_cov=theta_cov,
        phi_block_cov=phi_cov,
        infeasible_count=int(infeasible_at_opt),
        converged=converged,
        evaluations=evaluations,
        message=message,
    )
    result._theta_dim = model.moments.theta_dim
    return result
