"""Parametric conditional base densities f(x | z, phi).

A conditional density exposes three capabilities: draw samples given a
conditioning point, evaluate the conditional log density, and evaluate the
score (gradient of the log density in the density parameters).  The two
shipped families are a Gaussian VAR(1), where x | z is multivariate normal
with mean ``intercept + transition @ z``, and a log-normal VAR, the same
model on the elementwise logs of positive level variables.

Parameter vectors are packed as::

    [intercept (x_dim), transition row-major (x_dim * z_dim),
     lower Cholesky factor of the innovation covariance, row by row]

The covariance is carried through its Cholesky factor so that positive
definiteness is a property of the parameterization, not a runtime check;
a valid vector only needs a strictly positive Cholesky diagonal.

Simulation always draws standard normal innovations and applies the
location-scale transform.  Callers that hold the innovation block fixed
therefore get samples that move smoothly with phi, which is what
common-random-number schemes require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DensityError",
    "GaussianVarParams",
    "GaussianVar",
    "LogNormalVar",
    "finite_difference_score",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class DensityError(ValueError):
    """Invalid parameters or dimensions for a conditional density."""


@dataclass(frozen=True)
class GaussianVarParams:
    """Structured view of a packed VAR parameter vector.

    intercept : (x_dim,)
    transition : (x_dim, z_dim)
    chol_cov : (x_dim, x_dim) lower triangular, strictly positive diagonal
    """

    intercept: np.ndarray
    transition: np.ndarray
    chol_cov: np.ndarray

    def __post_init__(self):
        ic = np.atleast_1d(np.asarray(self.intercept, dtype=float))
        tr = np.atleast_2d(np.asarray(self.transition, dtype=float))
        ch = np.atleast_2d(np.asarray(self.chol_cov, dtype=float))
        object.__setattr__(self, "intercept", ic)
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "chol_cov", ch)
        n = ic.shape[0]
        if tr.shape[0] != n or ch.shape != (n, n):
            raise DensityError("inconsistent parameter dimensions")
        if np.any(np.triu(ch, 1) != 0.0):
            raise DensityError("chol_cov must be lower triangular")
        if np.any(np.diag(ch) <= 0.0):
            raise DensityError("chol_cov diagonal must be strictly positive")

    def pack(self) -> np.ndarray:
        n = self.intercept.shape[0]
        tril = self.chol_cov[np.tril_indices(n)]
        return np.concatenate([self.intercept, self.transition.ravel(), tril])


# The log-normal family reuses the same packing; the fields are read on the
# log scale of (x, z).
LogNormalVarParams = GaussianVarParams


class GaussianVar:
    """Gaussian VAR(1) conditional density: x | z ~ N(a + B z, L L')."""

    def __init__(self, x_dim: int, z_dim: int):
        self.x_dim = int(x_dim)
        self.z_dim = int(z_dim)
        ntril = self.x_dim * (self.x_dim + 1) // 2
        self.param_dim = self.x_dim + self.x_dim * self.z_dim + ntril

    # -- parameter packing -------------------------------------------------

    def unpack(self, phi: np.ndarray) -> GaussianVarParams:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.param_dim,):
            raise DensityError(
                f"phi must have length {self.param_dim}, got {phi.shape}"
            )
        n, m = self.x_dim, self.z_dim
        intercept = phi[:n]
        transition = phi[n : n + n * m].reshape(n, m)
        chol = np.zeros((n, n))
        chol[np.tril_indices(n)] = phi[n + n * m :]
        return GaussianVarParams(intercept, transition, chol)

    def pack(self, params: GaussianVarParams) -> np.ndarray:
        return params.pack()

    # -- internal helpers ---------------------------------------------------

    def _x_of(self, x):
        return np.asarray(x, dtype=float)

    def _z_of(self, z):
        return np.asarray(z, dtype=float)

    def _mean(self, params: GaussianVarParams, z: np.ndarray) -> np.ndarray:
        return params.intercept + params.transition @ self._z_of(z)

    # -- capabilities --------------------------------------------------------

    def logpdf(self, x, z, phi) -> np.ndarray:
        """Conditional log density; x may be one point or an (n, x_dim) batch."""
        params = self.unpack(phi)
        xv = self._x_of(x)
        squeeze = xv.ndim == 1
        xv = np.atleast_2d(xv)
        if xv.shape[1] != self.x_dim:
            raise DensityError("x has wrong dimension")
        mean = self._mean(params, z)
        L = params.chol_cov
        resid = xv - mean
        # solve L w = r; the quadratic form is |w|^2
        w = _solve_lower(L, resid.T).T
        logdet = np.sum(np.log(np.diag(L)))
        val = -0.5 * self.x_dim * _LOG_2PI - logdet - 0.5 * np.sum(w * w, axis=1)
        return float(val[0]) if squeeze else val

    def simulate(self, z, phi, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise DensityError("n must be >= 1")
        u = rng.standard_normal((int(n), self.x_dim))
        return self.transform_standard(u, z, phi)

    def transform_standard(self, u: np.ndarray, z, phi) -> np.ndarray:
        """Map standard normal innovations to draws from f(. | z, phi)."""
        params = self.unpack(phi)
        mean = self._mean(params, z)
        return mean + u @ params.chol_cov.T

    def score(self, x, z, phi) -> np.ndarray:
        """Gradient of logpdf in phi; batched x gives an (n, param_dim) array."""
        params = self.unpack(phi)
        xv = np.atleast_2d(self._x_of(x))
        squeeze = np.asarray(x, dtype=float).ndim == 1
        mean = self._mean(params, z)
        L = params.chol_cov
        resid = xv - mean                       # (n, d)
        # q = Sigma^{-1} (x - mean), via two triangular solves
        w = _solve_lower(L, resid.T)            # L w = r
        qmat = _solve_upper(L.T, w).T           # L' q = w  -> (n, d)

        zv = self._z_of(z)
        n_obs = xv.shape[0]
        sigma_inv = _solve_upper(L.T, _solve_lower(L, np.eye(self.x_dim)))
        scores = np.empty((n_obs, self.param_dim))
        d, m = self.x_dim, self.z_dim
        scores[:, :d] = qmat
        scores[:, d : d + d * m] = (qmat[:, :, None] * zv[None, None, :]).reshape(
            n_obs, d * m
        )
        # d logf / dL = tril((q q' - Sigma^{-1}) L)
        tril_idx = np.tril_indices(d)
        qqL = np.einsum("ni,nj,jk->nik", qmat, qmat, L)
        base = sigma_inv @ L
        gradL = qqL - base[None, :, :]
        scores[:, d + d * m :] = gradL[:, tril_idx[0], tril_idx[1]]
        return scores[0] if squeeze else scores


class LogNormalVar(GaussianVar):
    """Log-normal VAR: the Gaussian VAR on elementwise logs of levels.

    x and z are strictly positive levels; the conditional mean applies to
    log x given log z, and logpdf carries the change-of-variables term
    -sum(log x_k).  Simulated draws are returned in levels so moment
    functions never see log-space values.
    """

    def _x_of(self, x):
        xv = np.asarray(x, dtype=float)
        if np.any(xv <= 0.0):
            raise DensityError("log-normal levels must be strictly positive")
        return np.log(xv)

    def _z_of(self, z):
        zv = np.asarray(z, dtype=float)
        if np.any(zv <= 0.0):
            raise DensityError("log-normal conditioning levels must be positive")
        return np.log(zv)

    def logpdf(self, x, z, phi):
        base = super().logpdf(x, z, phi)
        jac = np.sum(np.log(np.atleast_2d(np.asarray(x, dtype=float))), axis=1)
        if np.asarray(x).ndim == 1:
            return base - float(jac[0])
        return base - jac

    def transform_standard(self, u, z, phi):
        return np.exp(super().transform_standard(u, z, phi))

    # The score in phi is unchanged by the x-Jacobian (it is phi-free), and
    # GaussianVar.score already reads x, z through _x_of/_z_of.


def finite_difference_score(density, x, z, phi, rel_step: float = 1e-6):
    """Central-difference gradient of logpdf in phi.

    Fallback for densities without an analytic score and the oracle used to
    validate the analytic expressions.  Step is rel_step * max(1, |phi_k|)
    per coordinate.
    """
    phi = np.asarray(phi, dtype=float)
    out = np.zeros_like(phi)
    for k in range(phi.size):
        h = rel_step * max(1.0, abs(phi[k]))
        hi = phi.copy()
        lo = phi.copy()
        hi[k] += h
        lo[k] -= h
        out[k] = (density.logpdf(x, z, hi) - density.logpdf(x, z, lo)) / (2 * h)
    return out


def _solve_lower(L, b):
    from scipy.linalg import solve_triangular

    return solve_triangular(L, b, lower=True, check_finite=False)


def _solve_upper(U, b):
    from scipy.linalg import solve_triangular

    return solve_triangular(U, b, lower=False, check_finite=False)
