"""Asymptotic covariance of the tilted-likelihood estimator.

Under a correctly specified base density the estimator's asymptotic
variance is block diagonal between the moment parameters theta and the
density parameters phi:

    theta block   ( E[ E(M|z)' V_m(z)^{-1} E(M|z) ] )^{-1}
    phi block     ( E[s s'] - E[ Cov(s, m|z) V_m(z)^{-1} Cov(m, s|z) ] )^{-1}

where M is the moment Jacobian in theta, V_m(z) the conditional moment
covariance and s the density score.  The theta block equals the optimally
weighted conditional-GMM information; the phi block shows that carrying
moment conditions with unknown theta can only inflate the variance of phi
relative to the inverse score information.  Conditional expectations are
estimated by fresh simulation from the fitted density at each conditioning
point; variance work defaults to a larger simulation size than estimation
because the formulas need higher precision.

These formulas maintain correct specification; no misspecification
sandwich is provided and reported standard errors are valid under that
assumption only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import TiltedModel, conditioning_pairs
from .rng import substream

__all__ = [
    "CovarianceBlocks",
    "SingularMomentVariance",
    "NonInvertibleInformation",
    "asymptotic_covariance",
    "score_block_terms",
]

_INFER_KEY = "infer"


class SingularMomentVariance(np.linalg.LinAlgError):
    """The conditional moment covariance is degenerate at some z."""


class NonInvertibleInformation(np.linalg.LinAlgError):
    """An averaged information matrix is not positive definite."""


@dataclass
class CovarianceBlocks:
    """Blocks of the asymptotic covariance; SE_k = sqrt(block_kk / N)."""

    theta_block: np.ndarray
    phi_block: np.ndarray
    n_used: int

    def theta_se(self):
        return np.sqrt(np.diag(self.theta_block) / self.n_used)

    def phi_se(self):
        return np.sqrt(np.diag(self.phi_block) / self.n_used)


def _free_transfer(model: TiltedModel):
    """Matrix summing full-phi scores into free natural coordinates."""
    entries = model.phi_map.entries
    t = np.zeros((len(entries), model.phi_map.n_free))
    for k, e in enumerate(entries):
        if e[0] == "free":
            t[k, e[1]] = 1.0
    return t


def _conditional_moments(model, z_i, theta, phi, n_sim, gen, transfer):
    draws = model.density.simulate(z_i, phi, n_sim, gen)
    m = model.moments.evaluate(draws, z_i, theta)
    jac = model.moments.jacobian(draws, z_i, theta)
    s = np.atleast_2d(model.density.score(draws, z_i, phi)) @ transfer
    m_mean = m.mean(axis=0)
    mc = m - m_mean
    v_m = mc.T @ mc / n_sim
    e_jac = jac.mean(axis=0)
    sc = s - s.mean(axis=0)
    cov_ms = mc.T @ sc / n_sim
    e_ss = s.T @ s / n_sim
    return m_mean, v_m, e_jac, cov_ms, e_ss


def _pd_inverse(mat, label):
    mat = 0.5 * (mat + mat.T)
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals.min() <= 1e-12 * max(1.0, eigvals.max()):
        raise NonInvertibleInformation(
            f"{label} information is not positive definite "
            f"(min eigenvalue {eigvals.min():.3e})"
        )
    return np.linalg.inv(mat)


def asymptotic_covariance(
    model: TiltedModel,
    data,
    psi_hat,
    rng_root: int = 0,
    n_sim: int = 50_000,
) -> CovarianceBlocks:
    """Estimate the block-diagonal asymptotic covariance at psi_hat.

    For each observation's conditioning point, n_sim fresh draws from the
    fitted base estimate E(M|z), Var(m|z), Cov(m, s|z) and E[s s'|z]; the
    blocks are the inverted averages.  Raises SingularMomentVariance when
    the moment degenerates at some z and NonInvertibleInformation when an
    averaged information matrix loses rank, e.g. when the moments span the
    scores.
    """
    theta, phi = model.split_psi(psi_hat)
    x, z = conditioning_pairs(model, data)
    n_obs = x.shape[0]
    transfer = _free_transfer(model)

    a_theta = 0.0
    s_outer = 0.0
    proj = 0.0
    for i in range(n_obs):
        gen = substream(rng_root, _INFER_KEY, i)
        m_mean, v_m, e_jac, cov_ms, e_ss = _conditional_moments(
            model, z[i], theta, phi, n_sim, gen, transfer
        )
        eig = np.linalg.eigvalsh(0.5 * (v_m + v_m.T))
        if eig.min() <= 1e-12 * max(1.0, eig.max()):
            raise SingularMomentVariance(
                f"conditional moment variance degenerate at observation {i}"
            )
        v_inv = np.linalg.inv(v_m)
        a_theta = a_theta + e_jac.T @ v_inv @ e_jac
        s_outer = s_outer + e_ss
        proj = proj + cov_ms.T @ v_inv @ cov_ms

    a_theta = np.atleast_2d(a_theta / n_obs)
    info_phi = np.atleast_2d((s_outer - proj) / n_obs)

    theta_block = _pd_inverse(a_theta, "theta")
    phi_block = _pd_inverse(info_phi, "phi")
    return CovarianceBlocks(
        theta_block=theta_block, phi_block=phi_block, n_used=n_obs
    )


def score_block_terms(model: TiltedModel, data, psi, rng_root: int = 0, n_sim: int = 20_000):
    """Leading terms of the two first-order-condition blocks at psi.

    Returns (g_theta, g_phi): the sample averages of
    E(M|z_i)' V_m(z_i)^{-1} m_i and of s_i - Cov(s, m|z_i) V_m(z_i)^{-1} m_i,
    the influence terms whose cross-replication covariance vanishes under
    correct specification (the block-diagonality property).
    """
    theta, phi = model.split_psi(psi)
    x, z = conditioning_pairs(model, data)
    n_obs = x.shape[0]
    transfer = _free_transfer(model)

    g_theta = np.zeros(model.moments.theta_dim)
    g_phi = np.zeros(model.phi_map.n_free)
    for i in range(n_obs):
        gen = substream(rng_root, _INFER_KEY, i)
        _, v_m, e_jac, cov_ms, _ = _conditional_moments(
            model, z[i], theta, phi, n_sim, gen, transfer
        )
        v_inv = np.linalg.inv(v_m)
        m_i = model.moments.evaluate(x[i], z[i], theta)
        s_i = np.atleast_2d(model.density.score(x[i], z[i], phi)) @ transfer
        g_theta += e_jac.T @ v_inv @ m_i
        g_phi += s_i[0] - cov_ms.T @ v_inv @ m_i
    return g_theta / n_obs, g_phi / n_obs
