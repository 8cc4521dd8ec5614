"""Scalar reparameterizations and free/fixed/tied parameter maps.

Derivative-free optimizers work on an unconstrained vector; these helpers
move between that vector and the natural (constrained) parameter space.
Supported transforms:

  identity   unconstrained coordinates
  logistic   (0, 1), e.g. discount factors
  tanh       (-1, 1), e.g. correlations and stable AR coefficients
  exp        (0, inf), e.g. variances and Cholesky diagonals
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TRANSFORMS", "ParamMap"]


def _logistic(u):
    return 1.0 / (1.0 + np.exp(-u))


def _logit(x):
    x = np.asarray(x, dtype=float)
    return np.log(x) - np.log1p(-x)


TRANSFORMS = {
    "identity": (lambda u: u, lambda x: x),
    "logistic": (_logistic, _logit),
    "tanh": (np.tanh, np.arctanh),
    "exp": (np.exp, np.log),
}


@dataclass
class ParamMap:
    """Map between a full parameter vector and a free unconstrained vector.

    Each full coordinate is either fixed at a value or bound to a slot of
    the free vector through a named transform.  Two coordinates bound to the
    same slot are tied (estimated as one number).
    """

    entries: list[tuple]  # ("fixed", value) or ("free", slot, transform_name)
    n_free: int = field(init=False)

    def __post_init__(self) -> None:
        slots = [e[1] for e in self.entries if e[0] == "free"]
        self.n_free = (max(slots) + 1) if slots else 0
        for e in self.entries:
            if e[0] == "free" and e[2] not in TRANSFORMS:
                raise ValueError(f"unknown transform {e[2]!r}")

    @classmethod
    def all_free(cls, dim: int, transform: str = "identity") -> "ParamMap":
        return cls([("free", i, transform) for i in range(dim)])

    def to_full(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        full = np.empty(len(self.entries))
        for k, e in enumerate(self.entries):
            if e[0] == "fixed":
                full[k] = e[1]
            else:
                fwd, _ = TRANSFORMS[e[2]]
                full[k] = fwd(u[e[1]])
        return full

    def to_free(self, full: np.ndarray) -> np.ndarray:
        """Unconstrained vector reproducing `full` (ties read the last coord)."""
        full = np.asarray(full, dtype=float)
        u = np.zeros(self.n_free)
        for k, e in enumerate(self.entries):
            if e[0] == "free":
                _, inv = TRANSFORMS[e[2]]
                u[e[1]] = inv(full[k])
        return u

    def free_indices(self) -> list[int]:
        """Full-vector positions that are estimated (ties: every member)."""
        return [k for k, e in enumerate(self.entries) if e[0] == "free"]
