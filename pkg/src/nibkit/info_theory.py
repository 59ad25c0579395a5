"""Closed-form Gaussian information quantities and a discrete MI oracle.

Everything is in nats. These functions back the numerical verification of
the narrowing-bottleneck monotonicity claims and the standard mutual
information identities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class GaussianDiag:
    """Isotropic Gaussian: mean vector and a single shared variance."""

    mean: np.ndarray
    var: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(-1))
        if not self.var > 0:
            raise DegenerateInputError(f"variance must be positive, got {self.var}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def kl_gaussian(p: GaussianDiag, q: GaussianDiag) -> float:
    """KL(p || q) between isotropic Gaussians of equal dimension, in nats.

    Specialization of the general multivariate formula
    1/2 [ (mu_p-mu_q)^T Sigma_q^-1 (mu_p-mu_q) + tr(Sigma_q^-1 Sigma_p)
          - n + ln(det Sigma_q / det Sigma_p) ].
    """
    if p.dim != q.dim:
        raise ShapeError(f"KL dims differ: {p.dim} vs {q.dim}")
    n = p.dim
    diff = p.mean - q.mean
    quad = float(diff @ diff) / q.var
    trace = n * (p.var / q.var)
    logdet = n * float(np.log(q.var / p.var))
    return 0.5 * (quad + trace - n + logdet)


def _as_array(z) -> np.ndarray:
    return z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)


def sup_mi_bound(z, lam: float, var: float) -> float:
    """Upper bound on the mutual information between input and the scaled,
    noise-blurred encoding: lam^2 * ||z||^2 / (2 var).

    A 1-D `z` gives the single-sample bound; a 2-D `z` treats rows as samples
    and returns their mean.
    """
    if not 0.0 <= lam <= 1.0:
        raise DegenerateInputError(f"scale factor must lie in [0, 1], got {lam}")
    if not var > 0:
        raise DegenerateInputError(f"variance must be positive, got {var}")
    arr = _as_array(z)
    if arr.ndim == 1:
        return 0.5 * lam * lam * float(arr @ arr) / var
    if arr.ndim == 2:
        per_sample = 0.5 * lam * lam * np.einsum("ij,ij->i", arr, arr) / var
        return float(per_sample.mean())
    raise ShapeError(f"expected a vector or a matrix of samples, got ndim={arr.ndim}")


@dataclass(frozen=True)
class SigmaEntry:
    var: float
    values: tuple[float, ...]
    strictly_increasing: bool
    zero_at_zero: bool


@dataclass(frozen=True)
class NarrowingReport:
    entries: tuple[SigmaEntry, ...]
    degenerate: bool
    passed: bool


def verify_narrowing(z, lam_grid: Sequence[float], var_sequence: Sequence[float]) -> NarrowingReport:
    """Check that the MI bound grows strictly along the scale grid for every
    variance, and is exactly zero at scale 0. A zero-norm `z` has a constant
    zero bound; that is reported as degenerate rather than failed."""
    arr = _as_array(z)
    grid = [float(l) for l in lam_grid]
    if sorted(grid) != grid or len(set(grid)) != len(grid):
        raise DegenerateInputError("scale grid must be strictly increasing")
    degenerate = float(np.abs(arr).max(initial=0.0)) == 0.0
    entries = []
    all_ok = True
    for var in var_sequence:
        values = tuple(sup_mi_bound(arr, l, var) for l in grid)
        increasing = all(a < b for a, b in zip(values, values[1:]))
        zero_ok = all(v == 0.0 for l, v in zip(grid, values) if l == 0.0)
        entries.append(
            SigmaEntry(var=float(var), values=values, strictly_increasing=increasing, zero_at_zero=zero_ok)
        )
        if not degenerate:
            all_ok = all_ok and increasing and zero_ok
        else:
            all_ok = all_ok and all(v == 0.0 for v in values)
    return NarrowingReport(entries=tuple(entries), degenerate=degenerate, passed=all_ok)


@dataclass(frozen=True)
class JointPMF:
    """Discrete joint distribution p(x, y) as a matrix of cell probabilities."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError("joint pmf must be a matrix")
        if (arr < 0).any():
            raise DegenerateInputError("pmf entries must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-12:
            raise DegenerateInputError(f"pmf mass {total} differs from 1 by more than 1e-12")
        object.__setattr__(self, "p", arr)

    def marginal_x(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def marginal_y(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def transpose(self) -> "JointPMF":
        return JointPMF(self.p.T)


def mutual_info_discrete(j: JointPMF) -> float:
    """I(X; Y) = sum p(x,y) ln[ p(x,y) / (p(x) p(y)) ], with 0 ln 0 := 0."""
    p = j.p
    px = j.marginal_x()
    py = j.marginal_y()
    mask = p > 0
    outer = np.outer(px, py)
    terms = p[mask] * np.log(p[mask] / outer[mask])
    return float(terms.sum())
