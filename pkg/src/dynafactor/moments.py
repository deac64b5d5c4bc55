"""Lagged sample autocovariances, the pooled matrix and the projected matrix.

Everything downstream works with column spans of eigenvector blocks, so the
only requirement on :func:`sym_eigen` is a stable ordering and a fixed sign
per vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._errors import ValidationError
from .panel import as_array

__all__ = [
    "MAX_EIGEN_DIM",
    "LagCovariance",
    "PooledMatrix",
    "ProjectedMatrix",
    "sym_eigen",
    "lag_autocovariance",
    "build_m",
    "build_s",
    "pooled_from_autocovariances",
    "projected_from_covariance",
]

MAX_EIGEN_DIM = 2000


@dataclass(frozen=True)
class LagCovariance:
    lag: int
    matrix: np.ndarray


@dataclass(frozen=True)
class PooledMatrix:
    """Pooled lag-autocovariance matrix and its eigen-decomposition.

    ``eigenvalues`` are descending and ``eigenvectors[:, i]`` pairs with
    ``eigenvalues[i]``.
    """

    k0: int
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ProjectedMatrix:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def sym_eigen(matrix, rtol: float = 1e-10):
    """Eigen-decomposition of a symmetric matrix with a deterministic layout.

    Parameters
    ----------
    matrix : array_like, shape (p, p)
    rtol : float
        Allowed asymmetry ``max|A - A'|`` relative to ``max|A|``. The input is
        symmetrized before decomposition.

    Returns
    -------
    eigenvalues : ndarray, shape (p,)
        Descending.
    eigenvectors : ndarray, shape (p, p)
        Orthonormal columns. Each column's largest-magnitude entry is
        positive; ties go to the lowest row index.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    p = a.shape[0]
    if p > MAX_EIGEN_DIM:
        raise ValidationError(
            f"refusing a dense {p}x{p} eigen-decomposition (limit {MAX_EIGEN_DIM})"
        )
    if p == 0:
        return np.zeros(0), np.zeros((0, 0))
    scale = np.max(np.abs(a))
    if scale > 0 and np.max(np.abs(a - a.T)) > rtol * scale:
        raise ValidationError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(p)])
    signs[signs == 0] = 1.0
    v *= signs
    return w, v


def lag_autocovariance(panel, k: int) -> LagCovariance:
    """Lag-``k`` sample autocovariance, normalized by ``n - k``.

    The full-sample mean is subtracted before forming the products.
    """
    y = as_array(panel)
    n = y.shape[0]
    k = int(k)
    if k < 0:
        raise ValidationError(f"lag must be nonnegative, got {k}")
    if k >= n - 1:
        raise ValidationError(f"lag {k} needs n > {k + 1}, got n={n}")
    yc = y - y.mean(axis=0)
    mat = yc[k:].T @ yc[: n - k] / (n - k)
    if k == 0:
        mat = 0.5 * (mat + mat.T)
    return LagCovariance(k, mat)


def pooled_from_autocovariances(covs: Sequence[np.ndarray]) -> PooledMatrix:
    """Sum of ``C_k C_k'`` over the given lag-1..k0 autocovariances."""
    covs = [np.asarray(c, dtype=float) for c in covs]
    if not covs:
        raise ValidationError("need at least one lag")
    p = covs[0].shape[0]
    m = np.zeros((p, p))
    for c in covs:
        m += c @ c.T
    m = 0.5 * (m + m.T)
    w, v = sym_eigen(m)
    return PooledMatrix(len(covs), m, w, v)


def build_m(panel, k0: int = 2) -> PooledMatrix:
    """Pooled matrix from the sample autocovariances at lags ``1..k0``."""
    y = as_array(panel)
    n = y.shape[0]
    if k0 < 1:
        raise ValidationError(f"k0 must be positive, got {k0}")
    if k0 >= n - 1:
        raise ValidationError(f"k0={k0} needs n > {k0 + 1}, got n={n}")
    covs = [lag_autocovariance(y, k).matrix for k in range(1, k0 + 1)]
    return pooled_from_autocovariances(covs)


def _check_orthonormal(b, p, tol=1e-8):
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.size == 0:
        return np.zeros((p, 0))
    if b.shape[0] != p:
        raise ValidationError(f"basis has {b.shape[0]} rows, expected {p}")
    gram = b.T @ b
    if np.max(np.abs(gram - np.eye(b.shape[1]))) > tol:
        raise ValidationError("basis columns are not orthonormal")
    return b


def projected_from_covariance(sigma, b1) -> ProjectedMatrix:
    """``S = Sigma B1 B1' Sigma`` for a given covariance and orthonormal ``B1``."""
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    b1 = _check_orthonormal(b1, p)
    proj = sigma @ b1
    s = proj @ proj.T
    s = 0.5 * (s + s.T)
    w, v = sym_eigen(s)
    return ProjectedMatrix(s, w, v)


def build_s(panel, b1) -> ProjectedMatrix:
    """Projected matrix from the sample lag-0 covariance of ``panel``."""
    y = as_array(panel)
    return projected_from_covariance(lag_autocovariance(y, 0).matrix, b1)
