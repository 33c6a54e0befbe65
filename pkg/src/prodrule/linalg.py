"""Dense linear algebra over real vectors and SPD matrices.

Vectors are plain 1-D float64 arrays. Symmetric positive-definite matrices
are wrapped in :class:`SpdMatrix`, which caches the lower Cholesky factor and
the log determinant so repeated quadratic-form evaluations stay cheap.
Everything is frozen (arrays marked read-only) after construction and can be
shared across any number of concurrent readers. Sized for feature dimensions
up to a few hundred; dense storage throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

__all__ = [
    "SpdMatrix",
    "as_vector",
    "block_diag",
    "cholesky",
    "mahalanobis_sq",
    "mahalanobis_sq_rows",
]


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array.

    Raises
    ------
    DimensionMismatch
        If ``x`` is not one-dimensional.
    ValueError
        If any entry is NaN or infinite.
    """
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor L with L @ L.T == m.

    The input is symmetrized by mirroring its lower triangle onto the upper
    before factorization, so roundoff asymmetry in user input is ignored.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is non-positive (degenerate covariance). The caller
        decides whether to regularize.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    sym = np.tril(a) + np.tril(a, -1).T
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric positive-definite matrix with cached factorization.

    Attributes
    ----------
    data : ndarray, shape (d, d)
        Exactly symmetric matrix (lower triangle mirrored at construction).
    chol : ndarray, shape (d, d)
        Lower-triangular Cholesky factor.
    log_det : float
        log |data|, computed as 2 * sum(log(diag(chol))).
    """

    data: np.ndarray
    chol: np.ndarray
    log_det: float

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_matrix(cls, m) -> "SpdMatrix":
        """Build from any square array-like; mirrors the lower triangle."""
        chol = cholesky(m)
        sym = np.tril(np.asarray(m, dtype=np.float64))
        sym = sym + np.tril(sym, -1).T
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(_frozen(sym), _frozen(chol), log_det)

    @classmethod
    def isotropic(cls, sigma_sq: float, dim: int) -> "SpdMatrix":
        """sigma_sq * I without going through LAPACK."""
        if sigma_sq <= 0.0:
            raise NotPositiveDefinite(f"isotropic variance must be > 0, got {sigma_sq}")
        data = np.eye(dim) * float(sigma_sq)
        chol = np.eye(dim) * float(np.sqrt(sigma_sq))
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(_frozen(data), _frozen(chol), log_det)

    @classmethod
    def diagonal(cls, variances) -> "SpdMatrix":
        """diag(variances); every variance must be positive."""
        v = as_vector(variances, "variances")
        if np.any(v <= 0.0):
            raise NotPositiveDefinite("diagonal variances must all be > 0")
        data = np.diag(v)
        chol = np.diag(np.sqrt(v))
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(_frozen(data), _frozen(chol), log_det)


def mahalanobis_sq(x, mu, sigma: SpdMatrix) -> float:
    """Quadratic form (x - mu)^T sigma^{-1} (x - mu).

    Computed by one forward substitution against the cached Cholesky factor
    (solve L w = x - mu, return ||w||^2); sigma^{-1} is never materialized.
    """
    xv = as_vector(x, "x")
    mv = as_vector(mu, "mu")
    if xv.shape[0] != mv.shape[0] or xv.shape[0] != sigma.dim:
        raise DimensionMismatch(
            f"x has dim {xv.shape[0]}, mu has dim {mv.shape[0]}, sigma has dim {sigma.dim}"
        )
    w = solve_triangular(sigma.chol, xv - mv, lower=True, check_finite=False)
    return float(w @ w)


def mahalanobis_sq_rows(X, mu, sigma: SpdMatrix) -> np.ndarray:
    """Row-wise quadratic forms for a batch X of shape (n, d); returns (n,)."""
    Xa = np.asarray(X, dtype=np.float64)
    mv = as_vector(mu, "mu")
    if Xa.ndim != 2 or Xa.shape[1] != mv.shape[0] or Xa.shape[1] != sigma.dim:
        raise DimensionMismatch(
            f"X has shape {Xa.shape}, mu has dim {mv.shape[0]}, sigma has dim {sigma.dim}"
        )
    if Xa.shape[0] == 0:
        return np.zeros(0)
    W = solve_triangular(sigma.chol, (Xa - mv).T, lower=True, check_finite=False)
    return np.einsum("dn,dn->n", W, W)


def block_diag(blocks) -> SpdMatrix:
    """Assemble SPD blocks into one block-diagonal SpdMatrix.

    Off-diagonal blocks are exactly zero. The result is refactorized from
    the assembled dense matrix (not stitched from the block factors), so its
    cached log_det provides an independent route for checking the identity
    log|diag(A, B)| = log|A| + log|B|.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("block_diag requires at least one block")
    if len(blocks) == 1:
        return blocks[0]
    dims = [b.dim for b in blocks]
    total = int(sum(dims))
    out = np.zeros((total, total))
    at = 0
    for b in blocks:
        out[at : at + b.dim, at : at + b.dim] = b.data
        at += b.dim
    return SpdMatrix.from_matrix(out)
