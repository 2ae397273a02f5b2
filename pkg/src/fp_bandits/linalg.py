"""Small dense symmetric kernels: SPD solves, quadratic norms, inverse square roots.

The hot paths call LAPACK (potrf/potrs/trtri/trtrs) directly: at d ~ 10 the
argument checking of the high-level wrappers costs more than the arithmetic.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix expected to be positive definite is not."""


def _as_vector(b) -> np.ndarray:
    return np.asarray(b, dtype=float)


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``; raises NotPositiveDefinite on a bad pivot."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise NotPositiveDefinite(f"leading minor {info} is not positive definite")
    return L


def solve_spd(A: np.ndarray, b) -> np.ndarray:
    """Solve ``A y = b`` for symmetric positive definite ``A``.

    ``b`` may be a vector or a ``(d, m)`` matrix of right-hand sides.
    """
    L = cholesky(A)
    b = _as_vector(b)
    if b.shape[0] != L.shape[0]:
        raise ValueError(f"dimension mismatch: A is {L.shape}, b has {b.shape[0]} rows")
    return cho_solve(L, b)


def inv_cholesky(A: np.ndarray) -> np.ndarray:
    """Inverse of the lower Cholesky factor of ``A`` (cheap for the small ``d`` used here)."""
    Linv, info = lapack.dtrtri(cholesky(A), lower=1)
    if info != 0:
        raise NotPositiveDefinite("singular Cholesky factor")
    return Linv


def cho_solve(L: np.ndarray, b) -> np.ndarray:
    """Solve ``L L^T y = b`` given the lower Cholesky factor ``L``."""
    y, info = lapack.dpotrs(L, _as_vector(b), lower=1)
    if info != 0:
        raise ValueError(f"potrs failed with info={info}")
    return y


def _forward(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    z, info = lapack.dtrtrs(L, b, lower=1)
    if info != 0:
        raise NotPositiveDefinite("singular Cholesky factor")
    return z


def quad_norm(A: np.ndarray, x) -> float:
    """``sqrt(x^T A^{-1} x)``, the norm of ``x`` in the inverse metric of ``A``."""
    L = cholesky(A)
    z = _forward(L, _as_vector(x))
    return float(np.sqrt(z @ z))


def quad_norms(A: np.ndarray, X: np.ndarray, L: np.ndarray | None = None) -> np.ndarray:
    """Row-wise ``||x_i||_{A^{-1}}`` for a ``(K, d)`` matrix of rows.

    A precomputed Cholesky factor ``L`` of ``A`` can be passed to skip the factorization.
    """
    if L is None:
        L = cholesky(A)
    Z = _forward(L, np.asarray(X, dtype=float).T)
    return np.sqrt(np.einsum("ij,ij->j", Z, Z))


def inv_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric ``A^{-1/2}`` via eigendecomposition."""
    A = np.asarray(A, dtype=float)
    w, Q = np.linalg.eigh(A)
    if w[0] <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    B = (Q / np.sqrt(w)) @ Q.T
    return 0.5 * (B + B.T)


def rank1_update(A: np.ndarray, x, w: float = 1.0) -> np.ndarray:
    """Return ``A + w x x^T`` (a new array; ``A`` is untouched)."""
    x = _as_vector(x)
    if w < 0:
        raise ValueError("rank-one weight must be nonnegative")
    # outer(x, x) is exactly symmetric, so the sum stays symmetric bit-for-bit
    return A + w * np.outer(x, x)
