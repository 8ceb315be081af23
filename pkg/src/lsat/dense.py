"""Dense least squares through the Gram matrix, with a cached Cholesky factor.

``solve`` returns an :class:`LsFactorization` that keeps the upper Cholesky
factor of ``A.T @ A``; ``backward`` reuses it to pull a cotangent on the
solution back to cotangents on ``A`` and ``B``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, RankDeficient

__all__ = ["LsFactorization", "as_matrix", "gram", "solve", "backward"]

PIVOT_RTOL = 1e-12


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, C-ordered float64 2-D array.

    1-D input is treated as a single column.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(a)


@dataclass(frozen=True)
class LsFactorization:
    gram_chol: np.ndarray  # upper triangular U with U.T @ U = A.T @ A
    a_ref: np.ndarray
    b_ref: np.ndarray
    theta: np.ndarray

    @property
    def shape(self):
        """(k, n, m) of the problem."""
        k, n = self.a_ref.shape
        return k, n, self.b_ref.shape[1]

    def gram_solve(self, rhs):
        """Solve ``(A.T @ A) X = rhs`` with two triangular solves on the cached factor."""
        return linalg.cho_solve((self.gram_chol, False), rhs, check_finite=False)


def gram(A):
    A = as_matrix(A, "A")
    G = A.T @ A
    return 0.5 * (G + G.T)


def normal_rhs(A, B):
    # One matrix-vector product per column so every column of theta is computed
    # identically whether it is solved alone or together with others.
    out = np.empty((A.shape[1], B.shape[1]))
    At = A.T
    for j in range(B.shape[1]):
        out[:, j] = At @ np.ascontiguousarray(B[:, j])
    return out


def cholesky_upper(G):
    """Upper Cholesky factor of ``G``; raise RankDeficient on a small pivot."""
    n = G.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        U = linalg.cholesky(G, lower=False, check_finite=False)
    except linalg.LinAlgError as exc:
        raise RankDeficient(f"Cholesky of the Gram matrix failed: {exc}") from None
    pivots = np.diag(U) ** 2
    floor = PIVOT_RTOL * max(float(np.max(np.diag(G))), 0.0)
    bad = np.flatnonzero(pivots <= floor)
    if bad.size:
        raise RankDeficient(
            f"Gram matrix pivot {pivots[bad[0]]:.3e} at column {bad[0]} is below "
            f"{floor:.3e}; columns of A are (nearly) linearly dependent"
        )
    return U


def solve(A, B):
    """Least squares solution ``theta = (A^T A)^{-1} A^T B`` with cached factor.

    Parameters
    ----------
    A : array_like, shape (k, n)
        Coefficient matrix with linearly independent columns.
    B : array_like, shape (k, m)
        Right-hand sides; a 1-D ``B`` is treated as one column.

    Returns
    -------
    LsFactorization

    Raises
    ------
    DimensionMismatch
        If ``A`` and ``B`` have different row counts.
    RankDeficient
        If a Cholesky pivot of ``A.T @ A`` is at most ``1e-12`` times its
        largest diagonal entry.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but B has {B.shape[0]}")
    U = cholesky_upper(gram(A))
    theta = linalg.cho_solve((U, False), normal_rhs(A, B), check_finite=False)
    return LsFactorization(gram_chol=U, a_ref=A, b_ref=B, theta=theta)


def backward(f, dTheta):
    """Gradients of ``psi(theta)`` with respect to ``A`` and ``B``.

    ``dTheta`` is the gradient of ``psi`` at ``f.theta``. With
    ``C = (A^T A)^{-1} dTheta`` this returns::

        dA = (B - A theta) C^T - A C theta^T
        dB = A C
    """
    dTheta = as_matrix(dTheta, "dTheta")
    if dTheta.shape != f.theta.shape:
        raise DimensionMismatch(
            f"dTheta has shape {dTheta.shape}, expected {f.theta.shape}"
        )
    A, B, theta = f.a_ref, f.b_ref, f.theta
    C = f.gram_solve(dTheta)
    AC = A @ C
    residual = B - A @ theta
    dA = residual @ C.T
    # subtract in row blocks to avoid a second k x n temporary on tall problems
    step = max(1, (1 << 22) // max(1, A.shape[1]))
    thetaT = theta.T
    for start in range(0, A.shape[0], step):
        dA[start:start + step] -= AC[start:start + step] @ thetaT
    return dA, AC
