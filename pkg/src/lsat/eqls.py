"""Equality-constrained least squares through its KKT system.

    minimize ||A theta - B||_F^2   subject to   C theta = D

The KKT matrix ``M = [[A^T A, C^T], [C, 0]]`` is factorized once with a
symmetric-indefinite (Bunch-Kaufman LDL^T) factorization and reused for the
adjoint solve in :func:`backward_kkt`.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from . import dense
from .dense import as_matrix
from .errors import DimensionMismatch, SingularKkt

__all__ = ["KktSolution", "solve_kkt", "backward_kkt", "kkt_residual"]

RCOND_MIN = 1e-14


@dataclass(frozen=True)
class KktSolution:
    theta: np.ndarray
    nu: np.ndarray
    kkt_factor: tuple  # ("ldl", lu, ipiv) or ("chol", U) when there are no constraints
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def kkt_solve(self, rhs):
        return _factor_solve(self.kkt_factor, rhs)


def _factor_solve(factor, rhs):
    if factor[0] == "chol":
        U = factor[1]
        if U.shape[0] == 0:
            return np.zeros_like(rhs)
        return linalg.cho_solve((U, False), rhs, check_finite=False)
    _, lu, ipiv = factor
    x, info = lapack.dsytrs(lu, ipiv, rhs, lower=1)
    if info != 0:
        raise SingularKkt(f"dsytrs failed with info={info}")
    return x


def _ldl_factor(M):
    lu, ipiv, info = lapack.dsytrf(M, lower=1)
    if info > 0:
        raise SingularKkt(f"KKT matrix has an exactly zero pivot block at {info - 1}")
    if info < 0:
        raise ValueError(f"dsytrf argument {-info} invalid")
    anorm = np.max(np.sum(np.abs(M), axis=0)) if M.size else 0.0
    rcond, info = lapack.dsycon(lu, ipiv, anorm, lower=1)
    if info != 0 or not rcond > RCOND_MIN:
        raise SingularKkt(
            f"KKT matrix is numerically singular (rcond={rcond:.3e}); check that C has "
            "full row rank and A has independent columns on the nullspace of C"
        )
    return ("ldl", lu, ipiv)


def _constraint_block(X, cols, name):
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return X.reshape(0, cols)
    if X.ndim != 2 or X.shape[1] != cols:
        raise DimensionMismatch(f"{name} has shape {X.shape}, expected {cols} columns")
    return X


def solve_kkt(A, B, C, D):
    """Solve the KKT system for primal ``theta`` (n x m) and dual ``nu`` (d x m).

    With no constraints (``C`` has zero rows) the Gram matrix is factorized by
    Cholesky, so the result coincides with :func:`lsat.dense.solve`.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    k, n = A.shape
    m = B.shape[1]
    C = _constraint_block(C, n, "C")
    D = _constraint_block(D, m, "D")
    d = C.shape[0]
    if B.shape[0] != k:
        raise DimensionMismatch(f"A has {k} rows but B has {B.shape[0]}")
    if D.shape[0] != d:
        raise DimensionMismatch(f"C has {d} rows but D has {D.shape[0]}")
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(D))):
        raise ValueError("C or D contains NaN or Inf")
    if d > n:
        raise SingularKkt(f"{d} constraints on {n} variables cannot have full row rank")

    if d == 0:
        f = dense.solve(A, B)
        return KktSolution(f.theta, np.zeros((0, m)), ("chol", f.gram_chol), A, B, C, D)

    M = np.zeros((n + d, n + d))
    M[:n, :n] = dense.gram(A)
    M[n:, :n] = C
    M[:n, n:] = C.T
    factor = _ldl_factor(M)
    rhs = np.vstack([dense.normal_rhs(A, B), D])
    eta = _factor_solve(factor, rhs)
    return KktSolution(eta[:n], eta[n:], factor, A, B, C, D)


def kkt_residual(s):
    """``||A^T A theta + C^T nu - A^T B||_F + ||C theta - D||_F``."""
    A, B, C, D = s.A, s.B, s.C, s.D
    r1 = A.T @ (A @ s.theta) + C.T @ s.nu - A.T @ B
    r2 = C @ s.theta - D
    return float(np.linalg.norm(r1) + np.linalg.norm(r2))


def backward_kkt(s, dTheta, dNu):
    """Gradients of ``psi(theta, nu)`` with respect to ``A, B, C, D``.

    With ``[H1; H2] = M^{-1} [dTheta; dNu]``::

        dA = (B - A theta) H1^T - A H1 theta^T
        dB = A H1
        dC = -nu H1^T - H2 theta^T
        dD = H2
    """
    n, m = s.theta.shape
    d = s.nu.shape[0]
    dTheta = np.asarray(dTheta, dtype=np.float64)
    dNu = np.asarray(dNu, dtype=np.float64)
    if d == 0 and dNu.size == 0:
        dNu = dNu.reshape(0, m)
    if dTheta.shape != (n, m):
        raise DimensionMismatch(f"dTheta has shape {dTheta.shape}, expected {(n, m)}")
    if dNu.shape != (d, m):
        raise DimensionMismatch(f"dNu has shape {dNu.shape}, expected {(d, m)}")

    if d == 0:
        f = dense.LsFactorization(s.kkt_factor[1], s.A, s.B, s.theta)
        dA, dB = dense.backward(f, dTheta)
        return dA, dB, np.zeros((0, n)), np.zeros((0, m))

    H = s.kkt_solve(np.vstack([dTheta, dNu]))
    H1, H2 = H[:n], H[n:]
    A, B = s.A, s.B
    AH1 = A @ H1
    dA = (B - A @ s.theta) @ H1.T - AH1 @ s.theta.T
    dC = -s.nu @ H1.T - H2 @ s.theta.T
    return dA, AH1, dC, H2
