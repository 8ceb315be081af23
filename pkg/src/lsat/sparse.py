"""Matrix-free least squares via conjugate gradients on the normal equations.

The coefficient matrix is only touched through ``matvec``/``rmatvec`` of a
:class:`scipy.sparse.linalg.LinearOperator` (anything accepted by
``aslinearoperator`` works: dense arrays, scipy sparse matrices, operators).
The gradient with respect to ``A`` is returned only on a fixed sparsity
pattern, never as a dense ``k x n`` array.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import aslinearoperator

from .dense import as_matrix
from .errors import AdjointInconsistent, DimensionMismatch, NoConvergence

__all__ = [
    "SparsityPattern",
    "SparseSolveState",
    "as_operator",
    "check_adjoint",
    "cg_normal",
    "solve_cg",
    "backward_restricted",
]

DEFAULT_TOL = 1e-10
ADJOINT_RTOL = 1e-10
_PROBE_SEED = 20190612


@dataclass(frozen=True)
class SparsityPattern:
    """Sorted, duplicate-free list of ``(row, col)`` entries with values of ``A``."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not rows.shape == cols.shape == values.shape:
            raise DimensionMismatch("rows, cols and values must have equal length")
        k, n = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= k or cols.min() < 0 or cols.max() >= n):
            raise IndexError(f"pattern entry out of bounds for shape {self.shape}")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate pattern entry ({rows[i]}, {cols[i]})")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", (int(k), int(n)))

    def __len__(self):
        return self.rows.size

    @classmethod
    def from_sparse(cls, matrix):
        """Pattern of the stored entries of a scipy sparse matrix."""
        coo = sparse.coo_matrix(matrix)
        coo.sum_duplicates()
        return cls(coo.row, coo.col, coo.data, coo.shape)

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), shape)


@dataclass
class SparseSolveState:
    theta: np.ndarray
    per_column_iterations: np.ndarray
    per_column_residuals: np.ndarray
    # per column: normal-equation residual norms and ||A x - b|| after each iteration
    normal_residual_history: list = field(default_factory=list, repr=False)
    ls_residual_history: list = field(default_factory=list, repr=False)


def as_operator(A):
    if sparse.issparse(A):
        A = sparse.csr_matrix(A, dtype=np.float64)
    return aslinearoperator(A)


def check_adjoint(op, rtol=ADJOINT_RTOL):
    """Probe ``<A u, v> == <u, A^T v>`` once with a fixed-seed random pair."""
    k, n = op.shape
    rng = np.random.default_rng(_PROBE_SEED)
    u = rng.standard_normal(n)
    v = rng.standard_normal(k)
    Au = op.matvec(u)
    Atv = op.rmatvec(v)
    lhs, rhs = float(Au @ v), float(u @ Atv)
    scale = np.linalg.norm(Au) * np.linalg.norm(v) + np.linalg.norm(u) * np.linalg.norm(Atv)
    if abs(lhs - rhs) > rtol * max(scale, np.finfo(float).tiny):
        raise AdjointInconsistent(
            f"operator fails the adjoint probe: <Au,v>={lhs!r}, <u,A'v>={rhs!r}"
        )


def _cg_column(op, rhs, tol, max_iter, b=None):
    """CG on ``A^T A x = rhs`` from ``x = 0``.

    Returns ``(x, iterations, true_residual, normal_hist, ls_hist)``. When the
    original right-hand side ``b`` is given (``rhs = A^T b``), ``ls_hist``
    tracks ``||A x - b||``.
    """
    n = rhs.size
    x = np.zeros(n)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    threshold = tol * (1.0 + np.linalg.norm(rhs))
    ls_r = None if b is None else b.copy()
    normal_hist = [np.sqrt(rs)]
    ls_hist = [] if b is None else [float(np.linalg.norm(ls_r))]
    it = 0
    while True:
        if np.sqrt(rs) <= threshold:
            true_r = rhs - op.rmatvec(op.matvec(x))
            true_norm = float(np.linalg.norm(true_r))
            if true_norm <= threshold:
                return x, it, true_norm, normal_hist, ls_hist
            # recurrence drifted; restart from the true residual
            r = true_r
            p = r.copy()
            rs = float(r @ r)
        if it >= max_iter:
            true_norm = float(np.linalg.norm(rhs - op.rmatvec(op.matvec(x))))
            return x, it, true_norm, normal_hist, ls_hist
        q = op.matvec(p)
        qq = float(q @ q)
        if qq == 0.0:
            true_norm = float(np.linalg.norm(rhs - op.rmatvec(op.matvec(x))))
            return x, it, true_norm, normal_hist, ls_hist
        alpha = rs / qq
        x += alpha * p
        r -= alpha * op.rmatvec(q)
        if ls_r is not None:
            ls_r -= alpha * q
            ls_hist.append(float(np.linalg.norm(ls_r)))
        rs_new = float(r @ r)
        normal_hist.append(np.sqrt(rs_new))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1


def cg_normal(op, rhs, tol=DEFAULT_TOL, max_iter=None, b=None):
    """Column-by-column CG solve of ``(A^T A) X = rhs``."""
    k, n = op.shape
    rhs = as_matrix(rhs, "rhs")
    if rhs.shape[0] != n:
        raise DimensionMismatch(f"rhs has {rhs.shape[0]} rows, operator has {n} columns")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * n
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    m = rhs.shape[1]
    X = np.zeros((n, m))
    iters = np.zeros(m, dtype=np.int64)
    resid = np.zeros(m)
    normal_hist, ls_hist = [], []
    failed = []
    for j in range(m):
        bj = None if b is None else np.ascontiguousarray(b[:, j])
        x, it, res, nh, lh = _cg_column(op, rhs[:, j].copy(), tol, max_iter, bj)
        X[:, j], iters[j], resid[j] = x, it, res
        normal_hist.append(np.asarray(nh))
        ls_hist.append(np.asarray(lh))
        if res > tol * (1.0 + np.linalg.norm(rhs[:, j])):
            failed.append(j)
    if failed:
        raise NoConvergence(
            f"CG did not reach tol={tol:g} within {max_iter} iterations "
            f"for columns {failed}",
            columns=failed,
        )
    return SparseSolveState(X, iters, resid, normal_hist, ls_hist)


def solve_cg(A, B, tol=DEFAULT_TOL, max_iter=None):
    """Least squares solve of ``min ||A theta - B||_F`` by CG on the normal equations.

    Each column of ``B`` is solved independently from a zero start. The
    operator is probed once for adjoint consistency before solving.
    """
    op = as_operator(A)
    B = as_matrix(B, "B")
    if B.shape[0] != op.shape[0]:
        raise DimensionMismatch(f"B has {B.shape[0]} rows, operator has {op.shape[0]}")
    check_adjoint(op)
    rhs = np.column_stack([op.rmatvec(B[:, j]) for j in range(B.shape[1])])
    return cg_normal(op, rhs.reshape(op.shape[1], B.shape[1]), tol, max_iter, b=B)


def _apply_columns(op, X):
    return np.column_stack([op.matvec(X[:, j]) for j in range(X.shape[1])]).reshape(
        op.shape[0], X.shape[1]
    )


def backward_restricted(A, pattern, B, theta, dTheta, tol=DEFAULT_TOL, max_iter=None):
    """Gradient of ``psi(theta)`` with respect to ``A`` on ``pattern`` and to ``B``.

    Solves ``(A^T A) C = dTheta`` by CG and evaluates, for each ``(i, j)`` in
    the pattern, entry ``(i, j)`` of ``(B - A theta) C^T - A C theta^T``.

    Returns
    -------
    dA_on_pattern : ndarray, shape (len(pattern),)
        Values aligned with ``pattern.rows`` / ``pattern.cols``.
    dB : ndarray, shape (k, m)
        ``A C``.
    """
    op = as_operator(A)
    B = as_matrix(B, "B")
    theta = as_matrix(theta, "theta")
    dTheta = as_matrix(dTheta, "dTheta")
    k, n = op.shape
    if B.shape[0] != k or theta.shape != (n, B.shape[1]) or dTheta.shape != theta.shape:
        raise DimensionMismatch("shapes of B, theta, dTheta do not conform with A")
    if tuple(pattern.shape) != (k, n):
        raise DimensionMismatch(f"pattern shape {pattern.shape} != operator shape {(k, n)}")
    C = cg_normal(op, dTheta, tol, max_iter).theta
    AC = _apply_columns(op, C)
    if len(pattern) == 0:
        return np.zeros(0), AC
    residual = B - _apply_columns(op, theta)
    i, j = pattern.rows, pattern.cols
    values = np.einsum("ek,ek->e", residual[i], C[j]) - np.einsum("ek,ek->e", AC[i], theta[j])
    return values, AC
