"""Hyper-parametrized least squares data fitting.

The fitting problem stacks weighted data rows over weighted regularization
rows::

    A(w) = [ exp(w_data_i) * phi(u_i, w_feat)^T ]    B(w) = [ exp(w_data_i) * y_i^T ]
           [ exp(w_reg_j)  * R_j                 ]           [ 0                     ]

and the true objective is the mean penalty of the validation predictions
``phi(u_val, w_feat)^T theta``. :func:`objective_and_gradient` returns that
objective together with its exact gradient in ``w``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import dense
from .errors import DimensionMismatch, NonFiniteObjective
from .featurize import Identity
from .prox import HyperVector

__all__ = [
    "Dataset",
    "RegularizerTerm",
    "Square",
    "Huber",
    "Bisquare",
    "CrossEntropy",
    "penalty_value",
    "penalty_grad",
    "FitProblem",
    "assemble",
    "objective_and_gradient",
    "validation_loss",
    "predict",
    "test_error",
]


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.array(self.inputs, dtype=np.float64)
        self.targets = dense.as_matrix(self.targets, "targets")
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain NaN or Inf")
        # read-only so featurizers may cache quantities derived from the inputs
        self.inputs.flags.writeable = False

    def __len__(self):
        return self.inputs.shape[0]

    @classmethod
    def from_labels(cls, inputs, labels, num_classes):
        labels = np.asarray(labels, dtype=np.int64)
        targets = np.zeros((labels.size, num_classes))
        targets[np.arange(labels.size), labels] = 1.0
        return cls(inputs, targets)

    @property
    def labels(self):
        return np.argmax(self.targets, axis=1)

    def is_one_hot(self):
        T = self.targets
        return bool(np.all((T == 0) | (T == 1)) and np.all(T.sum(axis=1) == 1))

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx])


@dataclass
class RegularizerTerm:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.matrix = dense.as_matrix(self.matrix, f"regularizer {self.label!r}")


# ---------------------------------------------------------------------------
# penalties; the *_rows methods work on N x m batches


@dataclass(frozen=True)
class Square:
    def rows(self, Yhat, Y):
        R = Yhat - Y
        return np.sum(R * R, axis=1)

    def grad_rows(self, Yhat, Y):
        return 2.0 * (Yhat - Y)


@dataclass(frozen=True)
class Huber:
    M: float

    def __post_init__(self):
        if not (np.isfinite(self.M) and self.M > 0):
            raise ValueError("Huber threshold M must be positive and finite")

    def rows(self, Yhat, Y):
        norm = np.linalg.norm(Yhat - Y, axis=1)
        return np.where(norm <= self.M, norm**2, self.M * (2.0 * norm - self.M))

    def grad_rows(self, Yhat, Y):
        R = Yhat - Y
        norm = np.linalg.norm(R, axis=1, keepdims=True)
        outer = 2.0 * self.M * R / np.where(norm > 0, norm, 1.0)
        return np.where(norm <= self.M, 2.0 * R, outer)


@dataclass(frozen=True)
class Bisquare:
    M: float

    def __post_init__(self):
        if not (np.isfinite(self.M) and self.M > 0):
            raise ValueError("bisquare threshold M must be positive and finite")

    def rows(self, Yhat, Y):
        sq = np.sum((Yhat - Y) ** 2, axis=1)
        cap = self.M**2 / 6.0
        inner = cap * (1.0 - (1.0 - sq / self.M**2) ** 3)
        return np.where(sq <= self.M**2, inner, cap)

    def grad_rows(self, Yhat, Y):
        R = Yhat - Y
        sq = np.sum(R * R, axis=1, keepdims=True)
        inner = R * (1.0 - sq / self.M**2) ** 2
        return np.where(sq <= self.M**2, inner, 0.0)


@dataclass(frozen=True)
class CrossEntropy:
    """``logsumexp(yhat) - <yhat, y>``; for one-hot ``y = e_i`` this is ``lse - yhat_i``."""

    def rows(self, Yhat, Y):
        return logsumexp(Yhat, axis=1) - np.sum(Yhat * Y, axis=1)

    def grad_rows(self, Yhat, Y):
        Z = Yhat - Yhat.max(axis=1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=1, keepdims=True) - Y


def penalty_value(pen, yhat, y):
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return float(pen.rows(yhat, y)[0])


def penalty_grad(pen, yhat, y):
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return pen.grad_rows(yhat, y)[0]


# ---------------------------------------------------------------------------
# the fitting problem


@dataclass
class FitProblem:
    """Training/validation data plus the structure of ``A(w)``, ``B(w)``.

    ``weight_data`` adds one log-weight per training example to ``w``;
    without it every data row has weight one and the ``data`` segment is
    empty.
    """

    train: Dataset
    val: Dataset
    featurizer: object = field(default_factory=Identity)
    reg_terms: list = field(default_factory=list)
    penalty: object = field(default_factory=Square)
    weight_data: bool = False

    def __post_init__(self):
        n = self.feature_dim
        for term in self.reg_terms:
            if term.matrix.shape[1] != n:
                raise DimensionMismatch(
                    f"regularizer {term.label!r} has {term.matrix.shape[1]} columns, "
                    f"features have dimension {n}"
                )
        if self.train.targets.shape[1] != self.val.targets.shape[1]:
            raise DimensionMismatch("train and validation targets differ in width")
        self._reg_stack = (
            np.vstack([t.matrix for t in self.reg_terms]) if self.reg_terms else np.zeros((0, n))
        )
        self._reg_sizes = [t.matrix.shape[0] for t in self.reg_terms]

    @property
    def feature_dim(self):
        return self.featurizer.out_dim(self.train.inputs.shape[1])

    @property
    def hyper_layout(self):
        return {
            "feat": self.featurizer.param_count,
            "data": len(self.train) if self.weight_data else 0,
            "reg": len(self.reg_terms),
        }

    def omega(self, feat=(), data=None, reg=None):
        """HyperVector with this problem's layout (missing parts default to zero)."""
        lay = self.hyper_layout
        if data is None:
            data = np.zeros(lay["data"])
        if reg is None:
            reg = np.zeros(lay["reg"])
        omega = HyperVector.from_parts(feat=feat, data=data, reg=reg)
        self.check_omega(omega)
        return omega

    def check_omega(self, omega):
        for name, size in self.hyper_layout.items():
            if omega.size_of(name) != size:
                raise DimensionMismatch(
                    f"segment {name!r} has length {omega.size_of(name)}, expected {size}"
                )

    def _row_weights(self, omega):
        if self.weight_data:
            return np.exp(omega["data"])
        return np.ones(len(self.train))

    def _reg_weights(self, omega):
        return np.repeat(np.exp(omega["reg"]), self._reg_sizes)


def _assemble(p, omega):
    p.check_omega(omega)
    w_feat = omega["feat"]
    Phi = p.featurizer(p.train.inputs, w_feat)
    if Phi.shape[1] != p._reg_stack.shape[1]:
        raise DimensionMismatch(
            f"featurizer produced {Phi.shape[1]} features, regularizers expect "
            f"{p._reg_stack.shape[1]}"
        )
    wd = p._row_weights(omega)
    A = np.vstack([wd[:, None] * Phi, p._reg_weights(omega)[:, None] * p._reg_stack])
    B = np.vstack([wd[:, None] * p.train.targets, np.zeros((p._reg_stack.shape[0], p.train.targets.shape[1]))])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NonFiniteObjective("assembled problem data overflowed")
    return A, B, Phi, wd


def assemble(p, omega):
    """Stacked ``(A, B)`` for hyper-parameters ``omega``."""
    A, B, _, _ = _assemble(p, omega)
    return A, B


def predict(theta, featurizer, omega_feat, inputs):
    return featurizer(inputs, omega_feat) @ theta


def validation_loss(p, theta, omega):
    Yhat = predict(theta, p.featurizer, omega["feat"], p.val.inputs)
    return float(np.mean(p.penalty.rows(Yhat, p.val.targets)))


def objective_and_gradient(p, omega):
    """Validation loss at ``theta_ls(omega)`` and its gradient in ``omega``.

    Returns
    -------
    psi : float
    g : ndarray, same length as ``omega``
    theta : ndarray, shape (n, m)
    """
    A, B, Phi, wd = _assemble(p, omega)
    f = dense.solve(A, B)
    theta = f.theta
    w_feat = omega["feat"]
    Nv = len(p.val)
    Phi_val = p.featurizer(p.val.inputs, w_feat)
    Yhat = Phi_val @ theta
    psi = float(np.mean(p.penalty.rows(Yhat, p.val.targets)))
    P = p.penalty.grad_rows(Yhat, p.val.targets) / Nv
    dTheta = Phi_val.T @ P
    dA, dB = dense.backward(f, dTheta)

    N = len(p.train)
    dA_data, dA_reg = dA[:N], dA[N:]
    g = np.zeros(len(omega))
    if p.weight_data:
        a, b = omega.segments["data"]
        g[a:b] = wd * (
            np.einsum("ij,ij->i", dA_data, Phi) + np.einsum("ij,ij->i", dB[:N], p.train.targets)
        )
    a, b = omega.segments["reg"]
    if b > a:
        reg_w = np.exp(omega["reg"])
        contrib = np.einsum("ij,ij->i", dA_reg, p._reg_stack)
        row = 0
        for j, size in enumerate(p._reg_sizes):
            g[a + j] = reg_w[j] * contrib[row:row + size].sum()
            row += size
    a, b = omega.segments["feat"]
    if b > a:
        g[a:b] = p.featurizer.pullback(p.train.inputs, w_feat, wd[:, None] * dA_data)
        g[a:b] += p.featurizer.pullback(p.val.inputs, w_feat, P @ theta.T)
    return psi, g, theta


def test_error(theta, featurizer, omega_feat, test):
    """Fraction of rows whose arg-max prediction misses the target class.

    Ties go to the lowest class index.
    """
    Yhat = predict(theta, featurizer, omega_feat, test.inputs)
    return float(np.mean(np.argmax(Yhat, axis=1) != np.argmax(test.targets, axis=1)))
