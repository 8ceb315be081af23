"""Hyper-parameter vectors and proximal operators.

A regularizer here is any object with ``value(omega)`` (possibly ``inf``
outside its domain) and ``prox(nu, t)`` returning
``argmin_w t * r(w) + 0.5 * ||w - nu||^2``.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HyperVector",
    "prox_sum_l2",
    "prox_l1",
    "prox_zero_sum_l2",
    "Regularizer",
    "Zero",
    "SumSquares",
    "L1",
    "ZeroSumSquares",
    "Separable",
]

SEGMENT_ORDER = ("feat", "data", "reg")


@dataclass
class HyperVector:
    """Flat hyper-parameter vector with named contiguous segments.

    ``segments`` maps a name to a ``(start, stop)`` pair; the ranges must tile
    ``[0, len(values))`` without gaps or overlap.
    """

    values: np.ndarray
    segments: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("hyper-parameters must be finite")
        if not self.segments:
            self.segments = {"all": (0, self.values.size)}
        self.segments = {k: (int(a), int(b)) for k, (a, b) in self.segments.items()}
        spans = sorted(self.segments.values())
        pos = 0
        for a, b in spans:
            if a != pos or b < a:
                raise ValueError(f"segments {self.segments} do not partition [0, {self.values.size})")
            pos = b
        if pos != self.values.size:
            raise ValueError(f"segments {self.segments} do not partition [0, {self.values.size})")

    @classmethod
    def from_parts(cls, **parts):
        """Build from named pieces in the canonical feat, data, reg order.

        >>> HyperVector.from_parts(feat=[3.0], reg=[0.0, 0.0]).segments
        {'feat': (0, 1), 'data': (1, 1), 'reg': (1, 3)}
        """
        names = [n for n in SEGMENT_ORDER if n in parts] + [
            n for n in parts if n not in SEGMENT_ORDER
        ]
        chunks, segments, pos = [], {}, 0
        for name in names:
            v = np.atleast_1d(np.asarray(parts[name], dtype=np.float64)).ravel()
            segments[name] = (pos, pos + v.size)
            chunks.append(v)
            pos += v.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, segments)

    def __len__(self):
        return self.values.size

    def __getitem__(self, name):
        a, b = self.segments[name]
        return self.values[a:b]

    def size_of(self, name):
        a, b = self.segments.get(name, (0, 0))
        return b - a

    def with_values(self, values):
        return HyperVector(values, dict(self.segments))

    def copy(self):
        return self.with_values(self.values.copy())


def prox_sum_l2(nu, t, lam):
    """Prox of ``lam * ||w||_2^2``: ``nu / (1 + 2 t lam)``."""
    return np.asarray(nu, dtype=np.float64) / (1.0 + 2.0 * t * lam)


def prox_l1(nu, t, lam):
    """Prox of ``lam * ||w||_1``: soft thresholding at ``t * lam``."""
    nu = np.asarray(nu, dtype=np.float64)
    return np.sign(nu) * np.maximum(np.abs(nu) - t * lam, 0.0)


def prox_zero_sum_l2(nu, t, lam):
    """Prox of ``lam * ||w||_2^2`` restricted to ``sum(w) == 0``.

    Eliminating the multiplier of the KKT system gives the closed form
    ``(nu - mean(nu)) / (1 + 2 t lam)``. ``lam = 0`` is plain projection.
    """
    nu = np.asarray(nu, dtype=np.float64)
    if nu.size == 0:
        return nu.copy()
    centered = nu - nu.mean()
    # remove the rounding residue of the mean subtraction
    centered -= centered.sum() / nu.size
    return centered / (1.0 + 2.0 * t * lam)


class Regularizer:
    """Base for regularizers acting on a whole vector.

    Subclasses implement ``_value`` and ``_prox`` on plain arrays; ``value``
    and ``prox`` also accept a :class:`HyperVector` and keep its layout.
    """

    def _value(self, w):
        raise NotImplementedError

    def _prox(self, nu, t):
        raise NotImplementedError

    def value(self, omega):
        return self._value(_values(omega))

    def prox(self, nu, t):
        out = self._prox(_values(nu), t)
        return nu.with_values(out) if isinstance(nu, HyperVector) else out


class Zero(Regularizer):
    """``r = 0`` on all of R^p."""

    def _value(self, w):
        return 0.0

    def _prox(self, nu, t):
        return nu.copy()


@dataclass(frozen=True)
class SumSquares(Regularizer):
    lam: float

    def _value(self, w):
        return self.lam * float(np.dot(w, w))

    def _prox(self, nu, t):
        return prox_sum_l2(nu, t, self.lam)


@dataclass(frozen=True)
class L1(Regularizer):
    lam: float

    def _value(self, w):
        return self.lam * float(np.sum(np.abs(w)))

    def _prox(self, nu, t):
        return prox_l1(nu, t, self.lam)


@dataclass(frozen=True)
class ZeroSumSquares(Regularizer):
    """``lam * ||w||^2`` plus the indicator of ``{sum(w) == 0}``."""

    lam: float = 0.0
    atol: float = 1e-9

    def _value(self, w):
        if w.size and abs(w.sum()) > self.atol * max(1, w.size):
            return np.inf
        return self.lam * float(np.dot(w, w))

    def _prox(self, nu, t):
        return prox_zero_sum_l2(nu, t, self.lam)


@dataclass
class Separable(Regularizer):
    """Sum of per-segment regularizers; segments not listed get ``r = 0``.

    Only meaningful on a :class:`HyperVector`, whose segment names are matched
    against the keys of ``parts``.
    """

    parts: dict

    def value(self, omega):
        total = 0.0
        for name, reg in self.parts.items():
            if omega.size_of(name):
                total += reg._value(omega[name])
        return total

    def prox(self, nu, t):
        out = nu.values.copy()
        for name, reg in self.parts.items():
            a, b = nu.segments.get(name, (0, 0))
            if b > a:
                out[a:b] = reg._prox(nu.values[a:b], t)
        return nu.with_values(out)


def _values(x):
    return x.values if isinstance(x, HyperVector) else np.asarray(x, dtype=np.float64)
