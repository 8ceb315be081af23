"""Differentiable featurizers and the archetype feature pipeline.

A featurizer maps a batch of raw inputs ``X`` (N x d) and a parameter vector
``w`` to features (N x n). ``vjp(X, w, cot)`` returns the cotangents on
``X`` and on ``w`` (summed over the batch) for an output cotangent ``cot``;
``pullback`` keeps only the parameter part.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch

__all__ = [
    "Featurizer",
    "Identity",
    "AffineScale",
    "PowerTransform",
    "LowRank",
    "AppendConstant",
    "ArchetypeSoftmax",
    "Concat",
    "Chain",
    "ArchetypeSet",
    "KMeansResult",
    "affine_scale",
    "power_transform",
    "power_transform_grad",
    "low_rank",
    "softmax",
    "softmax_vjp",
    "archetype_features",
    "kmeans",
    "kmeans_fit",
    "grid_incidence",
    "mnist_featurizer",
]

SINGULAR_GAP = 1e-12


# ---------------------------------------------------------------------------
# elementary functions


def affine_scale(x, a, b):
    return np.asarray(a) * np.asarray(x) + np.asarray(b)


def power_transform(x, c, gamma):
    """``sign(x - c) * |x - c| ** gamma`` (elementwise, broadcasting)."""
    z = np.asarray(x, dtype=np.float64) - c
    with np.errstate(divide="ignore"):
        return np.sign(z) * np.abs(z) ** gamma


def power_transform_grad(x, c, gamma):
    """Partial derivatives ``(d/dx, d/dc, d/dgamma)`` of :func:`power_transform`.

    All three are set to zero where ``|x - c| < 1e-12``, where the transform
    is not differentiable for ``gamma <= 1``.
    """
    z = np.asarray(x, dtype=np.float64) - c
    gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64), z.shape)
    az = np.abs(z)
    safe = az >= SINGULAR_GAP
    az_s = np.where(safe, az, 1.0)
    value = np.sign(z) * az_s**gamma
    dx = np.where(safe, gamma * az_s ** (gamma - 1.0), 0.0)
    dgamma = np.where(safe, value * np.log(az_s), 0.0)
    return dx, -dx, dgamma


def low_rank(x, T):
    T = np.asarray(T, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if T.ndim != 2 or T.shape[1] != x.shape[-1]:
        raise DimensionMismatch(f"T has shape {T.shape}, input has length {x.shape[-1]}")
    return x @ T.T


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_vjp(s, cot, axis=-1):
    """Cotangent on the logits given the softmax output ``s`` and output cotangent."""
    return s * (cot - np.sum(cot * s, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# featurizer objects


class Featurizer:
    param_count = 0

    def __call__(self, X, w):
        raise NotImplementedError

    def out_dim(self, in_dim):
        raise NotImplementedError

    def vjp(self, X, w, cot):
        raise NotImplementedError

    def pullback(self, X, w, cot):
        return self.vjp(X, w, cot)[1]

    def _check(self, w):
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.size != self.param_count:
            raise DimensionMismatch(
                f"{type(self).__name__} expects {self.param_count} parameters, got {w.size}"
            )
        return w


class Identity(Featurizer):
    def __call__(self, X, w=()):
        return np.asarray(X, dtype=np.float64)

    def out_dim(self, in_dim):
        return in_dim

    def vjp(self, X, w, cot):
        return cot, np.zeros(0)


@dataclass
class AffineScale(Featurizer):
    """``a * x + b`` per input coordinate; parameters ``w = (a, b)``."""

    dim: int

    @property
    def param_count(self):
        return 2 * self.dim

    def split(self, w):
        w = self._check(w)
        return w[: self.dim], w[self.dim:]

    def __call__(self, X, w):
        a, b = self.split(w)
        return affine_scale(X, a, b)

    def out_dim(self, in_dim):
        return in_dim

    def vjp(self, X, w, cot):
        a, _ = self.split(w)
        return cot * a, np.concatenate([np.sum(cot * X, axis=0), np.sum(cot, axis=0)])


@dataclass
class PowerTransform(Featurizer):
    """Elementwise power transform with per-coordinate ``w = (c, gamma)``."""

    dim: int

    @property
    def param_count(self):
        return 2 * self.dim

    def split(self, w):
        w = self._check(w)
        return w[: self.dim], w[self.dim:]

    def __call__(self, X, w):
        c, gamma = self.split(w)
        return power_transform(X, c, gamma)

    def out_dim(self, in_dim):
        return in_dim

    def vjp(self, X, w, cot):
        c, gamma = self.split(w)
        dx, dc, dg = power_transform_grad(X, c, gamma)
        return cot * dx, np.concatenate([np.sum(cot * dc, axis=0), np.sum(cot * dg, axis=0)])


@dataclass
class LowRank(Featurizer):
    """``T x`` with ``T`` (rank x dim) stored row-major in ``w``."""

    rank: int
    dim: int

    @property
    def param_count(self):
        return self.rank * self.dim

    def matrix(self, w):
        return self._check(w).reshape(self.rank, self.dim)

    def __call__(self, X, w):
        return low_rank(X, self.matrix(w))

    def out_dim(self, in_dim):
        return self.rank

    def vjp(self, X, w, cot):
        T = self.matrix(w)
        return cot @ T, (cot.T @ X).ravel()


class AppendConstant(Featurizer):
    """``(x, 1)``."""

    def __call__(self, X, w=()):
        X = np.asarray(X, dtype=np.float64)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def out_dim(self, in_dim):
        return in_dim + 1

    def vjp(self, X, w, cot):
        return cot[:, :-1], np.zeros(0)


@dataclass
class ArchetypeSoftmax(Featurizer):
    """``softmax(-d(x) / exp(sigma))`` with ``d(x)_i = ||x - a_i||``; ``w = (sigma,)``."""

    centers: np.ndarray
    param_count: int = field(default=1, init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def distances(self, X):
        """Distances to every archetype.

        The distances do not depend on ``sigma``. They are cached for
        read-only arrays (such as :class:`lsat.datafit.Dataset` inputs), which
        cannot change behind the cache's back; writeable arrays are always
        recomputed.
        """
        hit = self._cache.get(id(X))
        if hit is not None and hit[0] is X:
            return hit[1]
        Xa = np.asarray(X, dtype=np.float64)
        if Xa.shape[1] != self.centers.shape[1]:
            raise DimensionMismatch(
                f"inputs have dimension {Xa.shape[1]}, archetypes {self.centers.shape[1]}"
            )
        D = cdist(Xa, self.centers)
        if isinstance(X, np.ndarray) and not X.flags.writeable:
            if len(self._cache) >= 8:
                self._cache.clear()
            self._cache[id(X)] = (X, D)
        return D

    def __call__(self, X, w):
        sigma = self._check(w)[0]
        return softmax(-self.distances(X) * np.exp(-sigma))

    def out_dim(self, in_dim):
        return self.centers.shape[0]

    def vjp(self, X, w, cot):
        sigma = self._check(w)[0]
        D = self.distances(X)
        scale = np.exp(-sigma)
        z = -D * scale
        s = softmax(z)
        cz = softmax_vjp(s, cot)
        # dz/dsigma = -z ; dz/dD = -scale
        dsigma = float(np.sum(cz * -z))
        cD = -scale * cz
        with np.errstate(invalid="ignore", divide="ignore"):
            W = np.where(D > 0, cD / D, 0.0)
        cX = W.sum(axis=1, keepdims=True) * X - W @ self.centers
        return cX, np.array([dsigma])

    def pullback(self, X, w, cot):
        sigma = self._check(w)[0]
        z = -self.distances(X) * np.exp(-sigma)
        cz = softmax_vjp(softmax(z), cot)
        return np.array([float(np.sum(cz * -z))])


class _Composite(Featurizer):
    def __init__(self, parts):
        self.parts = list(parts)
        sizes = [p.param_count for p in self.parts]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def param_count(self):
        return int(self.offsets[-1])

    def params(self, w):
        w = self._check(w)
        return [w[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.parts))]


class Concat(_Composite):
    """``(f_1(x), f_2(x), ...)`` side by side; parameters concatenated in order."""

    def __call__(self, X, w=()):
        ws = self.params(w)
        return np.hstack([p(X, wi) for p, wi in zip(self.parts, ws)])

    def out_dim(self, in_dim):
        return sum(p.out_dim(in_dim) for p in self.parts)

    def vjp(self, X, w, cot):
        ws = self.params(w)
        X = np.asarray(X, dtype=np.float64)
        cX = np.zeros_like(X)
        cws = []
        col = 0
        for p, wi in zip(self.parts, ws):
            width = p.out_dim(X.shape[1])
            cx, cw = p.vjp(X, wi, cot[:, col:col + width])
            cX += cx
            cws.append(cw)
            col += width
        return cX, np.concatenate(cws) if cws else np.zeros(0)

    def pullback(self, X, w, cot):
        ws = self.params(w)
        in_dim = np.asarray(X).shape[1]
        cws, col = [], 0
        for p, wi in zip(self.parts, ws):
            width = p.out_dim(in_dim)
            if p.param_count:
                cws.append(p.pullback(X, wi, cot[:, col:col + width]))
            col += width
        return np.concatenate(cws) if cws else np.zeros(0)


class Chain(_Composite):
    """``f_l o ... o f_1``; ``parts`` are listed in application order."""

    def __call__(self, X, w=()):
        for p, wi in zip(self.parts, self.params(w)):
            X = p(X, wi)
        return X

    def out_dim(self, in_dim):
        for p in self.parts:
            in_dim = p.out_dim(in_dim)
        return in_dim

    def vjp(self, X, w, cot):
        ws = self.params(w)
        inputs = []
        for p, wi in zip(self.parts, ws):
            inputs.append(X)
            X = p(X, wi)
        cws = [None] * len(self.parts)
        for i in reversed(range(len(self.parts))):
            cot, cws[i] = self.parts[i].vjp(inputs[i], ws[i], cot)
        return cot, np.concatenate(cws) if cws else np.zeros(0)


# ---------------------------------------------------------------------------
# archetypes


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia_history: list
    n_iter: int


def _kmeanspp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = cdist(points, centers[:1], "sqeuclidean").ravel()
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = points[idx]
        d2 = np.minimum(d2, cdist(points, centers[i:i + 1], "sqeuclidean").ravel())
    return centers


def kmeans_fit(points, k, seed=0, max_iter=100):
    """Lloyd's algorithm from a k-means++ start.

    Stops when assignments stop changing or after ``max_iter`` rounds. A
    cluster that ends up empty is moved onto the point farthest from its
    current center.
    """
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= points.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {points.shape[0]}]")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(points, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = cdist(points, centers, "sqeuclidean")
        new_labels = np.argmin(d2, axis=1)
        closest = d2[np.arange(points.shape[0]), new_labels]
        counts = np.bincount(new_labels, minlength=k)
        while np.any(counts == 0):
            j = int(np.flatnonzero(counts == 0)[0])
            # only steal from clusters that keep at least one point
            donors = np.where(counts[new_labels] > 1, closest, -1.0)
            far = int(np.argmax(donors))
            counts[new_labels[far]] -= 1
            counts[j] += 1
            new_labels[far] = j
            closest[far] = 0.0
            centers[j] = points[far]
        history.append(float(closest.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    return KMeansResult(centers, labels, history, it)


def kmeans(points, k, seed=0, max_iter=100):
    return kmeans_fit(points, k, seed, max_iter).centers


@dataclass
class ArchetypeSet:
    centers: np.ndarray
    k_per_class: int

    @classmethod
    def from_labeled(cls, X, labels, k_per_class=5, seed=0, max_iter=100):
        """Run k-means separately on the points of each class and stack the centers."""
        labels = np.asarray(labels)
        blocks = []
        for c in np.unique(labels):
            pts = np.asarray(X)[labels == c]
            blocks.append(kmeans(pts, k_per_class, seed=seed + int(c), max_iter=max_iter))
        return cls(np.vstack(blocks), k_per_class)


def archetype_features(x, arch, sigma):
    """Softmax distance features of a single input vector."""
    centers = arch.centers if isinstance(arch, ArchetypeSet) else np.asarray(arch)
    return ArchetypeSoftmax(centers)(np.atleast_2d(x), [sigma])[0]


def mnist_featurizer(centers):
    """``(x, softmax(-d(x)/exp(sigma)), 1)``; its only parameter is ``sigma``."""
    return Concat([Identity(), ArchetypeSoftmax(np.asarray(centers, dtype=np.float64)), _One()])


class _One(Featurizer):
    def __call__(self, X, w=()):
        return np.ones((np.asarray(X).shape[0], 1))

    def out_dim(self, in_dim):
        return 1

    def vjp(self, X, w, cot):
        return np.zeros_like(np.asarray(X, dtype=np.float64)), np.zeros(0)


# ---------------------------------------------------------------------------
# graph regularization


def grid_incidence(height, width):
    """Edge-node incidence matrix of the 4-neighbor pixel grid.

    Nodes are pixels in row-major order. Rows list all horizontal edges
    (row-major), then all vertical edges; edge ``(u, v)`` with ``u < v`` has
    ``+1`` at ``u`` and ``-1`` at ``v``.
    """
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    idx = np.arange(height * width).reshape(height, width)
    horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    edges = np.vstack([horiz, vert])
    R = np.zeros((edges.shape[0], height * width))
    rows = np.arange(edges.shape[0])
    R[rows, edges[:, 0]] = 1.0
    R[rows, edges[:, 1]] = -1.0
    return R
