"""Central finite-difference checks of the analytic gradients.

Used by the ``gradcheck`` command; each check returns the largest
elementwise relative error over a batch of random problems.
"""

import numpy as np
import scipy.sparse as sp

from . import datafit, dense, eqls, featurize, sparse

__all__ = ["central_difference", "extrapolated_difference", "relative_error", "check_dense", "check_sparse",
           "check_eq", "check_pipeline", "run_all"]


def central_difference(fun, x, h=1e-5):
    """Gradient of scalar ``fun`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = fun(x)
        x[idx] = orig - h
        fm = fun(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def extrapolated_difference(fun, x, h=1e-3):
    """Richardson extrapolation of two central differences (steps h and h/2).

    The O(h^2) error terms cancel, leaving O(h^4) truncation, so a fairly
    large step keeps rounding error small as well.
    """
    return (4.0 * central_difference(fun, x, h / 2) - central_difference(fun, x, h)) / 3.0


def relative_error(approx, exact, floor=1e-6):
    """Max of ``|approx - exact| / max(|exact|, floor * max|exact|, tiny)``."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if exact.size == 0:
        return 0.0
    scale = np.maximum(np.abs(exact), floor * max(np.max(np.abs(exact)), 1e-300))
    return float(np.max(np.abs(approx - exact) / scale))


def check_dense(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(max(n, 5), 31))
        m = int(rng.integers(1, 6))
        A, B = rng.standard_normal((k, n)), rng.standard_normal((k, m))
        W = rng.standard_normal((n, m))
        dA, dB = dense.backward(dense.solve(A, B), W)
        psi_A = lambda X: np.sum(W * dense.solve(X, B).theta)
        psi_B = lambda X: np.sum(W * dense.solve(A, X).theta)
        worst = max(worst, relative_error(extrapolated_difference(psi_A, A), dA),
                    relative_error(extrapolated_difference(psi_B, B), dB))
    return worst


def random_sparse(rng, k, n, density=0.2):
    S = sp.random(k, n, density=density, random_state=rng, format="lil")
    S.setdiag(1.0 + rng.random(min(k, n)))
    return S.tocsr()


def check_sparse(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        k, n, m = int(rng.integers(20, 50)), int(rng.integers(3, 10)), int(rng.integers(1, 4))
        S = random_sparse(rng, k, n)
        B = rng.standard_normal((k, m))
        W = rng.standard_normal((n, m))
        state = sparse.solve_cg(S, B)
        pattern = sparse.SparsityPattern.from_sparse(S)
        vals, _ = sparse.backward_restricted(S, pattern, B, state.theta, W)
        dA, _ = dense.backward(dense.solve(S.toarray(), B), W)
        worst = max(worst, relative_error(vals, dA[pattern.rows, pattern.cols]))
    return worst


def check_eq(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        k, n, d, m = 12, 5, 2, 2
        A, B = rng.standard_normal((k, n)), rng.standard_normal((k, m))
        C, D = rng.standard_normal((d, n)), rng.standard_normal((d, m))
        Wt, Wn = rng.standard_normal((n, m)), rng.standard_normal((d, m))
        s = eqls.solve_kkt(A, B, C, D)
        grads = eqls.backward_kkt(s, Wt, Wn)
        args = [A, B, C, D]
        for i, g in enumerate(grads):
            def psi(X, i=i):
                a = list(args)
                a[i] = X
                s = eqls.solve_kkt(*a)
                return np.sum(Wt * s.theta) + np.sum(Wn * s.nu)
            worst = max(worst, relative_error(extrapolated_difference(psi, args[i]), g))
    return worst


def random_fit_problem(rng, N=20, Nv=15, d=5, m=3, centers=4):
    """Small classification problem exercising every hyper-parameter segment."""
    tr = datafit.Dataset.from_labels(rng.standard_normal((N, d)), rng.integers(0, m, N), m)
    va = datafit.Dataset.from_labels(rng.standard_normal((Nv, d)), rng.integers(0, m, Nv), m)
    fz = featurize.mnist_featurizer(rng.standard_normal((centers, d)))
    n = fz.out_dim(d)
    R1 = np.hstack([np.eye(d), np.zeros((d, n - d))])
    R2 = np.hstack([np.zeros((centers, d)), np.eye(centers), np.zeros((centers, 1))])
    terms = [datafit.RegularizerTerm(R1, "pixels"), datafit.RegularizerTerm(R2, "archetypes")]
    p = datafit.FitProblem(tr, va, fz, terms, datafit.CrossEntropy(), weight_data=True)
    omega = p.omega(feat=[rng.normal(0, 0.5)], data=0.3 * rng.standard_normal(N),
                    reg=rng.normal(-0.5, 0.3, 2))
    return p, omega


def check_pipeline(rng, trials=5):
    worst = 0.0
    for _ in range(trials):
        p, omega = random_fit_problem(rng)
        _, g, _ = datafit.objective_and_gradient(p, omega)
        fd = extrapolated_difference(
            lambda v: datafit.objective_and_gradient(p, omega.with_values(v))[0], omega.values
        )
        worst = max(worst, relative_error(fd, g))
    return worst


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "dense": check_dense(rng),
        "sparse": check_sparse(rng),
        "equality_constrained": check_eq(rng),
        "pipeline": check_pipeline(rng),
    }
