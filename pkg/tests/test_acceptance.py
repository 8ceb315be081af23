"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test carries a ``criterion`` marker; the terminal summary lists a
PASS/FAIL line for each. Criteria that the implementation measurably misses
are kept at full strength and marked ``xfail(strict=True)``, so they still
print FAIL here and would turn into an error if they started passing.

The MNIST tests read the IDX files from ``$LSAT_MNIST_DIR`` (default
``/root/data/mnist``) and are skipped when the files are absent.
"""

import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

from lsat import datafit, dense, eqls, featurize, sparse
from lsat.datafit import CrossEntropy, Dataset, FitProblem, RegularizerTerm
from lsat.prox import L1, SumSquares, Zero, ZeroSumSquares, prox_zero_sum_l2
from lsat.tuner import TunerConfig, run

from conftest import fd_grad, rel_err

criterion = pytest.mark.criterion


def fd_extrapolated(fun, x, h=1e-3):
    # Richardson combination of two central differences: O(h^4) truncation
    return (4 * fd_grad(fun, x, h / 2) - fd_grad(fun, x, h)) / 3


# ---------------------------------------------------------------------------
# gradient exactness


def normal_solve(A, B):
    # oracle for theta that shares no code with the package
    return np.linalg.solve(A.T @ A, A.T @ B)


@criterion("Gradient exactness (dense): 50 problems, rel err <= 1e-6, < 5 s")
def test_dense_gradient_exactness(record_property):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 9))
        k = int(r.integers(max(n, 5), 31))
        m = int(r.integers(1, 6))
        A, B, W = r.standard_normal((k, n)), r.standard_normal((k, m)), r.standard_normal((n, m))
        dA, dB = dense.backward(dense.solve(A, B), W)
        worst = max(
            worst,
            rel_err(fd_extrapolated(lambda X: np.sum(W * normal_solve(X, B)), A), dA),
            rel_err(fd_extrapolated(lambda X: np.sum(W * normal_solve(A, X)), B), dB),
        )
    elapsed = time.perf_counter() - start
    record_property("detail", f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 5.0


@criterion("Gradient exactness (sparse): 20 problems vs dense at Gamma, rel err <= 1e-7, < 5 s")
def test_sparse_gradient_exactness(record_property):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        k, n, m = int(r.integers(20, 60)), int(r.integers(3, 12)), int(r.integers(1, 4))
        S = sp.random(k, n, density=0.2, random_state=r, format="lil")
        S.setdiag(1.0 + r.random(n))
        S = S.tocsr()
        B, W = r.standard_normal((k, m)), r.standard_normal((n, m))
        theta = sparse.solve_cg(S, B).theta
        pattern = sparse.SparsityPattern.from_sparse(S)
        vals, dB = sparse.backward_restricted(S, pattern, B, theta, W)
        dA_dense, dB_dense = dense.backward(dense.solve(S.toarray(), B), W)
        worst = max(worst, rel_err(vals, dA_dense[pattern.rows, pattern.cols]), rel_err(dB, dB_dense))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-7
    assert elapsed < 5.0


@criterion("Gradient exactness (equality-constrained): 20 problems, rel err <= 1e-6; d = 0 exact; < 5 s")
def test_kkt_gradient_exactness(record_property):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 7))
        d = int(r.integers(1, n))
        k, m = int(r.integers(n + 2, 16)), int(r.integers(1, 3))
        args = [r.standard_normal((k, n)), r.standard_normal((k, m)),
                r.standard_normal((d, n)), r.standard_normal((d, m))]
        Wt, Wn = r.standard_normal((n, m)), r.standard_normal((d, m))
        grads = eqls.backward_kkt(eqls.solve_kkt(*args), Wt, Wn)
        for i, g in enumerate(grads):
            def psi(X, i=i):
                a = list(args)
                a[i] = X
                s = eqls.solve_kkt(*a)
                return np.sum(Wt * s.theta) + np.sum(Wn * s.nu)
            worst = max(worst, rel_err(fd_extrapolated(psi, args[i]), g))

    exact = True
    for seed in range(20):
        r = np.random.default_rng(1000 + seed)
        A, B, W = r.standard_normal((10, 4)), r.standard_normal((10, 2)), r.standard_normal((4, 2))
        s = eqls.solve_kkt(A, B, np.zeros((0, 4)), np.zeros((0, 2)))
        dA, dB, _, _ = eqls.backward_kkt(s, W, np.zeros((0, 2)))
        eA, eB = dense.backward(dense.solve(A, B), W)
        exact &= np.array_equal(dA, eA) and np.array_equal(dB, eB)
    elapsed = time.perf_counter() - start
    record_property("detail", f"max rel err {worst:.2e}, d=0 bitwise equal: {exact}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert exact
    assert elapsed < 5.0


def random_fit_problem(r, N=20, Nv=15, d=5, m=3, centers=4):
    tr = Dataset.from_labels(r.standard_normal((N, d)), r.integers(0, m, N), m)
    va = Dataset.from_labels(r.standard_normal((Nv, d)), r.integers(0, m, Nv), m)
    fz = featurize.mnist_featurizer(r.standard_normal((centers, d)))
    n = fz.out_dim(d)
    R1 = np.hstack([np.eye(d), np.zeros((d, n - d))])
    R2 = np.hstack([np.zeros((centers, d)), np.eye(centers), np.zeros((centers, 1))])
    p = FitProblem(tr, va, fz, [RegularizerTerm(R1), RegularizerTerm(R2)], CrossEntropy(),
                   weight_data=True)
    omega = p.omega(feat=[r.normal(0, 0.5)], data=0.3 * r.standard_normal(N), reg=r.normal(-0.5, 0.3, 2))
    return p, omega


@criterion("End-to-end pipeline gradient: feat, data, reg jointly, rel err <= 1e-5, < 10 s")
def test_pipeline_gradient(record_property):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        p, omega = random_fit_problem(np.random.default_rng(seed))
        _, g, _ = datafit.objective_and_gradient(p, omega)
        fd = fd_extrapolated(
            lambda v: datafit.objective_and_gradient(p, omega.with_values(v))[0], omega.values
        )
        worst = max(worst, rel_err(g, fd))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-5
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# tuner


def scalar_quadratic(omega):
    w = omega.values
    return 0.5 * float(np.sum((w - 3.0) ** 2)), w - 3.0


@criterion("Stopping-criterion reduction: r = 0 metric equals ||g_next|| to 1e-12 on accepted steps")
def test_stopping_metric_reduction(record_property):
    worst, count = 0.0, 0
    # t = 1 is the stated setting (a single exact step); smaller initial steps
    # give longer runs through the same check
    for t_init in (1.0, 0.3, 0.05):
        rep = run(scalar_quadratic, None, [0.0], TunerConfig(t_init=t_init, max_iter=500))
        # replay the plain gradient iteration to get g at each accepted point
        w = np.array([0.0])
        for it in rep.iterations:
            if not it.accepted:
                continue
            w = w - it.step_size * (w - 3.0)
            worst = max(worst, abs(it.stopping_metric - np.linalg.norm(w - 3.0)))
            count += 1
    record_property("detail", f"max |metric - ||g||| {worst:.1e} over {count} accepted steps")
    assert worst <= 1e-12


def ridge_toy():
    r = np.random.default_rng(0)
    X = r.standard_normal((30, 8))
    theta = r.standard_normal((8, 1))
    Y = X @ theta + 0.8 * r.standard_normal((30, 1))
    Xv = r.standard_normal((40, 8))
    Yv = Xv @ theta + 0.8 * r.standard_normal((40, 1))
    return FitProblem(Dataset(X, Y), Dataset(Xv, Yv), reg_terms=[RegularizerTerm(np.eye(8))])


@criterion("Grid-search equivalence: tuned loss <= best of 100-point grid on [e^-6, e^6] + 1e-4, < 30 s")
def test_grid_search_equivalence(record_property):
    start = time.perf_counter()
    p = ridge_toy()
    rep = run(lambda w: datafit.objective_and_gradient(p, w)[:2], None, p.omega(reg=[0.0]))
    grid = [datafit.objective_and_gradient(p, p.omega(reg=[np.log(lam)]))[0]
            for lam in np.exp(np.linspace(-6, 6, 100))]
    elapsed = time.perf_counter() - start
    record_property("detail", f"tuned {rep.final_objective:.6f} vs grid {min(grid):.6f}, {elapsed:.2f} s")
    assert rep.final_objective <= min(grid) + 1e-4
    assert elapsed < 30.0


@criterion("Prox oracle suite: prox beats 50 feasible competitors (1e-9 slack); zero-sum <= 1e-12 p")
def test_prox_oracle_suite(record_property):
    r = np.random.default_rng(0)
    worst_gap = -np.inf
    for reg in (Zero(), SumSquares(0.5), L1(0.3), ZeroSumSquares(0.01), ZeroSumSquares(1.0)):
        for _ in range(20):
            nu, t = 2 * r.standard_normal(8), float(r.uniform(0.01, 5))
            w = reg.prox(nu, t)
            obj = t * reg.value(w) + 0.5 * np.sum((w - nu) ** 2)
            for _ in range(50):
                other = w + r.standard_normal(8) * 10.0 ** r.uniform(-4, 0.5)
                if isinstance(reg, ZeroSumSquares):
                    other = other - other.mean()
                worst_gap = max(worst_gap, obj - (t * reg.value(other) + 0.5 * np.sum((other - nu) ** 2)))
    worst_sum = 0.0
    for p in (1, 2, 10, 1000, 3500):
        for _ in range(20):
            nu = r.standard_normal(p) * 10.0 ** r.uniform(-3, 3)
            w = prox_zero_sum_l2(nu, float(r.uniform(0, 3)), float(r.uniform(0, 3)))
            worst_sum = max(worst_sum, abs(w.sum()) / (p * max(1.0, np.abs(nu).max())))
    record_property("detail", f"worst gap {worst_gap:.1e}, worst |sum|/p {worst_sum:.1e}")
    assert worst_gap <= 1e-9
    assert worst_sum <= 1e-12


# ---------------------------------------------------------------------------
# MNIST ladder


MNIST_DIR = os.environ.get("LSAT_MNIST_DIR", "/root/data/mnist")


@pytest.fixture(scope="module")
def ladder():
    from lsat.harness import data
    from lsat.harness.experiment import MODELS, ExperimentConfig, load_datasets, run_experiment

    try:
        data.find_mnist(MNIST_DIR, "train")
        data.find_mnist(MNIST_DIR, "test")
    except FileNotFoundError:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    start = time.perf_counter()
    cfg = ExperimentConfig(data_path=MNIST_DIR, dataset_scale="small")
    datasets = load_datasets(cfg)
    reports = {}
    for model in MODELS:
        reports[model] = run_experiment(ExperimentConfig(data_path=MNIST_DIR, model=model), datasets)
    reports["elapsed"] = time.perf_counter() - start
    return reports


def _summary(rep):
    f = rep["final"]
    return f"val {f['validation_loss']:.4f}, test err {100 * f['test_error']:.2f}%"


@criterion("MNIST ladder: LS test error 13.0% +/- 2.5")
@pytest.mark.xfail(strict=True, reason="measured LS baseline is ~18%; see the decisions ledger")
def test_mnist_ls_baseline(ladder, record_property):
    rep = ladder["ls"]
    record_property("detail", _summary(rep))
    assert rep["final"]["hyperparam_count"] == 0
    assert abs(100 * rep["final"]["test_error"] - 13.0) <= 2.5


@criterion("MNIST ladder: LS + reg x2 improves on LS (test error)")
@pytest.mark.xfail(strict=True, reason="tuned graph regularization does not lower test error here")
def test_mnist_reg2_improves(ladder, record_property):
    ls, reg2 = ladder["ls"], ladder["ls_reg2"]
    record_property("detail", f"LS {_summary(ls)} -> reg x2 {_summary(reg2)}")
    assert reg2["final"]["hyperparam_count"] == 2
    assert reg2["final"]["test_error"] < ls["final"]["test_error"]


@criterion("MNIST ladder: LS + reg x3 + feat test error <= 8.5%")
@pytest.mark.xfail(strict=True, reason="measured ~11.9%; see the decisions ledger")
def test_mnist_feat_test_error(ladder, record_property):
    rep = ladder["ls_reg3_feat"]
    record_property("detail", _summary(rep))
    assert rep["final"]["hyperparam_count"] == 4
    assert rep["final"]["test_error"] <= 0.085


@criterion("MNIST ladder: validation loss drops from ~1.77 (LS) to <= 1.60 (feat)")
@pytest.mark.xfail(strict=True, reason="measured 1.83 -> 1.63; see the decisions ledger")
def test_mnist_validation_drop(ladder, record_property):
    ls, feat = ladder["ls"]["final"], ladder["ls_reg3_feat"]["final"]
    record_property("detail", f"{ls['validation_loss']:.4f} -> {feat['validation_loss']:.4f}")
    assert feat["validation_loss"] < ls["validation_loss"]
    assert feat["validation_loss"] <= 1.60


@criterion("MNIST ladder: ordering LS >= reg x2 >= reg x3 + feat in validation loss")
def test_mnist_ordering(ladder, record_property):
    losses = [ladder[m]["final"]["validation_loss"] for m in ("ls", "ls_reg2", "ls_reg3_feat")]
    record_property("detail", " >= ".join(f"{v:.4f}" for v in losses))
    assert losses[0] >= losses[1] >= losses[2]


@criterion("MNIST ladder: four small-scale runs finish within 15 min")
def test_mnist_runtime(ladder, record_property):
    record_property("detail", f"{ladder['elapsed']:.1f} s")
    assert ladder["elapsed"] <= 15 * 60


@criterion("Data-weighting sanity: loss <= feat + 0.02 with exactly 3504 hyper-parameters")
def test_data_weighting_sanity(ladder, record_property):
    feat, weight = ladder["ls_reg3_feat"], ladder["ls_reg3_feat_weight"]
    record_property("detail", f"{weight['final']['validation_loss']:.4f} vs "
                              f"{feat['final']['validation_loss']:.4f}, "
                              f"{weight['final']['hyperparam_count']} hyper-parameters")
    assert weight["final"]["hyperparam_count"] == 3504
    assert weight["final"]["validation_loss"] <= feat["final"]["validation_loss"] + 0.02
    assert all(rep["test_accesses"] == 1 for rep in (feat, weight))


# ---------------------------------------------------------------------------
# scale and structure


@criterion("CPU timing substitute: 100000 x 1000 x 100 solve and backward complete")
@pytest.mark.slow
def test_large_cpu_timing(record_property):
    r = np.random.default_rng(0)
    A = r.standard_normal((100_000, 1_000))
    B = r.standard_normal((100_000, 100))
    start = time.perf_counter()
    f = dense.solve(A, B)
    mid = time.perf_counter()
    dA, dB = dense.backward(f, np.ones_like(f.theta))  # psi = sum(theta)
    end = time.perf_counter()
    record_property("detail", f"solve {mid - start:.1f} s, backward {end - mid:.1f} s")
    assert dA.shape == A.shape and dB.shape == B.shape
    assert np.all(np.isfinite(dA)) and np.all(np.isfinite(dB))


@criterion("Incidence count: grid_incidence(28, 28) has 1512 rows")
def test_incidence_count(record_property):
    R = featurize.grid_incidence(28, 28)
    record_property("detail", f"{R.shape[0]} rows")
    assert R.shape == (1512, 784)
