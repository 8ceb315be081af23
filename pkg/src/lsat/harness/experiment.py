"""The four-model MNIST ladder: configuration, model construction, and runs."""

from dataclasses import asdict, dataclass, fields
import json
import logging
import time

import numpy as np

from .. import datafit, featurize
from ..datafit import Dataset, FitProblem, RegularizerTerm
from ..errors import ConfigError
from ..prox import Separable, ZeroSumSquares
from ..tuner import TunerConfig, run
from . import data

__all__ = [
    "MODELS",
    "ExperimentConfig",
    "HeldOutSet",
    "EarlyStopMonitor",
    "early_stop_monitor",
    "build_model",
    "load_datasets",
    "run_experiment",
    "write_report",
]

log = logging.getLogger(__name__)

MODELS = ("ls", "ls_reg2", "ls_reg3_feat", "ls_reg3_feat_weight")
IMAGE_SHAPE = (28, 28)
DATA_WEIGHT_LAMBDA = 0.01
EXTREMES = 6


@dataclass
class ExperimentConfig:
    data_path: str = "data/mnist"
    dataset_scale: str = "small"
    model: str = "ls_reg3_feat"
    seed: int = 0
    t_init: float = 1.0
    max_iter: int = 300
    epsilon: float = 1e-6
    increase_factor: float = 1.2
    decrease_factor: float = 0.5
    early_stopping: bool = False
    patience: int = 5
    output_path: str = None
    k_per_class: int = 5
    # Optional overrides, mainly for small fixtures. ``test_path`` is only
    # used when ``data_path`` is a CSV file.
    train_size: int = None
    val_size: int = None
    pool_size: int = data.POOL_SIZE
    test_path: str = None
    image_shape: tuple = IMAGE_SHAPE

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.dataset_scale not in data.SCALES:
            raise ConfigError(f"dataset_scale must be one of {tuple(data.SCALES)}")
        if (self.train_size is None) != (self.val_size is None):
            raise ConfigError("train_size and val_size must be given together")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        self.image_shape = tuple(self.image_shape)
        try:
            self.tuner_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def tuner_config(self):
        return TunerConfig(
            t_init=self.t_init,
            max_iter=self.max_iter,
            epsilon=self.epsilon,
            increase_factor=self.increase_factor,
            decrease_factor=self.decrease_factor,
        )

    @property
    def sizes(self):
        if self.train_size is not None:
            return self.train_size, self.val_size
        return data.SCALES[self.dataset_scale]

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        return d


class HeldOutSet:
    """Final test data that counts how often it is evaluated."""

    def __init__(self, dataset):
        self._dataset = dataset
        self.accesses = 0

    def __len__(self):
        return len(self._dataset)

    def error(self, theta, featurizer, omega_feat):
        self.accesses += 1
        return datafit.test_error(theta, featurizer, omega_feat, self._dataset)


def early_stop_monitor(trace, patience=5):
    """True once the last ``patience`` steps of ``trace`` were all increases."""
    if len(trace) <= patience:
        return False
    tail = np.asarray(trace[-(patience + 1):], dtype=np.float64)
    return bool(np.all(np.diff(tail) > 0))


class EarlyStopMonitor:
    """Tuner callback that tracks a monitor loss on accepted steps."""

    def __init__(self, loss_fn, patience=5):
        self.loss_fn = loss_fn
        self.patience = patience
        self.trace = []

    def __call__(self, record, omega):
        self.trace.append(self.loss_fn(omega))
        return early_stop_monitor(self.trace, self.patience)


def load_datasets(cfg):
    """(full training pool, test set) from IDX files or CSV fixtures."""
    path = cfg.data_path
    if path.endswith(".csv"):
        full = Dataset.from_labels(*data.load_csv(path), data.NUM_CLASSES)
        if cfg.test_path is None:
            raise ConfigError("CSV input needs test_path")
        test = Dataset.from_labels(*data.load_csv(cfg.test_path), data.NUM_CLASSES)
        return full, test
    return data.load_mnist(path, "train"), data.load_mnist(path, "test")


def _pad(R, left, right):
    return np.hstack([np.zeros((R.shape[0], left)), R, np.zeros((R.shape[0], right))])


def build_model(cfg, train, val):
    """FitProblem, initial hyper-parameters, regularizer and whether to tune."""
    d = train.inputs.shape[1]
    incidence = featurize.grid_incidence(*cfg.image_shape)
    if incidence.shape[1] != d:
        raise ConfigError(f"image_shape {cfg.image_shape} does not match {d} pixels")

    if cfg.model == "ls":
        p = FitProblem(train, val, featurize.Identity(), [RegularizerTerm(np.eye(d), "ridge")],
                       datafit.CrossEntropy())
        return p, p.omega(reg=[0.0]), None, False

    if cfg.model == "ls_reg2":
        terms = [RegularizerTerm(np.eye(d), "ridge"), RegularizerTerm(incidence, "graph")]
        p = FitProblem(train, val, featurize.Identity(), terms, datafit.CrossEntropy())
        return p, p.omega(reg=[-2.0, -2.0]), None, True

    arch = featurize.ArchetypeSet.from_labeled(
        train.inputs, train.labels, cfg.k_per_class, seed=cfg.seed
    )
    na = arch.centers.shape[0]
    terms = [
        RegularizerTerm(_pad(np.eye(d), 0, na + 1), "ridge_pixels"),
        RegularizerTerm(_pad(np.eye(na), d, 1), "ridge_archetypes"),
        RegularizerTerm(_pad(incidence, 0, na + 1), "graph"),
    ]
    weight = cfg.model == "ls_reg3_feat_weight"
    p = FitProblem(train, val, featurize.mnist_featurizer(arch.centers), terms,
                   datafit.CrossEntropy(), weight_data=weight)
    reg = Separable({"data": ZeroSumSquares(DATA_WEIGHT_LAMBDA)}) if weight else None
    return p, p.omega(feat=[3.0], reg=[0.0, 0.0, 0.0]), reg, True


def _trace_rows(report):
    return [
        {
            "k": it.k,
            "objective": it.objective,
            "tentative_objective": it.tentative_objective,
            "step_size": it.step_size,
            "accepted": it.accepted,
            "stopping_metric": it.stopping_metric,
        }
        for it in report.iterations
    ]


def run_experiment(cfg, datasets=None):
    """Tune one ladder model and evaluate it once on the held-out test set.

    ``datasets`` may supply a preloaded ``(pool, test)`` pair.

    Returns a JSON-ready dict with ``config``, ``trace`` and ``final``
    sections; it is also written to ``cfg.output_path`` when that is set.
    """
    start = time.perf_counter()
    full, test_data = load_datasets(cfg) if datasets is None else datasets
    monitor_size = cfg.sizes[1] if cfg.early_stopping else 0
    parts = data.split(full, cfg.dataset_scale, cfg.seed, sizes=cfg.sizes,
                       pool_size=cfg.pool_size, monitor_size=monitor_size)
    train, val = parts[0], parts[1]
    test = HeldOutSet(test_data)

    p, omega0, regularizer, tuned = build_model(cfg, train, val)
    log.info("model %s: n=%d features, %d hyper-parameters", cfg.model, p.feature_dim,
             len(omega0) if tuned else 0)

    evaluations = [0]

    def objective(omega):
        evaluations[0] += 1
        psi, g, _ = datafit.objective_and_gradient(p, omega)
        return psi, g

    monitor = None
    trace, termination = [], "not_tuned"
    omega = omega0
    if tuned:
        callback = None
        if cfg.early_stopping:
            watch = FitProblem(train, parts[2], p.featurizer, p.reg_terms, p.penalty, p.weight_data)
            monitor = EarlyStopMonitor(
                lambda w: datafit.objective_and_gradient(watch, w)[0], cfg.patience
            )
            callback = monitor
        report = run(objective, regularizer, omega0, cfg.tuner_config(), callback)
        omega, termination = report.final_omega, report.termination
        trace = _trace_rows(report)

    psi, _, theta = datafit.objective_and_gradient(p, omega)
    err = test.error(theta, p.featurizer, omega["feat"])

    hyper = {"feat": omega["feat"].tolist(), "reg": omega["reg"].tolist()}
    if p.weight_data:
        hyper["data"] = omega["data"].tolist()
    out = {
        "config": cfg.to_dict(),
        "trace": trace,
        "final": {
            "validation_loss": psi,
            "test_error": err,
            "hyperparam_count": len(omega) if tuned else 0,
            "wall_seconds": time.perf_counter() - start,
        },
        "termination": termination,
        "objective_evaluations": evaluations[0],
        "hyperparameters": hyper,
        "test_accesses": test.accesses,
        "sizes": {"train": len(train), "validation": len(val), "test": len(test)},
    }
    if p.weight_data:
        order = np.argsort(omega["data"], kind="stable")
        out["weight_extremes"] = {
            "lowest": [int(i) for i in order[:EXTREMES]],
            "highest": [int(i) for i in order[::-1][:EXTREMES]],
            "lowest_labels": [int(train.labels[i]) for i in order[:EXTREMES]],
            "highest_labels": [int(train.labels[i]) for i in order[::-1][:EXTREMES]],
        }
    if monitor is not None:
        out["monitor_trace"] = monitor.trace
    if cfg.output_path:
        write_report(out, cfg.output_path)
    return out


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
