"""Proximal gradient hyper-parameter tuner with an adaptive step size.

Each iteration takes a gradient step on the smooth true objective, applies
the prox of the hyper-parameter regularizer, and accepts the tentative point
only if the composite objective ``F = psi + r`` did not increase. Accepted
steps grow the step size by ``increase_factor``; rejected ones shrink it by
``decrease_factor`` and leave the iterate untouched.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .errors import NonFiniteObjective
from .prox import HyperVector, Zero

__all__ = ["TunerConfig", "IterationRecord", "TunerReport", "stopping_metric", "run"]

log = logging.getLogger(__name__)

MIN_STEP = 1e-18


@dataclass(frozen=True)
class TunerConfig:
    t_init: float = 1.0
    max_iter: int = 500
    epsilon: float = 1e-6
    increase_factor: float = 1.2
    decrease_factor: float = 0.5

    def __post_init__(self):
        if not self.t_init > 0:
            raise ValueError("t_init must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if not self.increase_factor > 1:
            raise ValueError("increase_factor must exceed 1")
        if not 0 < self.decrease_factor < 1:
            raise ValueError("decrease_factor must lie in (0, 1)")


@dataclass
class IterationRecord:
    k: int
    objective: float  # F at the iterate kept after this step
    tentative_objective: float
    step_size: float  # step size used for this step
    accepted: bool
    stopping_metric: float = None


@dataclass
class TunerReport:
    iterations: list = field(default_factory=list)
    final_omega: HyperVector = None
    termination: str = "max_iter"  # "converged", "max_iter" or "stopped"
    final_objective: float = None
    final_gradient: np.ndarray = None

    @property
    def accepted_objectives(self):
        return [it.objective for it in self.iterations if it.accepted]


def stopping_metric(omega_prev, omega_next, t, g_prev, g_next):
    """``|| (omega_prev - omega_next) / t + (g_next - g_prev) ||_2``.

    Vanishes exactly when ``omega_next`` satisfies the optimality condition
    of the composite problem; with ``r = 0`` it equals ``||g_next||``.
    """
    omega_prev = np.asarray(getattr(omega_prev, "values", omega_prev), dtype=np.float64)
    omega_next = np.asarray(getattr(omega_next, "values", omega_next), dtype=np.float64)
    g_prev = np.asarray(g_prev, dtype=np.float64)
    g_next = np.asarray(g_next, dtype=np.float64)
    if not omega_prev.shape == omega_next.shape == g_prev.shape == g_next.shape:
        raise ValueError("stopping_metric arguments must have matching shapes")
    if not t > 0:
        raise ValueError("step size must be positive")
    return float(np.linalg.norm((omega_prev - omega_next) / t + (g_next - g_prev)))


def _evaluate(objective, omega):
    psi, g = objective(omega)
    psi = float(psi)
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.size != len(omega):
        raise ValueError(f"gradient has length {g.size}, expected {len(omega)}")
    return psi, g


def run(objective, regularizer=None, omega0=None, config=None, callback=None):
    """Minimize ``psi(omega) + r(omega)`` by adaptive proximal gradient.

    Parameters
    ----------
    objective : callable
        ``objective(omega) -> (psi, g)`` with ``g`` the gradient of ``psi``.
    regularizer : object with ``value`` and ``prox``, optional
        Defaults to ``r = 0``.
    omega0 : HyperVector or array_like
        Starting point; must lie in the regularizer's domain.
    config : TunerConfig, optional
    callback : callable, optional
        Called as ``callback(record, omega)`` after each accepted step; a
        truthy return value stops the run with termination ``"stopped"``.

    Returns
    -------
    TunerReport
    """
    regularizer = Zero() if regularizer is None else regularizer
    config = TunerConfig() if config is None else config
    omega = omega0 if isinstance(omega0, HyperVector) else HyperVector(omega0)

    psi, g = _evaluate(objective, omega)
    F = psi + regularizer.value(omega)
    if not (math.isfinite(F) and np.all(np.isfinite(g))):
        raise NonFiniteObjective("objective or regularizer is not finite at omega0")

    report = TunerReport()
    t = config.t_init
    for k in range(1, config.max_iter + 1):
        nu = omega.with_values(omega.values - t * g)
        tentative = regularizer.prox(nu, t)
        try:
            psi_t, g_t = _evaluate(objective, tentative)
            F_t = psi_t + regularizer.value(tentative)
            finite = math.isfinite(F_t) and bool(np.all(np.isfinite(g_t)))
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed at tentative point: %s", exc)
            F_t, finite = math.nan, False

        if finite and F_t <= F:
            metric = stopping_metric(omega, tentative, t, g, g_t)
            record = IterationRecord(k, F_t, F_t, t, True, metric)
            report.iterations.append(record)
            omega, psi, g, F = tentative, psi_t, g_t, F_t
            t *= config.increase_factor
            log.debug("k=%d accept F=%.6g t=%.3g metric=%.3g", k, F, t, metric)
            if metric <= config.epsilon:
                report.termination = "converged"
                break
            if callback is not None and callback(record, omega):
                report.termination = "stopped"
                break
        else:
            report.iterations.append(IterationRecord(k, F, F_t, t, False))
            t *= config.decrease_factor
            if not finite and t < MIN_STEP:
                raise NonFiniteObjective(
                    f"objective stays non-finite down to step size {t:.3g}"
                )
    report.final_omega = omega
    report.final_objective = F
    report.final_gradient = g
    return report
