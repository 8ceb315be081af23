"""Least squares auto-tuning: differentiable least squares solves and
proximal-gradient tuning of their hyper-parameters."""

from . import datafit, dense, eqls, featurize, prox, sparse, tuner
from .errors import (
    AdjointInconsistent,
    DimensionMismatch,
    NoConvergence,
    NonFiniteObjective,
    RankDeficient,
    SingularKkt,
)
from .prox import HyperVector
from .tuner import TunerConfig, TunerReport

__version__ = "0.1.0"
