"""Structured H-infinity tuning of parameterized power system controllers."""

from .exceptions import (
    ConfigError,
    HinfTuneError,
    InitialUnstable,
    NoProgress,
    NumericalError,
)
from .lti import StateSpace, hinf_norm_bisect, poles
from .paramsys import ParamSystem
from .tuner import StructuredHinfTuner, TuneConfig, tune, tune_multi

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "HinfTuneError",
    "InitialUnstable",
    "NoProgress",
    "NumericalError",
    "ParamSystem",
    "StateSpace",
    "StructuredHinfTuner",
    "TuneConfig",
    "hinf_norm_bisect",
    "poles",
    "tune",
    "tune_multi",
]
