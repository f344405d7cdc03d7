"""Micro-macro acceleration for linear slow-fast SDEs with additive noise."""

__version__ = "0.1.0"

from .acceleration import MmState, Trajectory, extrapolate_slow_mean, mm_step, run  # noqa: E402
from .errors import (BlowUpError, ConfigError, DegeneratePriorError,  # noqa: E402
                     DimensionError, DivergenceError, MatchingFailure, MmaccError)
from .kernels import BACKEND  # noqa: E402
from .matching import MacroState, TiltResult, match_ensemble, match_gaussian  # noqa: E402
from .microsolver import Ensemble, invariant_variance  # noqa: E402
from .model import (GaussianLaw, LinearSdeModel, StepSchedule,  # noqa: E402
                    driven_test_model, spectral_radius)

__all__ = [
    "BACKEND", "BlowUpError", "ConfigError", "DegeneratePriorError", "DimensionError",
    "DivergenceError", "Ensemble", "GaussianLaw", "LinearSdeModel", "MacroState",
    "MatchingFailure", "MmState", "MmaccError", "StepSchedule", "TiltResult", "Trajectory",
    "driven_test_model", "extrapolate_slow_mean", "invariant_variance", "match_ensemble",
    "match_gaussian", "mm_step", "run", "spectral_radius",
]
