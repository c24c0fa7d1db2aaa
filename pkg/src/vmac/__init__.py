"""Steady-state analysis of an interleaved voltage-multiplier boost converter
with an active clamp.

The closed-form model solves one leg over its eight operational states;
a switched-network simulator gives an independent reference.
"""

from .model import ConfigError, ConverterConfig, OperatingPoint, normalize, table_i_config
from .steady_state import NonConvergenceError, SteadyStateSolution, solve_steady_state
from .closed_form import ModelViolationError

__all__ = ["ConfigError", "ConverterConfig", "OperatingPoint", "normalize", "table_i_config",
           "NonConvergenceError", "SteadyStateSolution", "solve_steady_state",
           "ModelViolationError"]
