"""Deterministic simulator for communication-censored distributed SGD on a star network."""

from .censor import Decision, ServerState, WorkerCensorState, censor_decide, server_apply
from .config import RunConfig, build_problem, load_config, parse_config, preset_config, render_config
from .engine import RoundRecord, RunResult, Variant, comm_complexity, run
from .errors import (
    CapabilityError,
    ConfigError,
    CSGDError,
    DataError,
    DivergenceError,
    ParameterError,
    ScheduleError,
    StateError,
)
from .objectives import (
    estimate_constants,
    load_csv,
    make_classification_rows,
    make_least_squares,
    make_logistic,
)
from .schedules import ScheduleSet, batch_size, control_size, validate_theoretical

__version__ = "0.1.0"

__all__ = [
    "CSGDError", "CapabilityError", "ConfigError", "DataError", "Decision", "DivergenceError", "ParameterError",
    "RoundRecord", "RunConfig", "RunResult", "ScheduleError", "ScheduleSet", "ServerState", "StateError", "Variant",
    "WorkerCensorState", "batch_size", "build_problem", "censor_decide", "comm_complexity", "control_size", "estimate_constants",
    "load_config", "load_csv", "make_classification_rows", "make_least_squares", "make_logistic", "parse_config",
    "preset_config", "render_config", "run", "server_apply", "validate_theoretical",
]
