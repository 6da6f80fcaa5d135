"""Run configuration: TOML ingestion, presets and rendering.

A config document has up to four tables (``problem``, ``schedule``, ``run``,
``verify``) of scalar keys, plus an optional top-level ``preset`` naming one
of :data:`PRESETS`, whose values are used for every key the document omits.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .engine import Variant
from .errors import ConfigError, CSGDError
from .objectives import Problem, load_csv, make_classification_rows, make_least_squares, make_logistic
from .schedules import ScheduleSet


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    dimension: int = 10
    workers: int = 10
    seed: int = 0
    noise_std: float = 0.01
    samples_per_worker: int | None = None
    dataset: str | None = None
    rows: int = 1000
    lam: float = 0.0005


@dataclass(frozen=True)
class VerifySpec:
    epsilon: float = 0.5
    delta: float = 0.1
    checkpoints: tuple[int, ...] = (100, 200, 400, 800)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    schedule: ScheduleSet
    theoretical: bool = False
    variant: Variant = Variant.CSGD
    iterations: int = 500
    seeds: tuple[int, ...] = (0,)
    output: str | None = None
    threshold_form: str = "experimental"
    metrics_every: int = 1
    verify: VerifySpec = field(default_factory=VerifySpec)


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "least_squares": {
        "problem": {
            "kind": "least_squares", "dimension": 10, "workers": 10, "seed": 7,
            "noise_std": 0.01, "samples_per_worker": 100,
        },
        "schedule": {
            "alpha": 0.02, "b0": 1, "eta1": 1.0 - 1.0 / 1.1, "b_max": 100.0, "sigma0": 0.1,
            "eta2": 1.0 - 0.91, "D": 10, "w": 1.0 / 60.0,
        },
        "run": {"variant": "csgd", "iterations": 500, "seeds": list(range(10))},
    },
    "logistic": {
        "problem": {"kind": "logistic", "dimension": 10, "workers": 10, "seed": 3, "rows": 1000, "lam": 0.0005},
        "schedule": {
            "alpha": 0.1, "b0": 1, "eta1": 1.0 - 1.0 / 1.05, "b_max": 100.0, "sigma0": 0.3,
            "eta2": 1.0 - 0.96, "D": 10, "w": 1.0 / 60.0,
        },
        "run": {"variant": "csgd", "iterations": 800, "seeds": list(range(5))},
    },
}

# key -> accepted python types; bool is excluded from int/float explicitly below.
_PROBLEM_TYPES = {
    "kind": str, "dimension": int, "workers": int, "seed": int, "noise_std": float,
    "samples_per_worker": int, "dataset": str, "rows": int, "lam": float,
}
_SCHEDULE_TYPES = {
    "alpha": float, "b0": int, "eta1": float, "batch_growth": float, "b_max": float, "sigma0": float,
    "eta2": float, "control_decay": float, "D": int, "w": float, "epoch_len": int, "theoretical": bool,
}
_RUN_TYPES = {
    "variant": str, "iterations": int, "seeds": list, "output": str, "threshold_form": str, "metrics_every": int,
}
_VERIFY_TYPES = {"epsilon": float, "delta": float, "checkpoints": list}
_SECTIONS = {"problem": _PROBLEM_TYPES, "schedule": _SCHEDULE_TYPES, "run": _RUN_TYPES, "verify": _VERIFY_TYPES}


def _typed(key: str, value: Any, kind: type) -> Any:
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"must be a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"must be an integer, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, "must be a list of integers")
        return tuple(value)
    if not isinstance(value, kind):
        raise ConfigError(key, f"must be {kind.__name__}, got {type(value).__name__}")
    return value


def _merge(doc: dict[str, Any]) -> dict[str, dict[str, Any]]:
    merged: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    preset = doc.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for sect, values in PRESETS[preset].items():
            merged[sect].update(values)
    for key, value in doc.items():
        if key == "preset":
            continue
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown key")
        if not isinstance(value, dict):
            raise ConfigError(key, "must be a table")
        for sub in value:
            if sub not in _SECTIONS[key]:
                raise ConfigError(f"{key}.{sub}", "unknown key")
        if key == "schedule":
            # An explicit rate in the document overrides either spelling inherited from a preset.
            for rate, alias in (("eta1", "batch_growth"), ("eta2", "control_decay")):
                if rate in value or alias in value:
                    merged[key].pop(rate, None)
                    merged[key].pop(alias, None)
        merged[key].update(value)
    return merged


def parse_config(text: str) -> RunConfig:
    """Parse a TOML document into a fully populated :class:`RunConfig`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("document", str(exc)) from exc
    merged = _merge(doc)
    typed = {
        sect: {k: _typed(f"{sect}.{k}", v, _SECTIONS[sect][k]) for k, v in values.items()}
        for sect, values in merged.items()
    }

    prob = typed["problem"]
    if "kind" not in prob:
        raise ConfigError("problem.kind", "required")
    if prob["kind"] not in ("least_squares", "logistic"):
        raise ConfigError("problem.kind", f"must be 'least_squares' or 'logistic', got {prob['kind']!r}")
    problem = ProblemSpec(**prob)

    sched = dict(typed["schedule"])
    theoretical = sched.pop("theoretical", False)
    for rate, alias, convert in (
        ("eta1", "batch_growth", lambda g: 1.0 - 1.0 / g),
        ("eta2", "control_decay", lambda c: 1.0 - c),
    ):
        if rate in sched and alias in sched:
            raise ConfigError(f"schedule.{alias}", f"conflicts with schedule.{rate}")
        if alias in sched:
            sched[rate] = convert(sched.pop(alias))
    if "alpha" not in sched:
        raise ConfigError("schedule.alpha", "required")
    try:
        schedule = ScheduleSet(**sched)
    except CSGDError as exc:
        raise ConfigError("schedule", str(exc)) from exc
    if theoretical and not schedule.eta1 > schedule.eta2:
        warnings.warn(
            f"schedule.eta2={schedule.eta2:.6g} >= schedule.eta1={schedule.eta1:.6g}: "
            "the theoretical regime requires eta1 > eta2 > rho",
            stacklevel=2,
        )

    run = dict(typed["run"])
    try:
        variant = Variant.parse(run.pop("variant", "csgd"))
    except CSGDError as exc:
        raise ConfigError("run.variant", str(exc)) from exc
    seeds = run.pop("seeds", (0,))
    if not seeds:
        raise ConfigError("run.seeds", "must be non-empty")
    if run.get("threshold_form", "experimental") not in ("experimental", "theoretical"):
        raise ConfigError("run.threshold_form", "must be 'experimental' or 'theoretical'")
    if run.get("iterations", 1) < 1:
        raise ConfigError("run.iterations", "must be >= 1")
    if run.get("metrics_every", 1) < 1:
        raise ConfigError("run.metrics_every", "must be >= 1")
    verify = VerifySpec(**typed["verify"])
    return RunConfig(problem, schedule, theoretical, variant, seeds=seeds, verify=verify, **run)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def render_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`; ``None`` fields are omitted."""
    problem = {k: v for k, v in asdict(cfg.problem).items() if v is not None}
    schedule = asdict(cfg.schedule)
    schedule["theoretical"] = cfg.theoretical
    run = {
        "variant": cfg.variant.value, "iterations": cfg.iterations, "seeds": list(cfg.seeds),
        "threshold_form": cfg.threshold_form, "metrics_every": cfg.metrics_every,
    }
    if cfg.output is not None:
        run["output"] = cfg.output
    verify = {f.name: getattr(cfg.verify, f.name) for f in fields(cfg.verify)}
    verify["checkpoints"] = list(cfg.verify.checkpoints)
    return tomli_w.dumps({"problem": problem, "schedule": schedule, "run": run, "verify": verify})


def preset_config(name: str) -> RunConfig:
    return parse_config(f'preset = "{name}"\n')


def build_problem(spec: ProblemSpec) -> Problem:
    if spec.kind == "least_squares":
        return make_least_squares(
            spec.dimension, spec.workers, spec.seed, spec.noise_std, samples_per_worker=spec.samples_per_worker
        )
    rows = load_csv(spec.dataset) if spec.dataset else make_classification_rows(spec.rows, spec.dimension, spec.seed)
    return make_logistic(rows, spec.workers, spec.lam, spec.seed)
