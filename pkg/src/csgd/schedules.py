"""Iteration-indexed hyperparameters: batch-size, control-size and settings checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

from .errors import ParameterError, ScheduleError
from .objectives import ObjectiveConstants

THEORY_WEIGHT = 1.0 / 60.0


@dataclass(frozen=True)
class ScheduleSet:
    """Step-size, batch and threshold parameters of one run.

    ``eta1`` is the batch growth rate, i.e. ``B^k = B0 * (1 - eta1)**-k``
    before capping, and ``eta2`` the control-size decay rate. With
    ``epoch_len = E > 1`` both exponents become ``ceil(k / E)`` (staircase).
    """

    alpha: float
    b0: int = 1
    eta1: float = 1.0 - 1.0 / 1.1
    b_max: float = math.inf
    sigma0: float = 0.0
    eta2: float = 0.09
    D: int = 10
    w: float = THEORY_WEIGHT
    epoch_len: int = 1

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.b0 < 1:
            raise ParameterError(f"b0 must be >= 1, got {self.b0}")
        if not 0.0 <= self.eta1 < 1.0:
            raise ParameterError(f"eta1 must lie in [0, 1), got {self.eta1}")
        if not 0.0 <= self.eta2 < 1.0:
            raise ParameterError(f"eta2 must lie in [0, 1), got {self.eta2}")
        if self.b_max < 1:
            raise ParameterError(f"b_max must be >= 1, got {self.b_max}")
        if self.sigma0 < 0 or self.w < 0:
            raise ParameterError("sigma0 and w must be >= 0")
        if self.D < 1 or self.epoch_len < 1:
            raise ParameterError("D and epoch_len must be >= 1")

    def _exponent(self, k: int) -> int:
        if k < 1:
            raise ParameterError(f"iteration index must be >= 1, got {k}")
        return -(-k // self.epoch_len)


def batch_size(s: ScheduleSet, k: int) -> int:
    """``min(ceil(B0 * (1 - eta1)**-e), B_max)`` with ``e = ceil(k / epoch_len)``."""
    e = s._exponent(k)
    try:
        raw = s.b0 * (1.0 - s.eta1) ** (-e)
    except OverflowError:
        raw = math.inf
    if math.isfinite(s.b_max) and raw >= s.b_max:
        return int(s.b_max)
    if not math.isfinite(raw):
        raise ScheduleError(f"batch size overflows at k={k} with no finite cap")
    return math.ceil(raw)


def control_size(s: ScheduleSet, k: int) -> float:
    """``sigma0 * (1 - eta2)**e`` with ``e = ceil(k / epoch_len)``."""
    return s.sigma0 * (1.0 - s.eta2) ** s._exponent(k)


@dataclass(frozen=True)
class Condition:
    name: str
    passed: bool
    detail: str
    gating: bool = True


@dataclass(frozen=True)
class TheoryReport:
    mode: str
    conditions: list[Condition] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.conditions if c.gating)

    def __getitem__(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def step_size_bounds(s: ScheduleSet, consts: ObjectiveConstants, M: int) -> dict[str, float]:
    """The three step-size clauses of the theoretical regime (inf when a clause is vacuous)."""
    mu = consts.pl_constant
    return {
        "alpha_pl": 3.0 / (2.0 * s.D * mu) if mu > 0 else math.inf,
        "alpha_smooth": 1.0 / (3.0 * consts.lipschitz),
        "alpha_sparse": 1.0 / (6.0 * math.sqrt(5.0 * consts.max_worker_lipschitz) * M * s.D),
    }


def min_initial_batch(s: ScheduleSet, consts: ObjectiveConstants, M: int, delta: float) -> float:
    """Smallest ``B0`` for which every worker uploads at most once per ``D`` rounds w.p. ``1 - delta``."""
    if not s.eta1 > s.eta2:
        return math.inf
    if s.sigma0 <= 0 or delta <= 0:
        return math.inf
    num = 6.0 * M**2 * (1.0 - s.eta1) * sum(consts.worker_variance)
    return num / (s.sigma0 * (s.eta1 - s.eta2) * (1.0 - s.eta2) ** s.D * delta)


def validate_theoretical(
    s: ScheduleSet,
    consts: ObjectiveConstants,
    M: int,
    mode: Literal["pl", "nonconvex"] = "pl",
    iterations: int | None = None,
    delta: float = 0.1,
) -> TheoryReport:
    """Check ``s`` against the parameter regime under which saving is guaranteed.

    The initial-batch lower bound is reported but does not gate the result.
    """
    if mode not in ("pl", "nonconvex"):
        raise ParameterError(f"mode must be 'pl' or 'nonconvex', got {mode!r}")
    conds: list[Condition] = []
    bounds = step_size_bounds(s, consts, M)
    clauses = ("alpha_pl", "alpha_smooth", "alpha_sparse") if mode == "pl" else ("alpha_smooth", "alpha_sparse")
    for name in clauses:
        conds.append(Condition(name, s.alpha <= bounds[name], f"alpha={s.alpha:.6g} <= {bounds[name]:.6g}"))
    conds.append(Condition("w", math.isclose(s.w, THEORY_WEIGHT, rel_tol=1e-12), f"w={s.w:.6g} vs 1/60"))
    if mode == "pl":
        rho = consts.pl_constant * s.alpha / 3.0
        conds.append(
            Condition("rates", s.eta1 > s.eta2 > rho, f"eta1={s.eta1:.6g} > eta2={s.eta2:.6g} > rho={rho:.6g}")
        )
    else:
        conds.append(Condition("rates", s.eta1 > s.eta2, f"eta1={s.eta1:.6g} > eta2={s.eta2:.6g}"))
    d_min, k_min = (2, 6) if mode == "pl" else (10, 448)
    conds.append(Condition("D", s.D >= d_min, f"D={s.D} >= {d_min}"))
    if iterations is not None:
        conds.append(Condition("K", iterations >= k_min, f"K={iterations} >= {k_min}"))
    b0_min = min_initial_batch(s, consts, M, delta)
    conds.append(Condition("b0", s.b0 >= b0_min, f"B0={s.b0} >= {b0_min:.6g} (delta={delta})", gating=False))
    return TheoryReport(mode, conds)
