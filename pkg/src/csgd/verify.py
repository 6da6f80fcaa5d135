"""Post-hoc checks of the descent, decay, sparsity and min-gradient guarantees on realized runs."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .engine import RunResult, Variant
from .errors import CapabilityError, ParameterError
from .objectives import Array, ObjectiveConstants, Problem

DESCENT_RTOL = 1e-9
MIN_DECAY_LENGTH = 50


@dataclass(frozen=True)
class DescentCheck:
    iteration: int
    lhs: float
    rhs: float
    passed: bool


def descent_bound(
    grad: Array,
    fresh_sum: Array,
    tau: float,
    alpha: float,
    L: float,
    M: int,
    eps: float,
    censored: bool = True,
) -> float:
    """Right-hand side of the one-step objective descent bound.

    ``grad`` is the exact gradient at the previous iterate and ``fresh_sum``
    the sum of the fresh worker means. The censored form charges the noise
    term with ``alpha / eps`` and adds the threshold term; the uncensored
    form charges ``alpha / (2 eps)`` and has no threshold term.
    """
    g2 = float(grad @ grad)
    err = grad - fresh_sum
    e2 = float(err @ err)
    lead = -alpha * (1.0 - eps / 2.0 - (1.0 + eps) * L * alpha / 2.0) * g2
    if not censored:
        return lead + alpha / (2.0 * eps) * e2
    return lead + alpha / eps * e2 + alpha * M**2 * (1.0 / eps + (1.0 + 1.0 / eps) * L * alpha / 2.0) * tau


def check_descent(
    problem: Problem, result: RunResult, consts: ObjectiveConstants, eps: float = 0.5
) -> list[DescentCheck]:
    """Evaluate both sides of the descent bound at every recorded round."""
    if result.traces is None:
        raise CapabilityError("run was not recorded with traces; rerun with record_traces=True")
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    tr = result.traces
    alpha, M = result.schedule.alpha, problem.num_workers
    censored = result.variant is not Variant.SGD
    exact_gap = problem.has_optimum
    checks = []
    prev_val = problem.excess_loss(tr.models[0]) if exact_gap else problem.full_loss(tr.models[0])
    for k in range(1, len(tr.models)):
        x_prev, x_new = tr.models[k - 1], tr.models[k]
        val = problem.excess_loss(x_new) if exact_gap else problem.full_loss(x_new)
        lhs = val - prev_val
        rhs = descent_bound(
            problem.full_gradient(x_prev), tr.fresh_sums[k - 1], float(tr.thresholds[k - 1]),
            alpha, consts.lipschitz, M, eps, censored,
        )
        checks.append(DescentCheck(k, lhs, rhs, lhs <= rhs + DESCENT_RTOL * (1.0 + abs(rhs))))
        prev_val = val
    return checks


@dataclass(frozen=True)
class DecayReport:
    slope: float
    target: float
    limit: float
    rho: float
    passed: bool
    constant_bound_held: bool | None = None
    fitted_rounds: int = 0


def fit_log_slope(series: Sequence[float], tail_fraction: float = 0.5) -> float:
    """Least-squares slope of ``log(series)`` against the iteration index over the tail."""
    v = np.asarray(series, dtype=float)
    start = int(math.floor(v.size * (1.0 - tail_fraction)))
    k = np.arange(1, v.size + 1)[start:]
    tail = v[start:]
    if np.any(tail <= 0):
        raise ParameterError("series must be positive over the fitted tail")
    return float(np.polyfit(k, np.log(tail), 1)[0])


def resolution_floor(problem: Problem) -> float:
    """Suboptimality below which float64 cannot resolve the loss around its optimum."""
    return 16.0 * np.finfo(float).eps * max(abs(problem.optimum_value), np.finfo(float).tiny)


def check_geometric_decay(
    series: Sequence[float] | Array,
    rho: float,
    constant: float | None = None,
    tail_fraction: float = 0.5,
    floor: float = 0.0,
) -> DecayReport:
    """Fit the decay rate of a Lyapunov series and compare it with ``log(1 - rho)``.

    A 2-D input is treated as one row per seed and averaged first. The
    series is cut before the first round at or below ``floor`` and the slope
    is fitted over the tail of what remains. Passing requires ``slope <=
    log(1 - rho) + 0.5 * |log(1 - rho)|``. When ``constant`` is given, the
    pointwise bound ``mean V^k <= constant (1 - rho)**k`` is also evaluated;
    it never affects ``passed``.
    """
    if not 0 < rho < 1:
        raise CapabilityError(f"geometric decay needs a PL rate 0 < rho < 1, got {rho}")
    v = np.asarray(series, dtype=float)
    if v.ndim == 2:
        v = v.mean(axis=0)
    below = np.flatnonzero(v <= floor)
    fitted = v[: below[0]] if below.size else v
    if fitted.size < MIN_DECAY_LENGTH:
        raise ParameterError(f"need at least {MIN_DECAY_LENGTH} rounds above the floor, got {fitted.size}")
    target = math.log1p(-rho)
    limit = target + 0.5 * abs(target)
    slope = fit_log_slope(fitted, tail_fraction)
    held = None
    if constant is not None:
        k = np.arange(1, v.size + 1)
        held = bool(np.all(v <= constant * (1.0 - rho) ** k))
    return DecayReport(slope, target, limit, rho, slope <= limit, held, fitted.size)


def lyapunov_constants(
    v0: float, alpha: float, rho: float, sigma0: float, eta1: float, eta2: float, G2: float, b0: float
) -> tuple[float, float]:
    """The ``(C_CSGD, C_SGD)`` prefactors of the geometric Lyapunov bound."""
    c_sgd = v0 + 7.0 * alpha * (1.0 - rho) * G2 / (3.0 * b0 * (eta1 - rho))
    c_csgd = v0 + alpha * (1.0 - rho) / 3.0 * (10.0 * sigma0 / (eta2 - rho) + 7.0 * G2 / (b0 * (eta1 - rho)))
    return c_csgd, c_sgd


def check_sparsity(bitmaps: Sequence[Sequence[bool]] | Array, D: int) -> np.ndarray:
    """Per-worker count of length-``D`` sliding windows holding two or more uploads."""
    b = np.asarray(bitmaps, dtype=int)
    if b.ndim != 2:
        raise ParameterError("bitmaps must have shape (rounds, workers)")
    if D < 1:
        raise ParameterError(f"D must be >= 1, got {D}")
    if b.shape[0] < D:
        return np.zeros(b.shape[1], dtype=int)
    csum = np.vstack([np.zeros((1, b.shape[1]), dtype=int), np.cumsum(b, axis=0)])
    window_counts = csum[D:] - csum[:-D]
    return np.sum(window_counts >= 2, axis=0)


@dataclass(frozen=True)
class MinGradReport:
    checkpoints: tuple[int, ...]
    scaled_minima: tuple[float, ...]
    passed: bool


def check_min_grad_decay(
    grad_norms: Sequence[float], checkpoints: Sequence[int] = (100, 200, 400, 800), window: int = 3
) -> MinGradReport:
    """``K * min_{k <= K} ||grad F(x^k)||**2`` at each checkpoint.

    Passes if the last ``window`` values strictly decrease.
    """
    g2 = np.asarray(grad_norms, dtype=float) ** 2
    cps = tuple(int(c) for c in checkpoints)
    if len(cps) < 3 or any(c < 1 or c > g2.size for c in cps) or list(cps) != sorted(set(cps)):
        raise ParameterError(f"need >= 3 increasing checkpoints within 1..{g2.size}, got {cps}")
    if not 2 <= window <= len(cps):
        raise ParameterError(f"window must be in 2..{len(cps)}, got {window}")
    running = np.minimum.accumulate(g2)
    values = tuple(float(c * running[c - 1]) for c in cps)
    tail = values[-window:]
    return MinGradReport(cps, values, all(a > b for a, b in zip(tail, tail[1:])))
