"""Synchronous round loop for SGD, CSGD and LAG-S with communication accounting."""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .censor import Decision, ServerState, WorkerCensorState, censor_decide, server_apply
from .errors import CapabilityError, ParameterError
from .objectives import Array, Problem
from .schedules import ScheduleSet, batch_size

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e12


class Variant(str, enum.Enum):
    SGD = "sgd"
    CSGD = "csgd"
    LAG_S = "lag-s"

    @classmethod
    def parse(cls, value: str | Variant) -> Variant:
        if isinstance(value, Variant):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ParameterError(f"unknown variant {value!r}; expected one of sgd, csgd, lag-s")

    def schedule_for(self, s: ScheduleSet) -> ScheduleSet:
        """The schedule this variant actually runs: LAG-S drops the control-size, SGD the whole threshold."""
        if self is Variant.LAG_S:
            return replace(s, sigma0=0.0)
        if self is Variant.SGD:
            return replace(s, sigma0=0.0, w=0.0)
        return s


@dataclass(frozen=True)
class RoundRecord:
    iteration: int
    loss: float
    suboptimality: float
    grad_norm: float
    uploads: int
    cum_uploads: int
    cum_samples: int
    threshold: float
    threshold_alt: float
    lyapunov: float
    upload_bitmap: tuple[bool, ...]


@dataclass(eq=False)
class Traces:
    """Per-round vectors needed by the post-hoc checks.

    ``models[k]`` is ``x^k`` (``models[0]`` the start point); ``fresh_sums[k-1]``
    is the sum of the fresh worker means of round ``k``; ``thresholds[k-1]`` is
    the threshold in force during round ``k``.
    """

    models: Array
    fresh_sums: Array
    steps: Array
    thresholds: Array


@dataclass(eq=False)
class RunResult:
    records: list[RoundRecord]
    final_model: Array
    variant: Variant
    seed: int
    schedule: ScheduleSet
    iterations: int
    threshold_form: str
    diverged: bool = False
    traces: Traces | None = None
    config: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def bitmaps(self) -> np.ndarray:
        """Boolean array of shape ``(rounds, M)``."""
        return np.array([r.upload_bitmap for r in self.records], dtype=bool)


def lyapunov_weights(alpha: float, D: int) -> np.ndarray:
    """``beta_d = (D + 1 - d) * alpha / (9 D)`` for ``d = 1..D``."""
    d = np.arange(1, D + 1)
    return (D + 1 - d) * alpha / (9.0 * D)


def lyapunov(suboptimality: float, window: Sequence[float], alpha: float, D: int) -> float:
    """Suboptimality plus the weighted window of recent aggregate squared norms.

    ``window[0]`` is the newest squared norm (the current round's aggregate)
    and ``window[d-1]`` the one ``d - 1`` rounds back.
    """
    window = np.asarray(window, dtype=float)
    if window.size != D:
        raise ParameterError(f"window must hold {D} values, got {window.size}")
    return float(suboptimality + lyapunov_weights(alpha, D) @ window)


def problem_lyapunov(problem: Problem, x: Array, window: Sequence[float], alpha: float, D: int) -> float:
    if not problem.has_optimum:
        raise CapabilityError("problem has no known optimum value")
    return lyapunov(problem.excess_loss(x), window, alpha, D)


def run(
    problem: Problem,
    schedule: ScheduleSet,
    variant: Variant | str,
    iterations: int,
    seed: int,
    *,
    x0: Array | None = None,
    threshold_form: str = "experimental",
    record_traces: bool = False,
) -> RunResult:
    """Run ``iterations`` rounds; every worker samples each round, censored or not.

    Loss and gradient metrics use the exact objective. The run stops early
    with ``diverged=True`` when the loss becomes non-finite or exceeds 1e12.
    """
    variant = Variant.parse(variant)
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    M, d = problem.num_workers, problem.dimension
    sched = variant.schedule_for(schedule)
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,):
        raise ParameterError(f"x0 must have shape ({d},)")
    server = ServerState(x, sched, M, form=threshold_form, zero_threshold=variant is Variant.SGD)
    workers = [WorkerCensorState(m, np.zeros(d)) for m in range(M)]
    with_lyapunov = problem.has_optimum
    window: deque[float] = deque([0.0] * sched.D, maxlen=sched.D)

    records: list[RoundRecord] = []
    tr_models, tr_fresh, tr_steps, tr_tau = [x.copy()], [], [], []
    cum_uploads = cum_samples = 0
    diverged = False
    for k in range(1, iterations + 1):
        tau, tau_alt = server.threshold, server.threshold_alt
        batch = batch_size(sched, k)
        samples = [problem.sample_gradient(m, server.model, batch, seed, k) for m in range(M)]
        if variant is Variant.SGD:
            bitmap = tuple(True for _ in range(M))
            for m, smp in enumerate(samples):
                workers[m].last_uploaded = smp.mean_gradient.copy()
        else:
            bitmap = tuple(censor_decide(smp, workers[m], tau) is Decision.UPLOAD for m, smp in enumerate(samples))
        uploads = [(m, workers[m].last_uploaded) for m in range(M) if bitmap[m]]
        server_apply(server, uploads)

        n_up = len(uploads)
        cum_uploads += n_up
        cum_samples += sum(s.batch_size_used for s in samples)
        x = server.model
        loss = problem.full_loss(x)
        grad_norm = float(np.linalg.norm(problem.full_gradient(x)))
        window.appendleft(server.history[-1])
        if with_lyapunov:
            sub = problem.excess_loss(x)
            lyap = lyapunov(sub, window, sched.alpha, sched.D)
        else:
            sub = lyap = math.nan
        records.append(
            RoundRecord(k, loss, sub, grad_norm, n_up, cum_uploads, cum_samples, tau, tau_alt, lyap, bitmap)
        )
        if record_traces:
            tr_models.append(x.copy())
            tr_fresh.append(np.sum(np.stack([s.mean_gradient for s in samples]), axis=0))
            tr_steps.append(server.last_step.copy())
            tr_tau.append(tau)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            log.warning("%s seed=%d diverged at k=%d (loss=%g)", variant.value, seed, k, loss)
            diverged = True
            break

    traces = None
    if record_traces:
        traces = Traces(
            np.array(tr_models), np.array(tr_fresh).reshape(-1, d), np.array(tr_steps).reshape(-1, d),
            np.array(tr_tau),
        )
    return RunResult(
        records, server.model.copy(), variant, seed, sched, iterations, threshold_form, diverged, traces
    )


def comm_complexity(result: RunResult, nu: float) -> tuple[float, float]:
    """First iteration whose suboptimality is ``<= nu`` and the uploads spent by then.

    Returns ``(inf, inf)`` if the target is never reached.
    """
    for r in result.records:
        if not math.isnan(r.suboptimality) and r.suboptimality <= nu:
            return r.iteration, r.cum_uploads
    return math.inf, math.inf
