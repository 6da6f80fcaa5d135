"""Censoring state machine: thresholds, upload decisions and the server update."""

from __future__ import annotations

import enum
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import StateError
from .objectives import Array, GradientSample
from .schedules import ScheduleSet, control_size


def threshold_theoretical(history: Sequence[float], sigma_k: float, w: float, M: int, D: int) -> float:
    """``(w / D * sum(history) + sigma_k) / M**2`` over the last ``D`` aggregate squared norms."""
    return (w / D * float(np.sum(history)) + sigma_k) / M**2


def threshold_experimental(
    model_diffs: Sequence[float],
    sigma0: float,
    eta2: float,
    k: int,
    w: float,
    M: int,
    D: int,
    alpha: float,
    epoch_len: int = 1,
) -> float:
    """Threshold written in terms of the last ``D`` squared model displacements.

    ``w / (M**2 D alpha**2) * sum ||x^{k-d} - x^{k-d-1}||**2 + sigma0 (1 - eta2)**k / M**2``.
    """
    e = -(-k // epoch_len)
    return w / (M**2 * D * alpha**2) * float(np.sum(model_diffs)) + sigma0 * (1.0 - eta2) ** e / M**2


class Decision(enum.Enum):
    UPLOAD = "upload"
    CENSORED = "censored"


@dataclass(eq=False)
class WorkerCensorState:
    worker_id: int
    last_uploaded: Array


def censor_decide(fresh: GradientSample | Array, state: WorkerCensorState, tau: float) -> Decision:
    """Upload iff ``||fresh - last_uploaded||**2 > tau``; ties censor.

    On upload ``state.last_uploaded`` is replaced by the fresh gradient.
    """
    grad = fresh.mean_gradient if isinstance(fresh, GradientSample) else np.asarray(fresh, dtype=float)
    if grad.shape != state.last_uploaded.shape:
        raise StateError(f"worker {state.worker_id}: gradient shape {grad.shape} != {state.last_uploaded.shape}")
    diff = grad - state.last_uploaded
    if float(diff @ diff) > tau:
        state.last_uploaded = grad.copy()
        return Decision.UPLOAD
    return Decision.CENSORED


@dataclass(eq=False)
class ServerState:
    """Server side of the protocol.

    ``history`` holds ``||aggregate^{k-d}||**2`` and ``step_history`` holds
    ``||x^{k-d} - x^{k-d-1}||**2`` for ``d = 1..D``, newest last, zero-filled
    before the first round. ``threshold`` is the value for the next round
    under the selected form; ``threshold_alt`` is the same quantity under
    the other form.
    """

    model: Array
    schedule: ScheduleSet
    num_workers: int
    form: str = "experimental"
    zero_threshold: bool = False
    iteration: int = 0
    aggregate: Array = field(init=False)
    stale: list[Array] = field(init=False)
    history: deque[float] = field(init=False)
    step_history: deque[float] = field(init=False)
    threshold: float = field(init=False)
    threshold_alt: float = field(init=False)
    last_step: Array = field(init=False)

    def __post_init__(self) -> None:
        if self.form not in ("experimental", "theoretical"):
            raise StateError(f"unknown threshold form {self.form!r}")
        self.model = np.array(self.model, dtype=float)
        d = self.model.size
        self.aggregate = np.zeros(d)
        self.stale = [np.zeros(d) for _ in range(self.num_workers)]
        D = self.schedule.D
        self.history = deque([0.0] * D, maxlen=D)
        self.step_history = deque([0.0] * D, maxlen=D)
        self.last_step = np.zeros(d)
        self._refresh_threshold()

    def _refresh_threshold(self) -> None:
        s, M, k = self.schedule, self.num_workers, self.iteration + 1
        if self.zero_threshold:
            self.threshold = self.threshold_alt = 0.0
            return
        theo = threshold_theoretical(self.history, control_size(s, k), s.w, M, s.D)
        expt = threshold_experimental(self.step_history, s.sigma0, s.eta2, k, s.w, M, s.D, s.alpha, s.epoch_len)
        self.threshold, self.threshold_alt = (expt, theo) if self.form == "experimental" else (theo, expt)

    def recomputed_aggregate(self) -> Array:
        return np.sum(np.stack(self.stale), axis=0)


def server_apply(state: ServerState, uploads: Iterable[tuple[int, Array]]) -> ServerState:
    """Replace the uploaders' stale gradients, step along the aggregate and compute the next threshold."""
    seen: set[int] = set()
    for worker_id, grad in uploads:
        if not 0 <= worker_id < state.num_workers:
            raise StateError(f"unknown worker_id {worker_id}")
        if worker_id in seen:
            raise StateError(f"worker {worker_id} uploaded twice in one round")
        seen.add(worker_id)
        state.stale[worker_id] = np.array(grad, dtype=float)
    # Summed from scratch: a running update drifts by eps * past magnitudes.
    state.aggregate = state.recomputed_aggregate()
    step = -state.schedule.alpha * state.aggregate
    state.model = state.model + step
    state.last_step = step
    state.history.append(float(state.aggregate @ state.aggregate))
    state.step_history.append(float(step @ step))
    state.iteration += 1
    state._refresh_threshold()
    return state
