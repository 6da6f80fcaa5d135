"""Distributed objectives with seeded stochastic-gradient oracles.

Three problem families are provided:

* :class:`LeastSquaresProblem` -- online synthetic least squares, every worker
  draws fresh ``(feature, noise)`` pairs from the same Gaussian model.
* :class:`FiniteLeastSquaresProblem` -- the same model, but each worker keeps
  a fixed sample and batches are drawn from it.
* :class:`LogisticProblem` -- l2-regularized logistic regression over a small
  in-memory dataset split evenly across workers.

The global objective is always the sum of the per-worker objectives.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

from .errors import CapabilityError, DataError, ParameterError

Array = npt.NDArray[np.float64]

# Tolerance of the cached pre-solve for dataset-backed optima.
OPTIMUM_GTOL = 1e-10


def substream(seed: int, worker_id: int, iteration: int) -> np.random.Generator:
    """Independent generator for one (run seed, worker, iteration) triple.

    Streams are derived from indices only, so the order in which workers are
    evaluated cannot change any draw.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(worker_id, iteration))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True, eq=False)
class GradientSample:
    mean_gradient: Array
    batch_size_used: int
    worker_id: int
    iteration: int


@dataclass(frozen=True)
class ObjectiveConstants:
    """Smoothness, PL and variance constants of a problem.

    ``pl_constant == 0`` means no PL constant is known. ``variance_bound`` is
    the aggregate ``G**2`` and equals ``sum(worker_variance)`` because worker
    samples are independent.
    """

    lipschitz: float
    worker_lipschitz: tuple[float, ...]
    pl_constant: float
    variance_bound: float
    worker_variance: tuple[float, ...]

    @property
    def max_worker_lipschitz(self) -> float:
        return max(self.worker_lipschitz)


def _check_worker(worker_id: int, num_workers: int) -> None:
    if not 0 <= worker_id < num_workers:
        raise ParameterError(f"worker_id {worker_id} outside [0, {num_workers})")


def _check_batch(batch: int) -> None:
    if batch < 1:
        raise ParameterError(f"batch must be >= 1, got {batch}")


def _local_batch(
    local: npt.NDArray[np.intp], batch: int, seed: int, worker_id: int, iteration: int
) -> npt.NDArray[np.intp]:
    # With-replacement draws until the batch covers the local rows, then one full pass.
    if batch >= local.size:
        return local
    rng = substream(seed, worker_id, iteration)
    return local[rng.integers(0, local.size, size=batch)]


@dataclass(frozen=True, eq=False)
class LeastSquaresProblem:
    """Per-sample loss ``0.5 * (xi1 @ (x - x_star) + xi2)**2``.

    ``xi1`` has i.i.d. standard Gaussian entries and ``xi2 ~ N(0, noise_std**2)``.
    Samples are drawn online, so there is no finite dataset. Batches larger
    than ``explicit_batch_limit`` are drawn through the exact sufficient
    statistics of the batch (a Wishart matrix and a conditionally Gaussian
    cross term) instead of materializing every sample.
    """

    x_star: Array
    num_workers: int
    noise_std: float
    seed: int
    explicit_batch_limit: int = 4096

    kind = "least_squares"

    @property
    def dimension(self) -> int:
        return int(self.x_star.size)

    @property
    def has_optimum(self) -> bool:
        return True

    @property
    def minimizer(self) -> Array:
        return self.x_star

    @property
    def optimum_value(self) -> float:
        return 0.5 * self.num_workers * self.noise_std**2

    def full_loss(self, x: Array) -> float:
        e = np.asarray(x, dtype=float) - self.x_star
        return 0.5 * self.num_workers * (float(e @ e) + self.noise_std**2)

    def excess_loss(self, x: Array) -> float:
        # Computed without subtracting the optimum, so it stays accurate far below eps * F*.
        e = np.asarray(x, dtype=float) - self.x_star
        return 0.5 * self.num_workers * float(e @ e)

    def full_gradient(self, x: Array) -> Array:
        return self.num_workers * (np.asarray(x, dtype=float) - self.x_star)

    def draw_samples(self, rng: np.random.Generator, n: int) -> tuple[Array, Array]:
        """Draw ``n`` raw samples: features of shape ``(n, d)`` and noise ``(n,)``."""
        features = rng.standard_normal((n, self.dimension))
        noise = self.noise_std * rng.standard_normal(n)
        return features, noise

    def per_sample_gradients(self, x: Array, features: Array, noise: Array) -> Array:
        residual = features @ (np.asarray(x, dtype=float) - self.x_star) + noise
        return features * residual[:, None]

    def sample_gradient(
        self, worker_id: int, x: Array, batch: int, seed: int, iteration: int
    ) -> GradientSample:
        _check_worker(worker_id, self.num_workers)
        _check_batch(batch)
        rng = substream(seed, worker_id, iteration)
        if batch <= max(self.explicit_batch_limit, self.dimension):
            features, noise = self.draw_samples(rng, batch)
            grad = self.per_sample_gradients(x, features, noise).mean(axis=0)
        else:
            grad = self._sufficient_statistic_mean(rng, np.asarray(x, dtype=float), batch)
        return GradientSample(grad, batch, worker_id, iteration)

    def _sufficient_statistic_mean(self, rng: np.random.Generator, x: Array, batch: int) -> Array:
        # sum_b xi xi^T ~ Wishart(batch, I) = A A^T (Bartlett); sum_b xi*xi2 | A ~ N(0, s^2 A A^T).
        d = self.dimension
        a = np.zeros((d, d))
        a[np.tril_indices(d, -1)] = rng.standard_normal(d * (d - 1) // 2)
        a[np.diag_indices(d)] = np.sqrt(rng.chisquare(float(batch) - np.arange(d)))
        e = x - self.x_star
        total = a @ (a.T @ e) + self.noise_std * (a @ rng.standard_normal(d))
        return total / float(batch)

    def sample_variance(self, x: Array) -> float:
        """Exact per-worker variance ``E||g - grad F_m||**2`` of one sample at ``x``."""
        e = np.asarray(x, dtype=float) - self.x_star
        d = self.dimension
        return (d + 1) * float(e @ e) + d * self.noise_std**2


@dataclass(frozen=True, eq=False)
class FiniteLeastSquaresProblem:
    """Least squares over a fixed sample of ``samples_per_worker`` draws per worker.

    The sample comes from the same Gaussian model as
    :class:`LeastSquaresProblem`, and each worker's objective is the mean
    loss over its own rows. Sampling follows the dataset rule:
    with replacement below the local row count, one full pass at or above it.
    """

    x_star: Array
    features: Array
    noise: Array
    partitions: tuple[npt.NDArray[np.intp], ...]
    noise_std: float
    seed: int

    kind = "least_squares"

    @property
    def num_workers(self) -> int:
        return len(self.partitions)

    @property
    def dimension(self) -> int:
        return int(self.x_star.size)

    @property
    def samples_per_worker(self) -> int:
        return int(self.partitions[0].size)

    def worker_rows(self, worker_id: int) -> int:
        return int(self.partitions[worker_id].size)

    def per_sample_gradients(self, x: Array, rows: npt.NDArray[np.intp]) -> Array:
        a = self.features[rows]
        residual = a @ (np.asarray(x, dtype=float) - self.x_star) + self.noise[rows]
        return a * residual[:, None]

    def sample_gradient(
        self, worker_id: int, x: Array, batch: int, seed: int, iteration: int
    ) -> GradientSample:
        _check_worker(worker_id, self.num_workers)
        _check_batch(batch)
        rows = _local_batch(self.partitions[worker_id], batch, seed, worker_id, iteration)
        return GradientSample(self.per_sample_gradients(x, rows).mean(axis=0), int(rows.size), worker_id, iteration)

    @cached_property
    def worker_hessians(self) -> tuple[Array, ...]:
        return tuple(self.features[r].T @ self.features[r] / r.size for r in self.partitions)

    @cached_property
    def hessian(self) -> Array:
        return np.sum(np.stack(self.worker_hessians), axis=0)

    def _linear_term(self) -> Array:
        # grad F(x) = H (x - x_star) + sum_m A_m^T noise_m / n_m
        return sum(self.features[r].T @ self.noise[r] / r.size for r in self.partitions)

    def full_gradient(self, x: Array) -> Array:
        e = np.asarray(x, dtype=float) - self.x_star
        return sum(
            self.features[r].T @ (self.features[r] @ e + self.noise[r]) / r.size for r in self.partitions
        )

    def full_loss(self, x: Array) -> float:
        e = np.asarray(x, dtype=float) - self.x_star
        return sum(
            0.5 * float(np.mean((self.features[r] @ e + self.noise[r]) ** 2)) for r in self.partitions
        )

    @cached_property
    def minimizer(self) -> Array:
        return self.x_star - np.linalg.solve(self.hessian, self._linear_term())

    @property
    def has_optimum(self) -> bool:
        return True

    @cached_property
    def optimum_value(self) -> float:
        return self.full_loss(self.minimizer)

    def excess_loss(self, x: Array) -> float:
        # Exact quadratic form around the minimizer; no cancellation against F*.
        e = np.asarray(x, dtype=float) - self.minimizer
        return 0.5 * float(e @ self.hessian @ e)


@dataclass(frozen=True, eq=False)
class LogisticProblem:
    """Cross-entropy logistic regression with an l2 penalty split evenly over workers.

    Worker ``m`` holds rows ``partitions[m]`` and minimizes the mean
    cross-entropy over them plus ``(lam / 2) * ||x||**2 / M``, so the
    penalties add up to ``(lam / 2) * ||x||**2`` globally.
    """

    features: Array
    labels: Array
    partitions: tuple[npt.NDArray[np.intp], ...]
    lam: float
    seed: int

    kind = "logistic"

    @property
    def num_workers(self) -> int:
        return len(self.partitions)

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    def worker_rows(self, worker_id: int) -> int:
        return int(self.partitions[worker_id].size)

    def _worker_grad_and_loss(self, worker_id: int, x: Array) -> tuple[Array, float]:
        rows = self.partitions[worker_id]
        a, y = self.features[rows], self.labels[rows]
        z = a @ x
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        grad = a.T @ (special.expit(z) - y) / rows.size
        reg = self.lam / self.num_workers
        return grad + reg * x, loss + 0.5 * reg * float(x @ x)

    def full_loss(self, x: Array) -> float:
        x = np.asarray(x, dtype=float)
        return sum(self._worker_grad_and_loss(m, x)[1] for m in range(self.num_workers))

    def full_gradient(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return sum(self._worker_grad_and_loss(m, x)[0] for m in range(self.num_workers))

    def _hessian(self, x: Array) -> Array:
        h = self.lam * np.eye(self.dimension)
        for rows in self.partitions:
            a = self.features[rows]
            s = special.expit(a @ x)
            h += (a.T * (s * (1.0 - s))) @ a / rows.size
        return h

    def per_sample_gradients(self, x: Array, rows: npt.NDArray[np.intp]) -> Array:
        x = np.asarray(x, dtype=float)
        a = self.features[rows]
        r = special.expit(a @ x) - self.labels[rows]
        return a * r[:, None] + (self.lam / self.num_workers) * x

    def sample_gradient(
        self, worker_id: int, x: Array, batch: int, seed: int, iteration: int
    ) -> GradientSample:
        """Mean of ``batch`` gradients drawn with replacement from the worker's rows.

        Once ``batch`` reaches the local row count the whole local dataset is
        used once instead, which makes the result deterministic.
        """
        _check_worker(worker_id, self.num_workers)
        _check_batch(batch)
        rows = _local_batch(self.partitions[worker_id], batch, seed, worker_id, iteration)
        return GradientSample(self.per_sample_gradients(x, rows).mean(axis=0), int(rows.size), worker_id, iteration)

    @cached_property
    def _optimum(self) -> tuple[Array, float] | None:
        res = optimize.minimize(
            self.full_loss,
            np.zeros(self.dimension),
            jac=self.full_gradient,
            hess=self._hessian,
            method="trust-exact",
            options={"gtol": OPTIMUM_GTOL, "maxiter": 500},
        )
        if not np.all(np.isfinite(res.x)) or np.linalg.norm(self.full_gradient(res.x)) > OPTIMUM_GTOL:
            return None
        return res.x, float(self.full_loss(res.x))

    @property
    def has_optimum(self) -> bool:
        return self._optimum is not None

    @property
    def minimizer(self) -> Array:
        if self._optimum is None:
            raise CapabilityError("pre-solve did not reach the gradient tolerance; F* unavailable")
        return self._optimum[0]

    @property
    def optimum_value(self) -> float:
        if self._optimum is None:
            raise CapabilityError("pre-solve did not reach the gradient tolerance; F* unavailable")
        return self._optimum[1]

    def excess_loss(self, x: Array) -> float:
        return self.full_loss(x) - self.optimum_value


Problem = Union[LeastSquaresProblem, FiniteLeastSquaresProblem, LogisticProblem]


def make_least_squares(
    d: int,
    M: int,
    seed: int,
    noise_std: float = 0.01,
    samples_per_worker: int | None = None,
    explicit_batch_limit: int = 4096,
) -> LeastSquaresProblem | FiniteLeastSquaresProblem:
    """Synthetic least squares with ground truth entries uniform on ``[-2, 2]``.

    With ``samples_per_worker=None`` every batch is a fresh draw from the
    model (infinite data); otherwise each worker keeps a fixed sample of that
    size drawn from the same model.
    """
    if d < 1 or M < 1:
        raise ParameterError(f"need d >= 1 and M >= 1, got d={d}, M={M}")
    if noise_std < 0 or not np.isfinite(noise_std):
        raise ParameterError(f"noise_std must be finite and >= 0, got {noise_std}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x_star = rng.uniform(-2.0, 2.0, size=d)
    x_star.setflags(write=False)
    if samples_per_worker is None:
        return LeastSquaresProblem(x_star, M, float(noise_std), seed, explicit_batch_limit)
    if samples_per_worker < 1:
        raise ParameterError(f"samples_per_worker must be >= 1, got {samples_per_worker}")
    n = samples_per_worker
    features = rng.standard_normal((M * n, d))
    noise = noise_std * rng.standard_normal(M * n)
    parts = tuple(np.arange(m * n, (m + 1) * n) for m in range(M))
    for arr in (features, noise, *parts):
        arr.setflags(write=False)
    return FiniteLeastSquaresProblem(x_star, features, noise, parts, float(noise_std), seed)


def load_csv(path: str | Path) -> Array:
    """Headerless CSV, one sample per row, label in the last column."""
    try:
        rows = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return rows


def make_classification_rows(n: int, d: int, seed: int, scale: float = 1.0) -> Array:
    """Rows ``[features..., label]`` from a planted logistic model; a stand-in desk-scale dataset."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    a = rng.standard_normal((n, d))
    w = scale * rng.standard_normal(d) / np.sqrt(d)
    y = (rng.random(n) < special.expit(a @ w)).astype(float)
    return np.column_stack([a, y])


def make_logistic(rows: Array, M: int, lam: float, seed: int) -> LogisticProblem:
    """Shuffle ``rows`` by ``seed`` and deal them out evenly to ``M`` workers."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] < 2:
        raise DataError("dataset must have at least one row with a label and one feature")
    if M < 1:
        raise ParameterError(f"need M >= 1, got {M}")
    if lam < 0:
        raise ParameterError(f"lam must be >= 0, got {lam}")
    if not np.all(np.isfinite(rows)):
        raise DataError("dataset contains non-finite values")
    if rows.shape[0] < M:
        raise DataError(f"{rows.shape[0]} rows cannot cover {M} workers")
    raw = rows[:, -1]
    values = set(np.unique(raw).tolist())
    if values <= {0.0, 1.0}:
        labels = raw.copy()
    elif values <= {-1.0, 1.0}:
        labels = (raw > 0).astype(float)
    else:
        raise DataError(f"labels must be in {{0,1}} or {{-1,+1}}, found {sorted(values)[:5]}")
    features = np.ascontiguousarray(rows[:, :-1])
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(rows.shape[0])
    parts = tuple(np.sort(p) for p in np.array_split(perm, M))
    for arr in (features, labels, *parts):
        arr.setflags(write=False)
    return LogisticProblem(features, labels, parts, float(lam), seed)


def estimate_constants(problem: Problem, radius: float | None = None) -> ObjectiveConstants:
    """Constants ``(L, L_m, mu, G**2, G_m**2)`` used to pick theoretically valid settings.

    Least squares: the expected Hessian is ``M * I`` so ``L = mu = M`` and
    ``L_m = 1``. Its gradient variance grows with ``||x - x_star||``, so the
    variance bounds are the supremum over the ball of ``radius`` around
    ``x_star`` (default: the distance from the origin, the default start).

    Logistic: ``L_m`` is the largest eigenvalue of ``A_m^T A_m / (4 n_m)`` plus
    ``lam / M``; since ``|sigmoid - y| <= 1`` the per-sample variance never
    exceeds the mean squared row norm. ``mu = lam``.
    """
    if isinstance(problem, LeastSquaresProblem):
        r = float(np.linalg.norm(problem.x_star)) if radius is None else float(radius)
        M, d = problem.num_workers, problem.dimension
        g_m = (d + 1) * r**2 + d * problem.noise_std**2
        return ObjectiveConstants(float(M), (1.0,) * M, float(M), M * g_m, (g_m,) * M)
    if isinstance(problem, FiniteLeastSquaresProblem):
        # Over ||x - x_hat|| <= r: variance <= E||g||^2 <= E[ ||a||^2 (||a|| r + |a.(x_hat - x_star) + xi2|)^2 ].
        center = problem.minimizer
        r = float(np.linalg.norm(center)) if radius is None else float(radius)
        offset = center - problem.x_star
        worker_l, worker_g = [], []
        for rows, h in zip(problem.partitions, problem.worker_hessians):
            a = problem.features[rows]
            sq = np.sum(a * a, axis=1)
            resid = np.abs(a @ offset + problem.noise[rows])
            worker_l.append(float(np.linalg.eigvalsh(h)[-1]))
            worker_g.append(float(np.mean(sq * (np.sqrt(sq) * r + resid) ** 2)))
        eig = np.linalg.eigvalsh(problem.hessian)
        return ObjectiveConstants(float(eig[-1]), tuple(worker_l), float(eig[0]), sum(worker_g), tuple(worker_g))
    if isinstance(problem, LogisticProblem):
        M = problem.num_workers
        curv = np.zeros((problem.dimension, problem.dimension))
        worker_l, worker_g = [], []
        for rows in problem.partitions:
            a = problem.features[rows]
            gram = a.T @ a / (4.0 * rows.size)
            curv += gram
            worker_l.append(float(np.linalg.eigvalsh(gram)[-1]) + problem.lam / M)
            worker_g.append(float(np.mean(np.sum(a * a, axis=1))))
        lip = float(np.linalg.eigvalsh(curv)[-1]) + problem.lam
        return ObjectiveConstants(lip, tuple(worker_l), problem.lam, sum(worker_g), tuple(worker_g))
    raise CapabilityError(f"no constant estimator for {type(problem).__name__}")


def monte_carlo_variance(
    problem: Problem, worker_id: int, x: Array, samples: int, seed: int
) -> float:
    """Monte-Carlo estimate of ``E||grad f_m(x; xi) - grad F_m(x)||**2`` from ``samples`` draws."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(worker_id,)))
    if isinstance(problem, LeastSquaresProblem):
        grads = problem.per_sample_gradients(x, *problem.draw_samples(rng, samples))
        exact = problem.full_gradient(x) / problem.num_workers
    elif isinstance(problem, (LogisticProblem, FiniteLeastSquaresProblem)):
        local = problem.partitions[worker_id]
        grads = problem.per_sample_gradients(x, local[rng.integers(0, local.size, size=samples)])
        exact = problem.per_sample_gradients(x, local).mean(axis=0)
    else:
        raise CapabilityError(f"no sampler for {type(problem).__name__}")
    return float(np.mean(np.sum((grads - exact) ** 2, axis=1)))
