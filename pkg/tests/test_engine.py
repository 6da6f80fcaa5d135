import math
from dataclasses import replace

import numpy as np
import pytest

from csgd.config import build_problem, preset_config
from csgd.engine import (
    DIVERGENCE_LOSS,
    Variant,
    comm_complexity,
    lyapunov,
    lyapunov_weights,
    problem_lyapunov,
    run,
)
from csgd.errors import CapabilityError, ParameterError
from csgd.objectives import make_least_squares
from csgd.schedules import ScheduleSet

PRESET = preset_config("least_squares")
SCHED = PRESET.schedule


@pytest.fixture(scope="module")
def preset_problem():
    return build_problem(PRESET.problem)


@pytest.fixture(scope="module")
def preset_runs(preset_problem):
    return {
        v: [run(preset_problem, SCHED, v, 500, seed) for seed in range(10)]
        for v in (Variant.SGD, Variant.CSGD, Variant.LAG_S)
    }


def test_variant_parsing():
    assert Variant.parse("LAG_S") is Variant.LAG_S
    assert Variant.parse(Variant.SGD) is Variant.SGD
    with pytest.raises(ParameterError):
        Variant.parse("adam")
    s = ScheduleSet(alpha=0.1, sigma0=1.0, w=0.2)
    assert Variant.LAG_S.schedule_for(s).sigma0 == 0.0 and Variant.LAG_S.schedule_for(s).w == 0.2
    assert Variant.SGD.schedule_for(s).w == 0.0
    assert Variant.CSGD.schedule_for(s) is s


def test_sgd_uploads_everything(preset_runs):
    for res in preset_runs[Variant.SGD]:
        assert all(r.uploads == 10 for r in res.records)
        assert res.records[-1].cum_uploads == 5000
        assert [r.cum_uploads for r in res.records] == [10 * k for k in range(1, 501)]


def test_zero_threshold_matches_sgd_exactly(preset_problem):
    s = replace(SCHED, w=0.0, sigma0=0.0)
    for seed in range(3):
        a = run(preset_problem, s, Variant.CSGD, 200, seed, record_traces=True)
        b = run(preset_problem, SCHED, Variant.SGD, 200, seed, record_traces=True)
        assert np.array_equal(a.traces.models, b.traces.models)
        assert [r.loss for r in a.records] == [r.loss for r in b.records]


def test_csgd_saves_uploads_at_similar_loss(preset_runs):
    for sgd, csgd in zip(preset_runs[Variant.SGD], preset_runs[Variant.CSGD]):
        assert csgd.records[-1].cum_uploads < 5000
        assert csgd.records[-1].loss <= 2 * sgd.records[-1].loss


def test_csgd_uses_fewer_uploads_than_lag_s_mostly(preset_runs):
    held = 0
    for c, g in zip(preset_runs[Variant.CSGD], preset_runs[Variant.LAG_S]):
        held += all(a.cum_uploads <= b.cum_uploads for a, b in zip(c.records, g.records))
    assert held > len(preset_runs[Variant.CSGD]) / 2


def test_upload_accounting(preset_runs):
    for res in preset_runs[Variant.CSGD]:
        bits = res.bitmaps
        assert bits.shape == (500, 10)
        assert int(bits.sum()) == res.records[-1].cum_uploads
        assert np.array_equal(bits.sum(axis=1), res.column("uploads"))
        cum = res.column("cum_uploads")
        assert np.all(np.diff(cum) >= 0)
        assert all(0 <= r.uploads <= 10 for r in res.records)


def test_first_round_gradients_shared_across_variants(preset_problem):
    runs = [run(preset_problem, SCHED, v, 1, 4, record_traces=True) for v in Variant]
    assert all(np.array_equal(runs[0].traces.fresh_sums, r.traces.fresh_sums) for r in runs)


def test_reproducible(preset_problem):
    a = run(preset_problem, SCHED, "csgd", 100, 3, record_traces=True)
    b = run(preset_problem, SCHED, "csgd", 100, 3, record_traces=True)
    assert a.records == b.records
    assert np.array_equal(a.traces.models, b.traces.models)


def test_record_fields(preset_problem):
    res = run(preset_problem, SCHED, "csgd", 20, 0, record_traces=True)
    assert len(res.records) == res.iterations == 20 and not res.diverged
    r = res.records[4]
    assert r.iteration == 5
    x5 = res.traces.models[5]
    assert r.loss == preset_problem.full_loss(x5)
    assert r.grad_norm == pytest.approx(np.linalg.norm(preset_problem.full_gradient(x5)), rel=1e-15)
    assert r.threshold == res.traces.thresholds[4]
    assert r.suboptimality >= 0 and r.lyapunov >= r.suboptimality
    assert r.cum_samples == sum(min(math.ceil(1.1**k - 1e-12), 100) * 10 for k in range(1, 6))


def test_sgd_monotone_without_noise():
    p = make_least_squares(5, 4, seed=2, noise_std=0.0)
    # Features are still sampled, so huge batches keep the sampled step close to the exact one.
    s = ScheduleSet(alpha=1 / 4, b0=10**7, eta1=0.0, sigma0=0.0)
    res = run(p, s, "sgd", 30, 0)
    loss = res.column("loss")
    assert np.all(np.diff(loss) <= 0)


def test_divergence_flag():
    p = make_least_squares(3, 2, seed=0)
    res = run(p, ScheduleSet(alpha=5.0, b0=1000), "sgd", 200, 0)
    assert res.diverged
    assert len(res.records) < 200
    last = res.records[-1].loss
    assert not math.isfinite(last) or last > DIVERGENCE_LOSS


def test_run_validation():
    p = make_least_squares(3, 2, seed=0)
    with pytest.raises(ParameterError):
        run(p, ScheduleSet(alpha=0.1), "csgd", 0, 0)
    with pytest.raises(ParameterError):
        run(p, ScheduleSet(alpha=0.1), "csgd", 5, 0, x0=np.zeros(4))


def test_lyapunov_examples():
    assert np.allclose(lyapunov_weights(0.09, 2), [0.01, 0.005])
    assert lyapunov(1.0, [4.0, 2.0], 0.09, 2) == pytest.approx(1.05)
    assert lyapunov(0.0, [0.0] * 5, 0.3, 5) == 0.0
    with pytest.raises(ParameterError):
        lyapunov(1.0, [1.0], 0.1, 2)


def test_lyapunov_needs_optimum():
    class NoOptimum:
        has_optimum = False

    with pytest.raises(CapabilityError):
        problem_lyapunov(NoOptimum(), np.zeros(2), [0.0], 0.1, 1)


def test_lyapunov_trace_consistency(preset_problem):
    res = run(preset_problem, SCHED, "csgd", 30, 1, record_traces=True)
    aggs = -res.traces.steps / SCHED.alpha
    norms = np.sum(aggs * aggs, axis=1)
    k = 25
    window = norms[k - 1::-1][: SCHED.D]
    expected = lyapunov(preset_problem.excess_loss(res.traces.models[k]), window, SCHED.alpha, SCHED.D)
    assert res.records[k - 1].lyapunov == pytest.approx(expected, rel=1e-12)


def test_comm_complexity(preset_runs):
    sgd = preset_runs[Variant.SGD][0]
    assert comm_complexity(sgd, 1e9) == (1, 10)
    k, u = comm_complexity(sgd, 1e-3)
    assert u == 10 * k
    p = make_least_squares(3, 2, seed=0, noise_std=0.1)
    noisy = run(p, ScheduleSet(alpha=0.1), "csgd", 20, 0)
    assert comm_complexity(noisy, 0.0) == (math.inf, math.inf)
