import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csgd.config import build_problem, preset_config
from csgd.engine import Variant, run
from csgd.errors import CapabilityError, ParameterError
from csgd.objectives import estimate_constants, make_least_squares
from csgd.schedules import ScheduleSet
from csgd.verify import (
    check_descent,
    check_geometric_decay,
    check_min_grad_decay,
    check_sparsity,
    descent_bound,
    fit_log_slope,
    lyapunov_constants,
    resolution_floor,
)


def test_descent_bound_scalar_quadratic():
    rhs = descent_bound(np.array([1.0]), np.array([1.0]), 0.0, 0.1, 1.0, 1, 0.5)
    assert rhs == pytest.approx(-0.0675)
    lhs = 0.5 * 0.9**2 - 0.5
    assert lhs == pytest.approx(-0.095) and lhs <= rhs


def test_descent_bound_vanishing_step():
    g = np.array([0.3, -2.0])
    assert descent_bound(g, g, 0.0, 1e-12, 5.0, 3, 0.5) == pytest.approx(0.0, abs=1e-10)


@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(0, 10), st.floats(1e-3, 0.5), st.floats(0.05, 2.0),
)
def test_censored_and_plain_bounds_differ_as_stated(grad, fresh, tau, alpha, eps):
    g, f = np.array(grad), np.array(fresh)
    L, M = 2.0, 3
    err = float((g - f) @ (g - f))
    plain = descent_bound(g, f, tau, alpha, L, M, eps, censored=False)
    cens = descent_bound(g, f, tau, alpha, L, M, eps, censored=True)
    tau_term = alpha * M**2 * (1 / eps + (1 + 1 / eps) * L * alpha / 2) * tau
    assert cens - plain == pytest.approx(alpha / (2 * eps) * err + tau_term, rel=1e-9, abs=1e-9)
    # The plain bound ignores tau entirely.
    assert plain == descent_bound(g, f, 0.0, alpha, L, M, eps, censored=False)


@pytest.fixture(scope="module")
def preset():
    cfg = preset_config("least_squares")
    p = build_problem(cfg.problem)
    return cfg, p, estimate_constants(p)


@pytest.mark.parametrize("variant", [Variant.CSGD, Variant.SGD, Variant.LAG_S])
def test_descent_holds_every_round(preset, variant):
    cfg, p, c = preset
    res = run(p, cfg.schedule, variant, 500, 0, record_traces=True)
    checks = check_descent(p, res, c, 0.5)
    assert len(checks) == 500
    assert all(ch.passed for ch in checks)


def test_descent_needs_traces(preset):
    cfg, p, c = preset
    res = run(p, cfg.schedule, "csgd", 5, 0)
    with pytest.raises(CapabilityError):
        check_descent(p, res, c)
    res = run(p, cfg.schedule, "csgd", 5, 0, record_traces=True)
    with pytest.raises(ParameterError):
        check_descent(p, res, c, eps=0.0)


def test_descent_detects_a_false_constant(preset):
    cfg, p, c = preset
    res = run(p, cfg.schedule, "sgd", 50, 0, record_traces=True)
    wrong = replace(c, lipschitz=-1e3)
    assert not all(ch.passed for ch in check_descent(p, res, wrong))


def test_geometric_fit_exact_series():
    rho = 0.01
    v = (1 - rho) ** np.arange(1, 201)
    rep = check_geometric_decay(v, rho)
    assert rep.slope == pytest.approx(math.log(1 - rho), rel=1e-10)
    assert rep.passed and rep.fitted_rounds == 200


def test_geometric_fit_constant_series_fails():
    rep = check_geometric_decay(np.ones(100), 0.05)
    assert rep.slope == pytest.approx(0.0, abs=1e-12) and not rep.passed


def test_geometric_fit_averages_seeds_and_checks_constant():
    k = np.arange(1, 101)
    rows = np.vstack([2.0 * 0.9**k, 4.0 * 0.9**k])
    rep = check_geometric_decay(rows, 0.1, constant=3.0)
    assert rep.slope == pytest.approx(math.log(0.9))
    assert rep.constant_bound_held
    assert not check_geometric_decay(rows, 0.1, constant=2.9).constant_bound_held


def test_geometric_fit_floor_truncation():
    v = np.concatenate([0.5 ** np.arange(1, 81), np.zeros(20)])
    rep = check_geometric_decay(v, 0.3, floor=0.0)
    assert rep.fitted_rounds == 80 and rep.slope == pytest.approx(math.log(0.5))
    with pytest.raises(ParameterError):
        check_geometric_decay(v[:40], 0.3)


@pytest.mark.parametrize("rho", [0.0, 1.0, -0.2])
def test_geometric_needs_pl_rate(rho):
    with pytest.raises(CapabilityError):
        check_geometric_decay(np.ones(100), rho)


def test_fit_log_slope_rejects_nonpositive_tail():
    with pytest.raises(ParameterError):
        fit_log_slope([1.0, 0.5, 0.0, 0.2])


def test_resolution_floor(preset):
    _, p, _ = preset
    assert resolution_floor(p) == pytest.approx(16 * np.finfo(float).eps * p.optimum_value)


def test_lyapunov_constants_by_hand():
    c_csgd, c_sgd = lyapunov_constants(2.0, 0.3, 0.1, 0.5, 0.4, 0.2, 6.0, 3)
    assert c_sgd == pytest.approx(2.0 + 7 * 0.3 * 0.9 * 6.0 / (3 * 3 * 0.3))
    assert c_csgd == pytest.approx(2.0 + 0.3 * 0.9 / 3 * (10 * 0.5 / 0.1 + 7 * 6.0 / (3 * 0.3)))


def test_sgd_lyapunov_decays_at_theory_rate():
    cfg = preset_config("least_squares")
    p = build_problem(cfg.problem)
    c = estimate_constants(p)
    alpha = min(3 / (2 * 10 * c.pl_constant), 1 / (3 * c.lipschitz),
                1 / (6 * math.sqrt(5 * c.max_worker_lipschitz) * 10 * 10))
    s = replace(cfg.schedule, alpha=alpha)
    series = np.vstack([run(p, s, "sgd", 500, seed).column("lyapunov") for seed in range(10)])
    rho = c.pl_constant * alpha / 3
    _, c_sgd = lyapunov_constants(p.excess_loss(np.zeros(10)), alpha, rho, 0.0, s.eta1, s.eta2, c.variance_bound, s.b0)
    rep = check_geometric_decay(series, rho, constant=c_sgd)
    assert rep.passed and rep.constant_bound_held


def test_sparsity_examples():
    assert np.array_equal(check_sparsity(np.ones((10, 3), dtype=bool), 2), [9, 9, 9])
    every_d = np.zeros((12, 2), dtype=bool)
    every_d[::3] = True
    assert np.array_equal(check_sparsity(every_d, 3), [0, 0])
    assert np.array_equal(check_sparsity(np.ones((1, 2)), 3), [0, 0])
    with pytest.raises(ParameterError):
        check_sparsity(np.ones(4), 2)
    with pytest.raises(ParameterError):
        check_sparsity(np.ones((4, 1)), 0)


@given(st.lists(st.lists(st.booleans(), min_size=3, max_size=3), min_size=1, max_size=40), st.integers(1, 6))
def test_sparsity_matches_brute_force(bits, D):
    b = np.array(bits, dtype=bool)
    expected = [
        sum(int(b[s:s + D, m].sum() >= 2) for s in range(b.shape[0] - D + 1)) for m in range(b.shape[1])
    ]
    assert check_sparsity(b, D).tolist() == expected


def test_min_grad_examples():
    k = np.arange(1, 801)
    rep = check_min_grad_decay(1.0 / k, (100, 200, 400, 800))  # squared norms are 1/k^2
    assert rep.passed
    assert rep.scaled_minima == pytest.approx((1 / 100, 1 / 200, 1 / 400, 1 / 800))
    flat = check_min_grad_decay(np.ones(800))
    assert not flat.passed and flat.scaled_minima == (100.0, 200.0, 400.0, 800.0)


def test_min_grad_window():
    g2 = np.ones(800)
    g2[150:] = 0.1  # dips between the first two checkpoints, then flat
    norms = np.sqrt(g2)
    assert not check_min_grad_decay(norms).passed
    k = np.arange(1, 801)
    late = np.sqrt(np.where(k <= 200, 1.0, (200.0 / k) ** 3))  # scaled minima 100, 200, 50, 12.5
    assert check_min_grad_decay(late, window=3).passed
    assert not check_min_grad_decay(late, window=4).passed
    with pytest.raises(ParameterError):
        check_min_grad_decay(norms, window=5)
    with pytest.raises(ParameterError):
        check_min_grad_decay(norms, (100, 200, 900))
    with pytest.raises(ParameterError):
        check_min_grad_decay(norms, (100, 200))


def test_sparsity_on_tiny_regime_run():
    p = make_least_squares(2, 2, seed=11, noise_std=0.01)
    c = estimate_constants(p)
    s = ScheduleSet(alpha=0.01, b0=80_000, eta1=1 - 1 / 1.1, sigma0=1.0, eta2=0.05, D=2)
    res = run(p, s, "csgd", 60, 0)
    assert c.lipschitz == 2.0
    assert check_sparsity(res.bitmaps, 2).sum() == 0
