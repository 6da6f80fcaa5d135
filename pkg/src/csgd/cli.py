"""Experiment orchestration and the ``csgd`` command line.

Subcommands: ``run`` (one variant over the configured seeds), ``compare``
(all variants, shared sampling streams), ``verify`` (post-hoc guarantee
checks with a text report and exit status) and ``preset`` (print a preset
as an editable config document).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .config import PRESETS, RunConfig, build_problem, load_config, preset_config, render_config
from .engine import RunResult, Variant, run
from .errors import CSGDError, DivergenceError, ParameterError
from .objectives import Problem, estimate_constants
from .schedules import min_initial_batch, validate_theoretical
from .verify import (
    check_descent,
    check_geometric_decay,
    check_min_grad_decay,
    check_sparsity,
    lyapunov_constants,
    resolution_floor,
)

log = logging.getLogger(__name__)

CSV_HEADER = (
    "variant", "seed", "iter", "loss", "grad_norm", "uploads", "cum_uploads", "cum_samples", "threshold", "lyapunov",
)
CHECKS = ("descent", "decay", "sparsity", "mingrad")
SPARSITY_SLACK = 0.1
_VARIANT_ORDER = {v: i for i, v in enumerate(Variant)}


def run_seeds(
    cfg: RunConfig,
    variant: Variant | str | None = None,
    seeds: Sequence[int] | None = None,
    iterations: int | None = None,
    *,
    problem: Problem | None = None,
    record_traces: bool = False,
    strict: bool = True,
) -> list[RunResult]:
    """Run one variant over several seeds on the configured problem.

    With ``strict`` a diverged run raises :class:`DivergenceError` tagged
    with its variant and seed.
    """
    problem = build_problem(cfg.problem) if problem is None else problem
    variant = cfg.variant if variant is None else Variant.parse(variant)
    out = []
    for seed in cfg.seeds if seeds is None else seeds:
        res = run(
            problem, cfg.schedule, variant, cfg.iterations if iterations is None else iterations, seed,
            threshold_form=cfg.threshold_form, record_traces=record_traces,
        )
        res.config = {"problem": dataclasses.asdict(cfg.problem)}
        if strict and res.diverged:
            raise DivergenceError(variant.value, seed, len(res.records))
        out.append(res)
    return out


def run_compare(
    cfg: RunConfig, variants: Iterable[Variant | str] = tuple(Variant), *, problem: Problem | None = None
) -> list[RunResult]:
    """Every variant over every seed; seeds share sampling streams across variants."""
    problem = build_problem(cfg.problem) if problem is None else problem
    results = []
    for v in variants:
        results.extend(run_seeds(cfg, v, problem=problem))
    return results


def _fmt(value: float | int) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def csv_rows(results: Iterable[RunResult], metrics_every: int = 1) -> list[list[str]]:
    """CSV body rows sorted by (variant, seed, iter); every ``metrics_every``-th round plus the last."""
    if metrics_every < 1:
        raise ParameterError(f"metrics_every must be >= 1, got {metrics_every}")
    keyed = []
    for res in results:
        last = len(res.records)
        for r in res.records:
            if r.iteration % metrics_every and r.iteration != last:
                continue
            row = [res.variant.value, str(res.seed)] + [
                _fmt(v) for v in (
                    r.iteration, r.loss, r.grad_norm, r.uploads, r.cum_uploads, r.cum_samples, r.threshold,
                    r.lyapunov,
                )
            ]
            keyed.append(((_VARIANT_ORDER[res.variant], res.seed, r.iteration), row))
    keyed.sort(key=lambda kr: kr[0])
    return [row for _, row in keyed]


def write_csv(results: Iterable[RunResult], out, metrics_every: int = 1) -> int:
    """Write the header and body to the text stream ``out``; returns the number of data rows."""
    rows = csv_rows(results, metrics_every)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return len(rows)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    summary: str
    gating: bool = True
    skipped: bool = False
    details: tuple[str, ...] = ()


def _skip(name: str, reason: str) -> CheckResult:
    return CheckResult(name, False, f"skipped: {reason}", gating=False, skipped=True)


class _RunCache:
    def __init__(self, cfg: RunConfig, problem: Problem):
        self.cfg, self.problem = cfg, problem
        self._runs: dict[Variant, list[RunResult]] = {}

    def get(self, variant: Variant) -> list[RunResult]:
        if variant not in self._runs:
            self._runs[variant] = run_seeds(
                self.cfg, variant, problem=self.problem, record_traces=True, strict=False
            )
        return self._runs[variant]


def _verify_descent(cfg, problem, consts, cache) -> CheckResult:
    variants = [cfg.variant] + ([Variant.SGD] if cfg.variant is not Variant.SGD else [])
    total = held = 0
    failures: list[str] = []
    for v in variants:
        for res in cache.get(v):
            for c in check_descent(problem, res, consts, cfg.verify.epsilon):
                total += 1
                if c.passed:
                    held += 1
                elif len(failures) < 10:
                    failures.append(f"{v.value} seed={res.seed} k={c.iteration}: lhs={c.lhs!r} > rhs={c.rhs!r}")
    names = "/".join(v.value for v in variants)
    return CheckResult("descent", held == total, f"{held}/{total} rounds hold ({names})", details=tuple(failures))


def _verify_decay(cfg, problem, consts, cache) -> CheckResult:
    if not problem.has_optimum:
        return _skip("decay", "problem has no known optimum")
    rho = consts.pl_constant * cfg.schedule.alpha / 3.0
    if not 0 < rho < 1:
        return _skip("decay", f"rho={rho:.6g} is not in (0, 1)")
    runs = cache.get(cfg.variant)
    if any(r.diverged for r in runs):
        return CheckResult("decay", False, "a run diverged")
    series = np.vstack([r.column("lyapunov") for r in runs])
    sched = runs[0].schedule
    x0 = np.zeros(problem.dimension)
    c_csgd, c_sgd = lyapunov_constants(
        problem.excess_loss(x0), sched.alpha, rho, sched.sigma0, sched.eta1, sched.eta2,
        consts.variance_bound, sched.b0,
    )
    constant = c_sgd if cfg.variant is Variant.SGD else c_csgd
    try:
        rep = check_geometric_decay(series, rho, constant, floor=resolution_floor(problem))
    except ParameterError as exc:
        return _skip("decay", str(exc))
    theory = validate_theoretical(cfg.schedule, consts, problem.num_workers, "pl", cfg.iterations)
    details = (
        f"fitted over rounds {rep.fitted_rounds // 2 + 1}..{rep.fitted_rounds} of {series.shape[1]}",
        f"pointwise bound V <= C (1 - rho)^k: {'held' if rep.constant_bound_held else 'not held'} (advisory)",
        "parameter regime: " + ", ".join(f"{c.name}={'ok' if c.passed else 'no'}" for c in theory.conditions),
    )
    summary = f"slope={rep.slope:.6g} <= limit={rep.limit:.6g} (log(1-rho)={rep.target:.6g}, rho={rho:.6g})"
    if not rep.passed:
        summary = summary.replace("<=", ">", 1)
    return CheckResult("decay", rep.passed, f"{cfg.variant.value} {summary}", details=details)


def _verify_sparsity(cfg, problem, consts, cache) -> CheckResult:
    if cfg.variant is Variant.SGD:
        return _skip("sparsity", "SGD uploads every round")
    delta = cfg.verify.delta
    runs = cache.get(cfg.variant)
    D = cfg.schedule.D
    bad = [r.seed for r in runs if check_sparsity(r.bitmaps, D).any()]
    frac = len(bad) / len(runs)
    limit = delta + SPARSITY_SLACK
    b0_min = min_initial_batch(cfg.schedule, consts, problem.num_workers, delta)
    gating = cfg.schedule.b0 >= b0_min
    summary = f"{len(bad)}/{len(runs)} seeds with a repeated upload inside a {D}-round window (limit {limit:.3g})"
    details = (f"B0={cfg.schedule.b0} vs required {b0_min:.6g}" + ("" if gating else "; informational only"),)
    return CheckResult("sparsity", frac <= limit, summary, gating=gating, details=details)


def _verify_mingrad(cfg, problem, consts, cache) -> CheckResult:
    cps = tuple(c for c in cfg.verify.checkpoints if c <= cfg.iterations)
    if len(cps) < 3:
        return _skip("mingrad", f"need 3 checkpoints <= K={cfg.iterations}, have {cps}")
    runs = cache.get(cfg.variant)
    failures = []
    for r in runs:
        if len(r.records) < cps[-1]:
            failures.append(f"seed={r.seed}: diverged at k={len(r.records)}")
            continue
        rep = check_min_grad_decay(r.column("grad_norm"), cps)
        if not rep.passed:
            vals = ", ".join(f"{k}:{v:.6g}" for k, v in zip(rep.checkpoints, rep.scaled_minima))
            failures.append(f"seed={r.seed}: K*min|grad|^2 = {vals}")
    summary = f"{len(runs) - len(failures)}/{len(runs)} seeds decrease over checkpoints {cps[-3:]}"
    return CheckResult("mingrad", not failures, summary, details=tuple(failures))


_VERIFIERS = {
    "descent": _verify_descent, "decay": _verify_decay, "sparsity": _verify_sparsity, "mingrad": _verify_mingrad,
}


def run_verify(cfg: RunConfig, checks: Sequence[str] = CHECKS, *, problem: Problem | None = None) -> list[CheckResult]:
    unknown = [c for c in checks if c not in _VERIFIERS]
    if unknown:
        raise ParameterError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    problem = build_problem(cfg.problem) if problem is None else problem
    consts = estimate_constants(problem)
    cache = _RunCache(cfg, problem)
    return [_VERIFIERS[name](cfg, problem, consts, cache) for name in dict.fromkeys(checks)]


def emit_report(results: Sequence[CheckResult]) -> tuple[str, int]:
    """Render results; exit 0 if every gating check passed, 1 if one failed, 2 if nothing was verified."""
    if not results or all(r.skipped for r in results):
        return "nothing verified\n", 2
    lines = []
    for r in results:
        status = "SKIP" if r.skipped else ("PASS" if r.passed else "FAIL")
        if not r.gating and not r.skipped:
            status += " (info)"
        lines.append(f"{status:<11} {r.name}: {r.summary}")
        lines.extend(f"    {d}" for d in r.details)
    failed = any(r.gating and not r.passed for r in results)
    return "\n".join(lines) + "\n", 1 if failed else 0


def _load(path: str) -> RunConfig:
    cfg = load_config(path)
    ds = cfg.problem.dataset
    if ds and not os.path.isabs(ds):
        ds = os.path.join(os.path.dirname(os.path.abspath(path)), ds)
        cfg = dataclasses.replace(cfg, problem=dataclasses.replace(cfg.problem, dataset=ds))
    return cfg


def _emit_csv(results: list[RunResult], out_path: str | None, metrics_every: int) -> None:
    if out_path in (None, "-"):
        write_csv(results, sys.stdout, metrics_every)
        return
    buf = io.StringIO()
    n = write_csv(results, buf, metrics_every)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    log.info("wrote %d rows to %s", n, out_path)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csgd", description="Communication-censored distributed SGD simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one variant over the configured seeds and write CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--variant", choices=[v.value for v in Variant])
    r.add_argument("--seed", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--out")

    c = sub.add_parser("compare", help="run sgd, csgd and lag-s with shared sampling streams")
    c.add_argument("--config", required=True)
    c.add_argument("--out")

    v = sub.add_parser("verify", help="check the descent, decay, sparsity and min-gradient guarantees")
    v.add_argument("--config", required=True)
    v.add_argument("--checks", default=",".join(CHECKS), help="comma-separated subset of " + ",".join(CHECKS))

    s = sub.add_parser("preset", help="print a preset as a config document")
    s.add_argument("name", choices=sorted(PRESETS))
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "preset":
            sys.stdout.write(render_config(preset_config(args.name)))
            return 0
        cfg = _load(args.config)
        if args.command == "run":
            if args.iters is not None:
                if args.iters < 1:
                    raise ParameterError(f"--iters must be >= 1, got {args.iters}")
                cfg = dataclasses.replace(cfg, iterations=args.iters)
            seeds = None if args.seed is None else (args.seed,)
            results = run_seeds(cfg, args.variant, seeds)
            _emit_csv(results, args.out or cfg.output, cfg.metrics_every)
            return 0
        if args.command == "compare":
            _emit_csv(run_compare(cfg), args.out or cfg.output, cfg.metrics_every)
            return 0
        checks = [c.strip() for c in args.checks.split(",") if c.strip()]
        text, code = emit_report(run_verify(cfg, checks) if checks else [])
        sys.stdout.write(text)
        return code
    except CSGDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, DivergenceError) else 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
