"""Command-line front end.

Subcommands::

    gnetrack run --scenario FILE --out DIR [--seed N] [--estimator KIND] [--c-policy P] [--xi-policy P]
    gnetrack sweep --scenario FILE --grid FILE --out DIR [--parallel N] [--seed N]
    gnetrack validate --scenario FILE
    gnetrack bounds --scenario FILE --out DIR [--seed N]
    gnetrack demo-ridehailing --out DIR [--seed N] [--horizon N]

Exit codes: 0 success, 1 configuration error or missing file, 2 the run
finished but some inner solves hit their iteration cap (or, for ``bounds``,
a bound was exceeded). The log level comes from ``GNE_LOG``
(``error``, ``warn``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .constants import drift_constants, stationary_constants, time_varying_constants
from .errors import ConfigError, GnetrackError, InadmissibleScheduleError
from .game import Game, check_symmetry, estimate_ell, potential_gap, sample_feasible
from .learning import write_feedback_log
from .orchestrator import (BoundConstants, RunTrace, average_residual, bound_report, run, running_average,
                           write_bounds, write_trace)
from .plotting import Series, line_chart, write_svg
from .ridehailing import STEPS_PER_DAY, congestion_comparison, round_strategies
from .scenarios import Scenario, load_scenario, resolve_path

logger = logging.getLogger("gnetrack")

EXIT_OK, EXIT_CONFIG, EXIT_DEGRADED = 0, 1, 2
STEP_TOL = 1e-4
SYMMETRY_TOL = 1e-6
POTENTIAL_RTOL = 1e-5

_BOUND_NAMES = {"c >= 2*ell": "c >= 2*ell (strong monotonicity of the incentivized game)",
                "alpha > 0": "alpha_positivity (c*xi < 1)",
                "xi >= 0": "xi >= 0",
                "finite": "finite parameters"}


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _configure_logging() -> None:
    level = os.environ.get("GNE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------- helpers

def residual_scale(game: Game) -> float:
    """Scale used for relative residuals: the fleet ceiling for markets, else 1."""
    market = game.metadata.get("scenario")
    return float(market.total_upper) if market is not None else 1.0


def steps_to_tolerance(trace: RunTrace, tol: float = STEP_TOL, scale: float = 1.0) -> Optional[int]:
    hit = np.flatnonzero(trace.residual / scale <= tol)
    return int(hit[0]) + 1 if hit.size else None


def bound_constants(game: Game, trace: RunTrace) -> BoundConstants:
    """Harness-side constants for the bound report (empty when the game has no quadratic structure)."""
    if game.quadratic is None:
        return BoundConstants()
    if trace.mode == "stationary":
        return stationary_constants(game, trace)
    return time_varying_constants(game, trace, drift_constants(game, trace.T))


def profits(game: Game, trace: RunTrace) -> np.ndarray:
    """Per-agent profit along the trace: revenue for markets, negated cost otherwise."""
    market = game.metadata.get("scenario")
    rows = []
    for t in range(1, trace.T + 1):
        x = trace.x[t]
        if market is not None:
            a, b, r, _ = market.params(t)
            rows.append(r * (a * x - b * x * x))
        else:
            rows.append(-game.costs(x, t))
    return np.array(rows)


def symmetry_precheck(game: Game, seed: int = 0, points: int = 3) -> float:
    rng = np.random.default_rng(seed)
    return max(check_symmetry(game, x, 1) for x in sample_feasible(game, rng, points))


def write_plots(out: Path, scenario: Scenario, trace: RunTrace, report: dict) -> None:
    game = scenario.game
    steps = trace.steps
    res = [Series("residual", steps, trace.residual),
           Series("running mean", steps[trace.tbar:], running_average(trace, trace.tbar), dashed=True)]
    for key in ("rhs_T1", "rhs_T2", "rhs_T3"):
        if key in report:
            res.append(Series("bound " + key[4:], steps[trace.tbar:][-len(report[key]):], report[key], dashed=True))
    write_svg(out / "residual.svg", line_chart(res, f"{scenario.name}: fixed-point residual", "step",
                                               "||x_t - x_(t-1)||", logy=True))
    t_all = np.arange(trace.T + 1)
    market = scenario.market
    names = market.names if market is not None else [f"agent {i + 1}" for i in range(game.N)]
    strat = [Series(names[i], t_all, trace.x[:, a.block].sum(axis=1)) for i, a in enumerate(game.agents)]
    write_svg(out / "strategies.svg", line_chart(strat, f"{scenario.name}: equilibrium strategies", "step",
                                                 "strategy"))
    total = trace.x.sum(axis=1)
    svc = [Series("total", t_all, total)]
    if market is not None:
        svc += [Series("floor", t_all, np.full(t_all.size, market.total_lower), dashed=True, color="#555555"),
                Series("ceiling", t_all, np.full(t_all.size, market.total_upper), dashed=True, color="#000000")]
    write_svg(out / "service.svg", line_chart(svc, f"{scenario.name}: total deployment", "step", "sum of strategies"))
    pr = profits(game, trace)
    prof = [Series(names[i], steps, pr[:, i]) for i in range(game.N)]
    write_svg(out / "profit.svg", line_chart(prof, f"{scenario.name}: agent profit", "step", "profit"))


def _load(args, **overrides) -> Scenario:
    return load_scenario(args.scenario, estimator=getattr(args, "estimator", None),
                         c_policy=getattr(args, "c_policy", None), xi_policy=getattr(args, "xi_policy", None),
                         seed=getattr(args, "seed", None), **overrides)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_CONFIG


def _execute(scenario: Scenario, out: Path, plots: bool = True):
    """Run a loaded scenario and write its outputs into ``out``."""
    sym = symmetry_precheck(scenario.game, scenario.config.seed)
    if sym > SYMMETRY_TOL:
        raise ConfigError(f"check_symmetry failed: Jacobian asymmetry {sym:.3e} > {SYMMETRY_TOL:g}; "
                          "the game has no potential")
    trace = run(scenario.game, scenario.config)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", trace)
    report = bound_report(trace, bound_constants(scenario.game, trace),
                          scenario.bound_names or ("T1", "T2", "T3"))
    write_bounds(out / "bounds.csv", report)
    write_feedback_log(out / "feedback.csv", trace.feedback, scenario.game.N)
    if plots:
        write_plots(out, scenario, trace, report)
    return trace, report


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    try:
        scenario = _load(args)
        trace, _ = _execute(scenario, Path(args.out))
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except InadmissibleScheduleError as exc:
        return _fail(f"inadmissible incentive schedule, violated bound {_BOUND_NAMES[exc.bound]}: {exc}")
    except GnetrackError as exc:
        return _fail(str(exc))
    scale = residual_scale(scenario.game)
    print(f"{scenario.name}: {trace.T} steps, final residual {trace.residual[-1]:.3e}, "
          f"average {average_residual(trace):.3e}, steps to {STEP_TOL:g} (relative to {scale:g}): "
          f"{steps_to_tolerance(trace, STEP_TOL, scale)}")
    n_bad = int(trace.degraded.sum())
    if n_bad:
        print(f"warning: {n_bad} degraded steps (inner solver hit its iteration cap)", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


SUMMARY_COLUMNS = ["cell", "c_policy", "xi_policy", "seed", "status", "final_residual", "avg_residual",
                   "steps_to_tol", "residual_scale", "degraded", "message"]


def _run_cell(job) -> dict:
    index, scenario_path, cell, seed, out = job
    row = {"cell": index, "c_policy": str(cell.get("c_policy", "")), "xi_policy": str(cell.get("xi_policy", "")),
           "seed": seed, "status": "ok", "final_residual": "", "avg_residual": "", "steps_to_tol": "",
           "residual_scale": "", "degraded": "", "message": ""}
    try:
        scenario = load_scenario(scenario_path, estimator=cell.get("estimator"), c_policy=cell.get("c_policy"),
                                 xi_policy=cell.get("xi_policy"), seed=seed, horizon=cell.get("horizon"))
        trace, _ = _execute(scenario, Path(out) / f"cell_{index:03d}", plots=False)
    except (GnetrackError, FileNotFoundError) as exc:
        row.update(status="failed", message=str(exc).replace("\n", " "))
        return row
    scale = residual_scale(scenario.game)
    hit = steps_to_tolerance(trace, STEP_TOL, scale)
    row.update(final_residual=repr(float(trace.residual[-1])), avg_residual=repr(average_residual(trace)),
               steps_to_tol="" if hit is None else hit, residual_scale=repr(scale),
               degraded=int(trace.degraded.sum()))
    return row


def read_grid(path) -> list:
    p = Path(path)
    if not p.exists():
        p = resolve_path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    cells = doc.get("cells") if isinstance(doc, dict) else doc
    if not isinstance(cells, list) or not cells:
        raise ConfigError(f"{p}: grid needs a non-empty 'cells' list")
    for c in cells:
        if not isinstance(c, dict) or "c_policy" not in c or "xi_policy" not in c:
            raise ConfigError(f"{p}: every cell needs c_policy and xi_policy")
    return cells


def cmd_sweep(args) -> int:
    try:
        cells = read_grid(args.grid)
        scenario_path = str(resolve_path(args.scenario))
        base = load_scenario(scenario_path).config.seed if args.seed is None else int(args.seed)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except GnetrackError as exc:
        return _fail(str(exc))
    if args.parallel < 1:
        return _fail("--parallel must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(k, scenario_path, cell, base + k, str(out)) for k, cell in enumerate(cells)]
    if args.parallel == 1:
        rows = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_run_cell, jobs))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"cell {r['cell']}: {r['c_policy']} / {r['xi_policy']} -> {r['status']} "
              f"avg {r['avg_residual']} steps_to_tol {r['steps_to_tol']} {r['message']}")
    return EXIT_OK if any(r["status"] == "ok" for r in rows) else EXIT_CONFIG


def validation_report(scenario: Scenario, points: int = 100, times: Optional[list] = None) -> list:
    """``(check, passed, detail)`` rows for the symmetry, potential, admissibility and feasibility suites."""
    game, cfg = scenario.game, scenario.config
    rng = np.random.default_rng(cfg.seed)
    if times is None:
        times = [0] if game.stationary else sorted(set(np.linspace(1, cfg.horizon, 10).astype(int).tolist()))
    rows = []
    sym = gap = 0.0
    X = sample_feasible(game, rng, points)
    for t in times:
        for x in X:
            sym = max(sym, check_symmetry(game, x, t))
            if game.potential is not None:
                G = game.pseudo_gradient(x, t)
                gap = max(gap, potential_gap(game, x, t) / (1.0 + float(np.max(np.abs(G)))))
    rows.append(("check_symmetry", sym <= SYMMETRY_TOL, f"max |J - J'| = {sym:.3e} (tol {SYMMETRY_TOL:g})"))
    if game.potential is None:
        rows.append(("potential_consistency", False, "no potential attached"))
    else:
        rows.append(("potential_consistency", gap <= POTENTIAL_RTOL,
                     f"max ||FD grad theta - G||_inf / (1 + ||G||_inf) = {gap:.3e} (tol {POTENTIAL_RTOL:g})"))
    worst = {"c >= 2*ell": (True, ""), "alpha > 0": (True, "")}
    c_ratio, cxi = np.inf, 0.0
    for t in times if not game.stationary else [1]:
        tt = max(int(t), 1)
        ell = game.declared_ell(tt)
        if ell is None:
            ell = estimate_ell(game, tt, 200, seed=cfg.seed + tt)
        c = cfg.c_policy(tt, ell)
        xi = cfg.xi_policy(tt, c)
        c_ratio = min(c_ratio, c / (2.0 * ell) if ell > 0 else np.inf)
        cxi = max(cxi, c * xi)
    worst["c >= 2*ell"] = (c_ratio >= 1.0 - 1e-12, f"min c / (2 ell) = {c_ratio:.6g}")
    worst["alpha > 0"] = (cxi < 1.0, f"max c*xi = {cxi:.6g}, min alpha = {1.0 - cxi:.6g}")
    rows.append(("admissibility (c >= 2*ell)", *worst["c >= 2*ell"]))
    rows.append(("alpha_positivity", *worst["alpha > 0"]))
    try:
        fp = game.polyhedron.feasible_point
        viol = game.polyhedron.violation(fp)
        rows.append(("feasibility", viol <= 1e-9, f"feasible point found, violation {viol:.2e}"))
    except GnetrackError as exc:
        rows.append(("feasibility", False, str(exc)))
    return rows


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        rows = validation_report(scenario, points=args.points)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except GnetrackError as exc:
        return _fail(str(exc))
    ok = True
    for name, passed, detail in rows:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_CONFIG


def cmd_bounds(args) -> int:
    try:
        scenario = _load(args)
        trace, report = _execute(scenario, Path(args.out), plots=False)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except GnetrackError as exc:
        return _fail(str(exc))
    held = True
    avg = report["avg_residual"][-1]
    for key in ("rhs_T1", "rhs_T2", "rhs_T3"):
        if key in report:
            ok = bool(avg <= report[key][-1])
            held &= ok
            print(f"{key[4:]}: average residual {avg:.4e} <= {report[key][-1]:.4e}: {'holds' if ok else 'violated'}")
    if len(report) == 2:
        print("no bound constants available for this game")
    return EXIT_OK if held and not trace.degraded.any() else EXIT_DEGRADED


def cmd_demo_ridehailing(args) -> int:
    try:
        scenario = load_scenario(args.scenario, estimator=args.estimator, seed=args.seed, horizon=args.horizon)
        if scenario.market is None:
            raise ConfigError(f"{args.scenario} is not a ridehailing scenario")
        out = Path(args.out)
        trace, _ = _execute(scenario, out)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except GnetrackError as exc:
        return _fail(str(exc))
    market = scenario.market
    cmp = congestion_comparison(trace.x[1:], market)
    t = np.arange(1, trace.T + 1)
    with open(out / "congestion.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "demand", "fleet", "speed_coordinated", "speed_naive"])
        for k in range(trace.T):
            w.writerow([t[k], repr(float(cmp["demand"][k])), repr(float(cmp["fleet"][k])),
                        repr(float(cmp["speed_coordinated"][k])), repr(float(cmp["speed_naive"][k]))])
    write_svg(out / "congestion.svg", line_chart(
        [Series("coordinated", t / STEPS_PER_DAY, cmp["speed_coordinated"]),
         Series("naive +25%", t / STEPS_PER_DAY, cmp["speed_naive"]),
         Series("10 mph", t / STEPS_PER_DAY, np.full(t.size, 10.0), dashed=True, color="#000000")],
        "average speed", "day", "mph"))
    rounding = [round_strategies(x, scenario.game.polyhedron) for x in trace.x[1:]]
    worst = max(r.max_relative_error for r in rounding)
    big = trace.x[1:] >= 500.0
    worst_big = max((float(r.relative_error[m].max()) for r, m in zip(rounding, big) if m.any()), default=0.0)
    flagged = sum(r.flagged for r in rounding)
    fleet = trace.x[1:].sum(axis=1)
    print(f"fleet range [{fleet.min():.1f}, {fleet.max():.1f}] within [{market.total_lower:.1f}, "
          f"{market.total_upper:.1f}]")
    print(f"steps to {STEP_TOL:g} relative residual: {steps_to_tolerance(trace, STEP_TOL, market.total_upper)}")
    print(f"weekday minimum speed: coordinated {cmp['min_weekday_coordinated']:.2f} mph, "
          f"naive {cmp['min_weekday_naive']:.2f} mph ({cmp['naive_intervals_below']} intervals below 10 mph)")
    print(f"max relative round-off {worst:.2e} ({worst_big:.2e} over fleets of at least 500 cars), "
          f"rounded points breaking a coupling row: {flagged}")
    return EXIT_DEGRADED if trace.degraded.any() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gnetrack", description="Equilibrium seeking with learned personalized incentives.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--estimator", choices=["oracle", "noisy_oracle", "rls", "gp"])
    r.add_argument("--c-policy", dest="c_policy")
    r.add_argument("--xi-policy", dest="xi_policy")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of incentive policies")
    s.add_argument("--scenario", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--out", default="sweep")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check the invariants of a scenario")
    v.add_argument("--scenario", required=True)
    v.add_argument("--points", type=int, default=100)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bounds", help="run a scenario and compare against the averaged-residual bounds")
    b.add_argument("--scenario", required=True)
    b.add_argument("--out", default="bounds")
    b.add_argument("--seed", type=int)
    b.add_argument("--estimator", choices=["oracle", "noisy_oracle", "rls", "gp"])
    b.set_defaults(func=cmd_bounds)

    d = sub.add_parser("demo-ridehailing", help="weekly ridehailing run with congestion comparison")
    d.add_argument("--scenario", default="ridehailing_week.json")
    d.add_argument("--out", default="ridehailing")
    d.add_argument("--seed", type=int)
    d.add_argument("--horizon", type=int)
    d.add_argument("--estimator", choices=["oracle", "noisy_oracle", "rls", "gp"])
    d.set_defaults(func=cmd_demo_ridehailing)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
