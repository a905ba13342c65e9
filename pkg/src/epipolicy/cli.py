"""Command-line interface.

Every sub-command writes its CSV tables, PNG figures (unless
``--no-plots``), the resolved ``scenario.yaml`` and a ``manifest.json``
into the ``--out`` directory.

Global flags can also be set through environment variables named
``EPIPOLICY_<FLAG>`` (``EPIPOLICY_SCENARIO``, ``EPIPOLICY_OUT``,
``EPIPOLICY_SEED``, ``EPIPOLICY_GRID``, ``EPIPOLICY_HORIZON``,
``EPIPOLICY_WORKERS``, ``EPIPOLICY_NO_PLOTS``); a flag given on the command
line wins over the environment.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import PolicyPlan, simulate_policy
from .cost import KeCalibration, evaluate, lockdown_term
from .errors import (ConfigError, DomainError, EpipolicyError, InfeasibleGridError,
                     ModelValidityError, NumericalError)
from .presets import (END_OF_2020, FRANCE_ADJUSTMENT_START, GridSpec,
                      Scenario, dump_scenario, french_policy_plan, load_grid, resolve_scenario)
from .reporting import (COMPARISON_COLUMNS, MalformedDataError, ReportError, RunManifest,
                        compare_with_reported, load_reported_csv, now_iso, write_csv,
                        write_manifest, write_trajectory, atomic_write_bytes)
from . import search

log = logging.getLogger("epipolicy")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_INFEASIBLE = 5
EXIT_IO = 6

ENV_PREFIX = "EPIPOLICY_"

PLAN_FIELDS = ("tau0", "tau1", "tau2", "r1", "r2", "r3")

EVAL_COLUMNS = ("tau0", "tau1", "tau2", "r1", "r2", "r3", "horizon", "economic_cost",
                "health_cost", "total_cost", "infected_total", "peak_icu", "feasible",
                "violated_constraint")


class UsageError(EpipolicyError):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def parse_float_list(text: str, name: str) -> list[float]:
    """Comma list (``0.4,0.6``) or ``lo:hi:n`` range; ``log:lo:hi:n`` is log-spaced."""
    text = (text or "").strip()
    if not text:
        raise UsageError(f"{name}: empty sweep specification")
    try:
        if text.startswith("log:") or text.count(":") == 2:
            logspace = text.startswith("log:")
            lo, hi, n = text.split(":")[-3:]
            lo, hi, n = float(lo), float(hi), int(n)
            if n < 1:
                raise UsageError(f"{name}: point count must be >= 1")
            if logspace:
                if lo <= 0 or hi <= 0:
                    raise UsageError(f"{name}: log range needs positive bounds")
                return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n)]
            return [float(v) for v in np.linspace(lo, hi, n)]
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"{name}: cannot parse {text!r} ({exc})") from None


def parse_mu_pairs(text: str) -> list[tuple[float, float]]:
    text = (text or "").strip()
    if not text:
        raise UsageError("--mu: empty sweep specification")
    pairs = []
    for chunk in text.split(";"):
        try:
            a, b = (float(v) for v in chunk.split(","))
        except ValueError:
            raise UsageError(f"--mu: expected 'mu1,mu2[;mu1,mu2...]', got {chunk!r}") from None
        pairs.append((a, b))
    return pairs


def parse_plan(text: str, horizon: int, r3: float | None = None,
               adjustment_start: int | None = None) -> PolicyPlan:
    """``french`` or ``tau0=..,tau1=..,tau2=..,r1=..,r2=..,r3=..``."""
    if text == "french":
        return french_policy_plan(horizon, adjustment_start=adjustment_start, r3=r3)
    kw = {}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in PLAN_FIELDS:
            raise UsageError(f"--plan: expected 'french' or {'=..,'.join(PLAN_FIELDS)}=.., got {item!r}")
        try:
            kw[key] = float(val)
        except ValueError:
            raise UsageError(f"--plan: {key} is not a number: {val!r}") from None
    missing = [k for k in PLAN_FIELDS if k not in kw]
    if missing:
        raise UsageError(f"--plan: missing {', '.join(missing)}")
    try:
        return PolicyPlan(horizon=horizon, **kw)
    except DomainError as exc:
        raise UsageError(f"--plan: {exc}") from exc


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


GLOBALS = {
    # flag: (type, default, help)
    "scenario": (str, None, "preset name (france, france-tradeoff) or scenario YAML path"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "master seed for random sampling"),
    "grid": (str, None, "search grid: coarse, full, or a grid YAML path"),
    "horizon": (int, None, "override the scenario horizon (days)"),
    "workers": (int, 1, "threads used by the grid search"),
}


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    for name, (kind, default, help_) in GLOBALS.items():
        p.add_argument(f"--{name}", type=kind, help=help_,
                       default=argparse.SUPPRESS if suppress else None)
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures",
                   default=argparse.SUPPRESS if suppress else None)
    p.add_argument("-v", "--verbose", action="count",
                   default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epipolicy", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"epipolicy {__version__}")
    _add_globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    p = cmd("simulate", "simulate one policy and write its daily trajectory")
    p.add_argument("--plan", default="french", help="'french' or tau0=..,tau1=..,tau2=..,r1=..,r2=..,r3=..")
    p.add_argument("--r3", type=float, help="adjustment target for --plan french")
    p.add_argument("--adjustment-start", type=int, help="adjustment start day for --plan french")

    p = cmd("optimize", "grid-search the cheapest feasible policy")
    p.add_argument("--alpha", type=float, help="override the trade-off weight")
    p.add_argument("--trajectory", action="store_true", help="also write the optimal trajectory")

    p = cmd("tradeoff", "optimum for each alpha: economic against health cost")
    p.add_argument("--alphas", default="log:1e-7:1e-4:16")

    p = cmd("sweep", "optimal lockdown start and duration over alpha and (mu1, mu2)")
    p.add_argument("--alphas", default="log:1e-6:1e-4:20")
    p.add_argument("--mu", default="1,1;1.41,1.3", help="mu1,mu2 pairs separated by ';'")
    p.add_argument("--t-min", type=int, help="override the minimum lockdown duration")

    p = cmd("sensitivity", "re-optimize for several R0 values")
    p.add_argument("--r0", default="2,3.5")
    p.add_argument("--fixed-ke", action="store_true",
                   help="keep the scenario K_e instead of recalibrating it for each R0")

    p = cmd("uncertainty", "bias of the optimum when R0 is misestimated")
    p.add_argument("--sigmas", default="0,0.1,0.2,0.3")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--r-range", default="2,5", help="truncation bounds lo,hi for the noisy R0")

    p = cmd("adjust", "vary the adjustment-phase target on the French prefix")
    p.add_argument("--r3", default="0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.2,1.5,2.0,2.5,3.5")
    p.add_argument("--adjustment-start", type=int, default=FRANCE_ADJUSTMENT_START)

    p = cmd("validate", "compare the model N i(t) with reported active cases")
    p.add_argument("--reported", required=True, help="CSV with header date,active_cases")
    p.add_argument("--plan", default="french")
    p.add_argument("--r3", type=float)
    p.add_argument("--adjustment-start", type=int)
    p.add_argument("--window-start", type=_date, help="first date of the summary window")
    p.add_argument("--window-end", type=_date, help="last date of the summary window")

    p = cmd("calibrate", "economic conversion factor from a reference lockdown")
    p.add_argument("--delta-gdp", type=float)
    p.add_argument("--r1-ref", type=float)
    p.add_argument("--tau1-ref", type=float)
    return parser


def _apply_env(args, environ):
    for name, (kind, default, _) in GLOBALS.items():
        if getattr(args, name, None) is None:
            raw = environ.get(ENV_PREFIX + name.upper())
            if raw is not None and raw != "":
                try:
                    setattr(args, name, kind(raw))
                except ValueError:
                    raise UsageError(f"{ENV_PREFIX}{name.upper()}: cannot parse {raw!r}") from None
            else:
                setattr(args, name, default)
    if not getattr(args, "no_plots", None):
        args.no_plots = environ.get(ENV_PREFIX + "NO_PLOTS", "").lower() in ("1", "true", "yes")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")


# ---------------------------------------------------------------------------
# run context


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, args, scenario: Scenario):
        self.args = args
        self.scenario = scenario
        self.root = Path(args.out)
        self.outputs: list[str] = []
        self.started = now_iso()

    @property
    def plots(self):
        return not self.args.no_plots

    def csv(self, name, header, rows):
        write_csv(self.root / name, header, rows)
        self.outputs.append(name)

    def trajectory(self, name, traj):
        write_trajectory(self.root / name, traj, self.scenario.cost.sigma_icu)
        self.outputs.append(name)

    def figure(self, name, fn, *a, **kw):
        if self.plots:
            fn(self.root / name, *a, **kw)
            self.outputs.append(name)

    def finish(self, seed=None):
        atomic_write_bytes(self.root / "scenario.yaml", dump_scenario(self.scenario).encode("utf-8"))
        self.outputs.append("scenario.yaml")
        arguments = {k: (v.isoformat() if isinstance(v, dt.date) else v)
                     for k, v in sorted(vars(self.args).items())}
        manifest = RunManifest(command=self.args.command, scenario=self.scenario.label,
                               scenario_sha256=self.scenario.digest(), version=__version__,
                               started=self.started, outputs=list(self.outputs), seed=seed,
                               arguments=arguments)
        write_manifest(self.root, manifest)
        for name in self.outputs:
            print(self.root / name)


def _grid_for(args, scn: Scenario, t_min: int) -> GridSpec:
    """Grid at the given minimum lockdown duration; named grids are rebuilt for it."""
    if args.grid:
        return load_grid(args.grid, t_min)
    for name, make in (("coarse", GridSpec.coarse), ("full", GridSpec.full)):
        if scn.grid == make(scn.cost.t_min):
            return make(t_min)
    return scn.grid


def _scenario(args, default_preset="france") -> Scenario:
    scn = resolve_scenario(args.scenario or default_preset)
    if args.grid:
        grid = load_grid(args.grid, scn.cost.t_min)
        if args.horizon is not None:
            grid = grid.clipped(args.horizon)
        scn = scn.replace(grid=grid)
    if args.horizon is not None:
        scn = scn.with_horizon(args.horizon)
    return scn


def _eval_row(plan, ev):
    return (plan.tau0, plan.tau1, plan.tau2, plan.r1, plan.r2, plan.r3, plan.horizon,
            ev.economic_cost, ev.health_cost, ev.total_cost, ev.infected_total, ev.peak_icu,
            ev.feasible, ev.violated_constraint or "")


def _plan_cells(plan):
    if plan is None:
        return ("",) * 6
    return (plan.tau0, plan.tau1, plan.tau2, plan.r1, plan.r2, plan.r3)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    from . import plotting
    scn = _scenario(args)
    plan = parse_plan(args.plan, scn.horizon, args.r3, args.adjustment_start)
    traj = simulate_policy(scn.params, plan, scn.drift, scn.integrator)
    ev = evaluate(plan, scn.params, scn.drift, scn.cost, scn.integrator, trajectory=traj)
    run = Run(args, scn)
    run.trajectory("trajectory.csv", traj)
    run.csv("evaluation.csv", EVAL_COLUMNS, [_eval_row(plan, ev)])
    run.figure("trajectory.png", plotting.plot_trajectory, traj, scn.cost.sigma_icu,
               scn.cost.icu_capacity, title=f"{scn.label}: {args.plan}")
    run.finish()
    return EXIT_OK


def cmd_optimize(args):
    from . import plotting
    scn = _scenario(args)
    cost = scn.cost if args.alpha is None else scn.cost.replace(alpha=args.alpha)
    res = search.grid_search(scn.grid, scn.params, scn.drift, cost, scn.integrator,
                             scn.horizon, args.workers)
    run = Run(args, scn.replace(cost=cost))
    run.csv("optimum.csv", EVAL_COLUMNS + ("alpha", "n_evaluated", "n_feasible", "n_pruned"),
            [_eval_row(res.best_plan, res.best_eval)
             + (cost.alpha, res.n_evaluated, res.n_feasible, res.n_pruned)])
    if args.trajectory or run.plots:
        traj = simulate_policy(scn.params, res.best_plan, scn.drift, scn.integrator)
        if args.trajectory:
            run.trajectory("optimal_trajectory.csv", traj)
        run.figure("optimal_trajectory.png", plotting.plot_trajectory, traj, cost.sigma_icu,
                   cost.icu_capacity, title=f"optimal policy, alpha={cost.alpha:g}")
    run.finish()
    return EXIT_OK


def _all_failed(errors, what):
    if errors and all(e is not None for e in errors):
        raise InfeasibleGridError(f"every {what} point failed: {errors[0]}")


def cmd_tradeoff(args):
    from . import plotting
    alphas = parse_float_list(args.alphas, "--alphas")
    scn = _scenario(args, default_preset="france-tradeoff")
    points = search.tradeoff_sweep(alphas, scn.grid, scn.params, scn.drift, scn.cost,
                                   scn.integrator, scn.horizon, args.workers)
    _all_failed([p.error for p in points], "tradeoff")
    run = Run(args, scn)
    run.csv("tradeoff.csv", ("alpha", "gdp_loss", "infected_total") + PLAN_FIELDS + ("error",),
            [(p.alpha, p.gdp_loss, p.infected_total) + _plan_cells(p.plan) + (p.error or "",)
             for p in points])
    if run.plots:
        ref = evaluate(french_policy_plan(scn.horizon), scn.params, scn.drift, scn.cost, scn.integrator)
        run.figure("tradeoff.png", plotting.plot_tradeoff, [p.gdp_loss for p in points],
                   [p.infected_total for p in points], [p.alpha for p in points],
                   reference=(ref.economic_cost, ref.infected_total))
    run.finish()
    return EXIT_OK


def cmd_sweep(args):
    from . import plotting
    alphas = parse_float_list(args.alphas, "--alphas")
    mus = parse_mu_pairs(args.mu)
    scn = _scenario(args)
    t_min = scn.cost.t_min if args.t_min is None else args.t_min
    cost = scn.cost.replace(t_min=t_min)
    scn = scn.replace(cost=cost, grid=_grid_for(args, scn, t_min))
    rows = search.lockdown_feature_sweep(alphas, mus, scn.grid, scn.params, scn.drift, cost,
                                         scn.integrator, scn.horizon, workers=args.workers)
    _all_failed([r.error for r in rows], "sweep")
    run = Run(args, scn)
    cols = ("alpha", "mu1", "mu2") + PLAN_FIELDS + ("economic_cost", "infected_total", "error")
    out = []
    for r in rows:
        ev = r.evaluation
        out.append((r.alpha, r.mu1, r.mu2) + _plan_cells(r.plan)
                   + ((ev.economic_cost, ev.infected_total) if ev else (None, None))
                   + (r.error or "",))
    run.csv("sweep.csv", cols, out)
    run.figure("sweep.png", plotting.plot_feature_sweep,
               [{"alpha": r.alpha, "mu1": r.mu1, "mu2": r.mu2, "tau0": r.tau0, "tau1": r.tau1}
                for r in rows])
    run.finish()
    return EXIT_OK


def cmd_sensitivity(args):
    from . import plotting
    r0s = parse_float_list(args.r0, "--r0")
    scn = _scenario(args)
    cal = None if args.fixed_ke else scn.calibration
    rows = search.r0_sensitivity(r0s, scn.grid, scn.params, scn.drift, scn.cost, scn.integrator,
                                 scn.horizon, calibration=cal, workers=args.workers)
    _all_failed([r.error for r in rows], "sensitivity")
    run = Run(args, scn)
    run.csv("sensitivity.csv",
            ("r0", "ke") + PLAN_FIELDS + ("economic_cost", "infected_total", "peak_icu", "error"),
            [(r.r0, r.ke) + _plan_cells(r.plan)
             + ((r.evaluation.economic_cost, r.evaluation.infected_total, r.evaluation.peak_icu)
                if r.evaluation else (None, None, None)) + (r.error or "",) for r in rows])
    if run.plots:
        trajs = {}
        for r in rows:
            if r.plan is not None:
                p = search._with_r0(scn.params, r.r0)
                trajs[r.r0] = simulate_policy(p, r.plan, scn.drift, scn.integrator)
        run.figure("sensitivity.png", plotting.plot_sensitivity, trajs, scn.cost.sigma_icu,
                   scn.cost.icu_capacity)
    run.finish()
    return EXIT_OK


def cmd_uncertainty(args):
    from . import plotting
    sigmas = parse_float_list(args.sigmas, "--sigmas")
    bounds = parse_float_list(args.r_range, "--r-range")
    if len(bounds) != 2:
        raise UsageError("--r-range: expected lo,hi")
    lo, hi = bounds
    scn = _scenario(args)
    rep = search.mc_r0_uncertainty(sigmas, args.samples, args.seed, lo, hi, scn.grid, scn.params,
                                   scn.drift, scn.cost, scn.integrator, scn.horizon,
                                   calibration=scn.calibration, workers=args.workers)
    run = Run(args, scn)
    run.csv("uncertainty.csv", ("sigma", "bias_tau0", "bias_r1", "n_samples", "nominal_tau0",
                                "nominal_r1"),
            [(s, bt, br, rep.n_samples, rep.nominal_tau0, rep.nominal_r1)
             for s, bt, br in zip(rep.sigma_levels, rep.bias_tau0, rep.bias_r1)])
    run.csv("uncertainty_samples.csv", ("sigma", "sample", "noise", "r0_hat", "tau0_hat",
                                        "r1_hat", "error"),
            [(u.sigma, u.index, u.noise, u.r0_hat, u.tau0_hat, u.r1_hat, u.error or "")
             for u in rep.samples])
    run.figure("uncertainty.png", plotting.plot_uncertainty, rep.sigma_levels, rep.bias_tau0,
               rep.bias_r1)
    run.finish(seed=args.seed)
    return EXIT_OK


def cmd_adjust(args):
    from . import plotting
    r3s = parse_float_list(args.r3, "--r3")
    if args.horizon is None:
        args.horizon = END_OF_2020
    scn = _scenario(args)
    prefix = french_policy_plan(scn.horizon, adjustment_start=args.adjustment_start)
    rows = search.adjustment_sweep(prefix, r3s, scn.params, scn.drift, scn.cost, scn.integrator)
    run = Run(args, scn)
    run.csv("adjust.csv", ("r3", "adjustment_start", "peak_icu", "peak_day", "feasible",
                           "max_r_eff_adjustment", "infected_total", "final_icu"),
            [(r.r3, prefix.phase_starts[3], r.peak_icu, r.peak_day, r.feasible,
              r.max_r_eff_adjustment, r.infected_total, r.final_icu) for r in rows])
    run.figure("adjust.png", plotting.plot_adjustment, {r.r3: r.trajectory for r in rows},
               scn.cost.sigma_icu, scn.cost.icu_capacity, prefix.phase_starts[3])
    run.finish()
    return EXIT_OK


def cmd_validate(args):
    from . import plotting
    scn = _scenario(args)
    series = load_reported_csv(args.reported)
    plan = parse_plan(args.plan, scn.horizon, args.r3, args.adjustment_start)
    traj = simulate_policy(scn.params, plan, scn.drift, scn.integrator)
    window = None
    if args.window_start or args.window_end:
        if not (args.window_start and args.window_end):
            raise UsageError("--window-start and --window-end go together")
        window = (args.window_start, args.window_end)
    cmp = compare_with_reported(traj, series, window)
    run = Run(args, scn)
    run.csv("comparison.csv", COMPARISON_COLUMNS, cmp.rows())
    run.csv("comparison_summary.csv", tuple(cmp.summary), [tuple(cmp.summary.values())])
    run.figure("comparison.png", plotting.plot_trajectory, traj, scn.cost.sigma_icu,
               scn.cost.icu_capacity, title="model against reported",
               reported=(cmp.days, cmp.reported))
    run.finish()
    for k, v in cmp.summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_calibrate(args):
    scn = _scenario(args)
    base = scn.calibration
    try:
        cal = KeCalibration(
            delta_gdp=args.delta_gdp if args.delta_gdp is not None else base.delta_gdp,
            r1_ref=args.r1_ref if args.r1_ref is not None else base.r1_ref,
            tau1_ref=args.tau1_ref if args.tau1_ref is not None else base.tau1_ref)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    ke = cal.ke_for(scn.params)
    check = lockdown_term(ke, scn.params, cal.r1_ref, cal.tau1_ref)
    run = Run(args, scn.replace(cost=scn.cost.replace(ke=ke), calibration=cal))
    run.csv("calibration.csv", ("delta_gdp", "r0", "delta", "r1_ref", "tau1_ref", "ke",
                                "lockdown_term"),
            [(cal.delta_gdp, scn.params.r0, scn.params.delta, cal.r1_ref, cal.tau1_ref, ke, check)])
    run.finish()
    print(f"ke: {ke!r}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "tradeoff": cmd_tradeoff,
    "sweep": cmd_sweep,
    "sensitivity": cmd_sensitivity,
    "uncertainty": cmd_uncertainty,
    "adjust": cmd_adjust,
    "validate": cmd_validate,
    "calibrate": cmd_calibrate,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, InfeasibleGridError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ReportError, MalformedDataError, OSError)):
        return EXIT_IO
    if isinstance(exc, (NumericalError, ModelValidityError)):
        return EXIT_NUMERIC
    if isinstance(exc, DomainError):
        return EXIT_USAGE
    return 1


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_env(args, os.environ if environ is None else environ)
        return COMMANDS[args.command](args)
    except EpipolicyError as exc:
        print(f"epipolicy {args.command}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"epipolicy {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
