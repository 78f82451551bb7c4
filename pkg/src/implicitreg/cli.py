"""Command-line experiment driver.

Subcommands: envelope, risk, paths, checks, aggregate, data.

Settings come from, in increasing precedence: preset defaults, an INI
config file (``--config``), the environment variables IMPLICITREG_OUT and
IMPLICITREG_SEED, and command-line flags. Exit codes: 0 on success, 1 on a
config or I/O error, 2 when ``checks`` finds a failing check.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from implicitreg import experiments as ex
from implicitreg.aggregation import ModelCollection, egd_equivalence_check, gibbs_posterior, risk_gap_bound
from implicitreg.basicineq import envelope_egd, verify_trace
from implicitreg.datagen import (
    DEFAULT_SEED,
    PRESETS,
    SCHEDULES,
    ExperimentPreset,
    get_preset,
    make_rng,
    write_problem_csv,
)
from implicitreg.explicit import kl_glm_solve, lambda_grid, parse_grid
from implicitreg.optimizers import StepSchedule, StepSizeWarning
from implicitreg.riskbounds import gd_lambda_star, kl_lambda_star, ridge_lambda_star, egd_lambda_star
from implicitreg.glm_model import spectral_terms
from implicitreg.svg import line_chart

log = logging.getLogger("implicitreg")

ENV_OUT = "IMPLICITREG_OUT"
ENV_SEED = "IMPLICITREG_SEED"
ALL_CHECKS = ("basicineq", "envelope", "monotone", "equivalence", "formulas")


class ConfigError(Exception):
    """Invalid configuration or unusable output location."""


@dataclass
class RunConfig:
    preset: ExperimentPreset
    out: Path = Path("results")
    schedule: Optional[StepSchedule] = None
    lambda_grid: tuple = (1e-4, 1e4, 500)
    checks: tuple = ALL_CHECKS
    solver: ex.SolverOptions = field(default_factory=ex.SolverOptions)
    collection: Optional[Path] = None
    models: int = 20
    samples: int = 100
    delta: float = 2.0

    @property
    def seed(self) -> int:
        return self.preset.seed

    @property
    def effective_schedule(self) -> StepSchedule:
        return self.schedule or self.preset.schedule


def parse_schedule(text: str) -> StepSchedule:
    text = text.strip()
    if text in SCHEDULES:
        return SCHEDULES[text]
    try:
        return StepSchedule.parse(text)
    except ValueError as err:
        raise ConfigError(f"bad schedule {text!r}: {err}") from None


def _int(value, what: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {value!r}") from None


def _float(value, what: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None


def load_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    ini = configparser.ConfigParser()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                ini.read_file(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from None
        except configparser.Error as err:
            raise ConfigError(f"cannot parse config {args.config}: {err}") from None

    def get(section, key, default=None):
        return ini.get(section, key, fallback=default) if ini.has_section(section) else default

    preset_name = args.preset or get("data", "preset")
    try:
        if preset_name:
            preset = get_preset(preset_name)
        elif get("data", "task"):
            task = get("data", "task")
            algorithm = get("data", "algorithm", "gd")
            n = _int(get("data", "n"), "n")
            d = _int(get("data", "d"), "d")
            preset = ExperimentPreset(task, algorithm, "over" if d > n else "under", n, d, _float(get("data", "gamma"), "gamma"))
        else:
            preset = get_preset("gd-linear-under")
    except ValueError as err:
        raise ConfigError(str(err)) from None

    seed = get("run", "seed")
    if environ.get(ENV_SEED):
        seed = environ[ENV_SEED]
    if args.seed is not None:
        seed = args.seed
    preset = preset.with_seed(_int(seed, "seed") if seed is not None else preset.seed)

    out = get("run", "out", "results")
    if environ.get(ENV_OUT):
        out = environ[ENV_OUT]
    if args.out:
        out = args.out

    sched_text = args.schedule or get("run", "schedule")
    schedule = parse_schedule(sched_text) if sched_text else None

    grid_text = args.lambda_grid or get("run", "lambda_grid")
    try:
        grid = parse_grid(grid_text) if grid_text else (1e-4, 1e4, 500)
        lambda_grid(*grid)
    except ValueError as err:
        raise ConfigError(str(err)) from None

    checks_text = args.checks or get("run", "checks")
    checks = ALL_CHECKS
    if checks_text:
        checks = tuple(c.strip() for c in checks_text.split(",") if c.strip())
        unknown = set(checks) - set(ALL_CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {ALL_CHECKS}")

    solver = ex.SolverOptions(
        max_iter=_int(get("solver", "max_iter", 500), "max_iter"),
        tol=_float(get("solver", "tol", 1e-10), "tol"),
    )
    collection = getattr(args, "collection", None) or get("aggregate", "collection")
    return RunConfig(
        preset=preset,
        out=Path(out),
        schedule=schedule,
        lambda_grid=grid,
        checks=checks,
        solver=solver,
        collection=Path(collection) if collection else None,
        models=_int(get("aggregate", "models", 20), "models"),
        samples=_int(get("aggregate", "samples", 100), "samples"),
        delta=_float(get("aggregate", "delta", 2.0), "delta"),
    )


_CACHE: dict = {}


def experiment(config: RunConfig) -> ex.Experiment:
    """Experiment for a config, shared across subcommands run in one process."""
    key = (config.preset, config.effective_schedule.format(), config.lambda_grid, config.solver.max_iter, config.solver.tol)
    if key not in _CACHE:
        _CACHE.clear()
        _CACHE[key] = ex.experiment_for(config.preset, None, config.effective_schedule, config.lambda_grid, config.solver)
    return _CACHE[key]


def _outdir(config: RunConfig) -> Path:
    try:
        config.out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {config.out}: {err}") from None
    return config.out


def _column(rows, key):
    return np.array([r[key] for r in rows], dtype=float)


def run_envelope(config: RunConfig) -> List[Path]:
    exp = experiment(config)
    out = _outdir(config)
    name = config.preset.name
    csv_path = out / f"{name}_envelope.csv"
    ex.write_envelope_csv(exp, csv_path)
    rows = ex.compute_rows(exp)
    tau = _column(rows, "tau")
    worst_label = "explicit, lambda=1/tau" if exp.algorithm == "gd" else "explicit, lambda=(d+1)/(2 tau)"
    series = [
        ("implicit", tau, _column(rows, "implicit_obj")),
        ("explicit, lambda=1/(4 tau)", tau, _column(rows, "explicit_obj_quarter")),
        ("explicit, lambda=1/tau", tau, _column(rows, "explicit_obj_full")),
    ]
    if exp.algorithm == "egd":
        series.append((worst_label, tau, _column(rows, "explicit_obj_worst")))
    svg_path = out / f"{name}_envelope.svg"
    line_chart(svg_path, series, config.preset.tau_range, title=f"{name}: training envelope", ylabel="loss + penalty")
    return [csv_path, svg_path]


def run_risk(config: RunConfig) -> List[Path]:
    exp = experiment(config)
    out = _outdir(config)
    name = config.preset.name
    csv_path = out / f"{name}_risk.csv"
    ex.write_risk_csv(exp, csv_path)
    rows = ex.compute_rows(exp)
    tau = _column(rows, "tau")
    svg_path = out / f"{name}_risk.svg"
    line_chart(
        svg_path,
        [
            ("implicit", tau, _column(rows, "risk_implicit")),
            ("explicit, lambda=1/(4 tau)", tau, _column(rows, "risk_quarter")),
            ("explicit, lambda=1/tau", tau, _column(rows, "risk_full")),
        ],
        config.preset.tau_range,
        title=f"{name}: prediction risk",
        ylabel="risk",
    )
    return [csv_path, svg_path]


def run_paths(config: RunConfig) -> List[Path]:
    exp = experiment(config)
    out = _outdir(config)
    name = config.preset.name
    csv_path = out / f"{name}_paths.csv"
    recs = ex.write_paths_csv(exp, csv_path)
    shown = ex.plotted_components(exp)
    files = [csv_path]
    for kind in ("implicit", "explicit"):
        series = []
        for j in range(shown):
            pts = [(x, v) for x, jj, v, k in recs if k == kind and jj == j]
            xs, vs = zip(*pts) if pts else ((), ())
            series.append((f"coord {j}", xs, vs))
        svg_path = out / f"{name}_paths_{kind}.svg"
        xlabel = "tau" if kind == "implicit" else "1/lambda"
        line_chart(svg_path, series, config.preset.tau_range, title=f"{name}: {kind} path", xlabel=xlabel, legend=False)
        files.append(svg_path)
    return files


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _reference_points(exp: ex.Experiment, rows) -> np.ndarray:
    d = exp.data.problem.d
    rng = make_rng(exp.preset.seed, 99)
    pts = [r[k] for r in rows[:: max(1, len(rows) // 20)] for k in ("theta_quarter", "theta_full") if r.get(k) is not None]
    pts = pts[:30]
    if exp.algorithm == "gd":
        scale = max(1.0, float(np.abs(exp.data.theta_true).max()))
        pts += list(rng.uniform(-scale, scale, size=(19, d)))
    else:
        pts += list(rng.dirichlet(np.ones(d), size=19))
    pts.append(exp.data.theta_true)
    return np.array(pts[:50])


def _check_basicineq(config, exp) -> CheckResult:
    rows = ex.compute_rows(exp)
    ledger = verify_trace(exp.trace, exp.data.problem.objective(), reference_points=_reference_points(exp, rows))
    ledger.to_csv(_outdir(config) / f"{config.preset.name}_basicineq.csv")
    return CheckResult("basicineq", ledger.passed, ledger.summary())


def _check_envelope(config, exp) -> CheckResult:
    rows = ex.compute_rows(exp)
    if exp.algorithm == "gd":
        bad = 0
        for r in rows:
            lo, mid, up = r.get("envelope_value_quarter", math.nan), r["implicit_obj"], r.get("envelope_value_full", math.nan)
            if not (lo <= mid + 1e-7 and mid <= up + 1e-7):
                bad += 1
        return CheckResult("envelope", bad == 0, f"{len(rows) - bad}/{len(rows)} rows ordered")
    trace = exp.trace
    steps = trace.steps[trace.steps > 0]
    picks = np.unique(np.geomspace(steps[0], steps[-1], 10).round().astype(np.int64))
    picks = [int(steps[np.argmin(np.abs(steps - t))]) for t in picks]
    obj = exp.data.problem.objective()
    kl = lambda lam: kl_glm_solve(exp.data.problem, lam)  # noqa: E731
    fails = [t for t in sorted(set(picks)) if not envelope_egd(obj, trace, t, kl_solver=kl).holds()]
    return CheckResult("envelope", not fails, f"{len(set(picks)) - len(fails)}/{len(set(picks))} checkpoints hold")


def _check_monotone(config, exp) -> CheckResult:
    vals = exp.trace.objective_values
    rise = float(np.max(np.diff(vals), initial=0.0))
    path = ex.explicit_path(exp)
    ok = rise <= 1e-10 * max(1.0, abs(vals[0])) and path.is_monotone()
    return CheckResult("monotone", ok, f"largest objective rise along trace {rise:.2e}; path violation {path.monotonicity_violation():.2e}")


def _check_equivalence(config, exp) -> CheckResult:
    rng = make_rng(config.seed, 98)
    worst = 0.0
    for _ in range(20):
        coll = ModelCollection(rng.uniform(0, 1, int(rng.integers(2, 40))))
        worst = max(worst, egd_equivalence_check(coll, float(rng.uniform(0.01, 5)), int(rng.integers(1, 300))))
    return CheckResult("equivalence", worst <= 1e-10, f"max deviation {worst:.2e}")


def _check_formulas(config, exp) -> CheckResult:
    p = exp.data.problem
    spec = spectral_terms(p.design)
    r = gd_lambda_star(spec, 1.0, p.n, 2.0, 1.0) / ridge_lambda_star(spec, 1.0, p.n, 2.0, 1.0)
    k = kl_lambda_star(1.0, p.n, p.d, 2.0, 1.0) / egd_lambda_star(1.0, p.n, p.d, 2.0, 1.0)
    ok = abs(r - 2.0) <= 1e-12 and abs(k - 1.0) <= 1e-12
    return CheckResult("formulas", ok, f"gd/ridge lambda ratio {r!r}; kl/egd lambda ratio {k!r}")


_CHECKS: dict = {
    "basicineq": _check_basicineq,
    "envelope": _check_envelope,
    "monotone": _check_monotone,
    "equivalence": _check_equivalence,
    "formulas": _check_formulas,
}


def run_checks(config: RunConfig) -> List[CheckResult]:
    exp = experiment(config)
    ex.run_trace(exp)
    return [_CHECKS[name](config, exp) for name in config.checks]


def run_aggregate(config: RunConfig) -> List[Path]:
    """Exponential weights over a model collection along the lambda grid."""
    out = _outdir(config)
    if config.collection is not None:
        try:
            coll = ModelCollection.from_csv(config.collection)
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot load collection {config.collection}: {err}") from None
    else:
        rng = make_rng(config.seed, 97)
        means = rng.uniform(0.2, 0.8, config.models)
        emp = rng.binomial(config.samples, means) / config.samples
        coll = ModelCollection(emp, means)
    has_pop = coll.population_risks is not None
    best = int(np.argmin(coll.population_risks if has_pop else coll.empirical_risks))
    ref = np.zeros(coll.size)
    ref[best] = 1.0
    path = out / "aggregate.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "expected_empirical_risk", "expected_population_risk", "gap_to_best", "bound_gibbs", "bound_egd", "egd_deviation"])
        for lam in lambda_grid(*config.lambda_grid):
            wts = gibbs_posterior(coll, lam)
            T = 10
            dev = egd_equivalence_check(coll, 1.0 / (lam * T), T)
            if has_pop:
                pop = float(wts @ coll.population_risks)
                gap = pop - float(coll.population_risks[best])
                bg, be = risk_gap_bound(coll, "gibbs", lam, ref), risk_gap_bound(coll, "egd", lam, ref)
            else:
                pop = gap = bg = be = math.nan
            w.writerow([repr(float(v)) for v in (lam, wts @ coll.empirical_risks, pop, gap, bg, be, dev)])
    return [path]


def run_data(config: RunConfig) -> List[Path]:
    out = _outdir(config)
    data = experiment(config).data
    path = out / f"{config.preset.name}_problem.csv"
    theta_path = write_problem_csv(data, path)
    return [path, theta_path]


COMMANDS: dict = {
    "envelope": run_envelope,
    "risk": run_risk,
    "paths": run_paths,
    "aggregate": run_aggregate,
    "data": run_data,
}


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors: exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="implicitreg", description="Implicit versus explicit regularization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and solver warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("envelope", "risk", "paths", "checks", "aggregate", "data"):
        p = sub.add_parser(name)
        p.add_argument("--preset", help=f"named data preset: {', '.join(sorted(PRESETS))}")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
        p.add_argument("--out", help="output directory")
        p.add_argument("--schedule", help="schedule name or eta:count,eta:count,...")
        p.add_argument("--lambda-grid", dest="lambda_grid", help="min:max:count")
        p.add_argument("--checks", help=f"comma list from {','.join(ALL_CHECKS)}")
        if name == "aggregate":
            p.add_argument("--collection", help="CSV with model_id, empirical_risk[, population_risk, prior_weight]")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", StepSizeWarning)
    try:
        config = load_config(args)
        if args.command == "checks":
            results = run_checks(config)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 2
        for path in COMMANDS[args.command](config):
            print(path)
        return 0
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
