"""Training envelopes, prediction-risk curves and solution paths for one preset.

One :class:`Experiment` holds the generated data, the iterative trace over
the preset's step-size schedule and the explicit solutions matched to it.
Trace points are aligned with the lambda grid through tau = 1 / lambda: for
every grid lambda whose 1 / lambda lies in the plotted tau range, the
recorded iterate with the nearest tau (log scale) is used, and explicit
solutions are computed at lambda = 1/(4 tau), 1/tau and the worst-case
coefficient over tau, using that iterate's exact tau.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from implicitreg.datagen import OVERPARAM_PLOTTED_COMPONENTS, GeneratedData, generate
from implicitreg.explicit import (
    RegularizedSolution,
    kl_glm_solve,
    lambda_grid,
    lambda_path_solve,
    ridge_glm_solve,
)
from implicitreg.glm_model import loss_offset, prediction_risk
from implicitreg.optimizers import IterateTrace, StepSchedule, egd_run, gd_run

log = logging.getLogger(__name__)

ENVELOPE_COLUMNS = ["tau", "implicit_obj", "explicit_obj_quarter", "explicit_obj_full", "explicit_obj_worst"]
RISK_COLUMNS = ["tau", "risk_implicit", "risk_quarter", "risk_full"]
PATH_COLUMNS = ["tau_or_invlambda", "coord_index", "value", "estimator_kind"]


@dataclass
class SolverOptions:
    max_iter: int = 500
    tol: float = 1e-10


@dataclass
class Experiment:
    data: GeneratedData
    schedule: StepSchedule
    grid: tuple
    options: SolverOptions = field(default_factory=SolverOptions)
    trace: Optional[IterateTrace] = None
    rows: Optional[list] = None  # one dict per aligned tau
    failures: List[str] = field(default_factory=list)

    @property
    def preset(self):
        return self.data.preset

    @property
    def algorithm(self) -> str:
        return self.preset.algorithm

    @property
    def theta0(self) -> np.ndarray:
        d = self.data.problem.d
        return np.zeros(d) if self.algorithm == "gd" else np.full(d, 1.0 / d)

    @property
    def worst_coefficient(self) -> float:
        """Penalty multiple of 1/tau on the envelope's upper side: 1 for gd, (d+1)/2 for egd."""
        return 1.0 if self.algorithm == "gd" else (self.data.problem.d + 1) / 2.0

    def penalty(self, theta) -> float:
        diff = np.asarray(theta) - self.theta0
        if self.algorithm == "gd":
            return float(diff @ diff)
        r = float(np.abs(diff).sum())
        return r * r

    def explicit_solve(self, lam: float, warm=None) -> RegularizedSolution:
        p = self.data.problem
        if self.algorithm == "gd":
            return ridge_glm_solve(p, lam, tol=self.options.tol, max_iter=self.options.max_iter, theta_init=warm)
        return kl_glm_solve(p, lam, tol=self.options.tol, max_iter=self.options.max_iter, theta_init=warm)


def build(data: GeneratedData, schedule: Optional[StepSchedule] = None, grid=None, options=None) -> Experiment:
    return Experiment(data, schedule or data.preset.schedule, tuple(grid or (1e-4, 1e4, 500)), options or SolverOptions())


def run_trace(exp: Experiment) -> IterateTrace:
    if exp.trace is None:
        obj = exp.data.problem.objective()
        runner = gd_run if exp.algorithm == "gd" else egd_run
        exp.trace = runner(obj, exp.theta0, exp.schedule)
    return exp.trace


def aligned_indices(exp: Experiment) -> np.ndarray:
    """Recorded trace indices matched to grid lambdas with 1/lambda in the plotted tau range."""
    trace = run_trace(exp)
    lo, hi = exp.preset.tau_range
    taus = 1.0 / lambda_grid(*exp.grid)
    taus = np.sort(taus[(taus >= lo * (1 - 1e-12)) & (taus <= hi * (1 + 1e-12))])
    idx = [trace.nearest_index(t) for t in taus]
    return np.array(sorted(set(idx)), dtype=np.int64)


def compute_rows(exp: Experiment) -> list:
    """Per aligned tau: implicit and explicit objective values and risks."""
    if exp.rows is not None:
        return exp.rows
    trace = run_trace(exp)
    p = exp.data.problem
    # report the Gaussian loss as least squares so relative comparisons are meaningful
    offset = loss_offset(p)
    base = p.objective().value
    f = lambda th: base(th) + offset  # noqa: E731
    rows = []
    warm = {"quarter": None, "full": None, "worst": None}
    coefs = {"quarter": 0.25, "full": 1.0, "worst": exp.worst_coefficient}
    for i in aligned_indices(exp):
        tau = float(trace.accumulated_time[i])
        theta = trace.iterates[i]
        row = {
            "tau": tau,
            "T": int(trace.steps[i]),
            "theta": theta,
            "implicit_obj": f(theta) + exp.penalty(theta) / (4.0 * tau),
            "risk_implicit": prediction_risk(p, theta),
        }
        for key, c in coefs.items():
            lam = c / tau
            try:
                sol = exp.explicit_solve(lam, warm[key])
            except (FloatingPointError, ValueError, np.linalg.LinAlgError) as err:
                exp.failures.append(f"tau={tau!r} lambda={lam!r}: {err}")
                row[f"explicit_obj_{key}"] = math.nan
                row[f"risk_{key}"] = math.nan
                row[f"theta_{key}"] = None
                continue
            if not sol.converged:
                exp.failures.append(f"tau={tau!r} lambda={lam!r}: not converged (residual {sol.residual:.3e})")
            warm[key] = sol.theta
            row[f"explicit_obj_{key}"] = f(sol.theta) + lam * exp.penalty(sol.theta)
            row[f"risk_{key}"] = prediction_risk(p, sol.theta)
            row[f"theta_{key}"] = sol.theta
            row[f"envelope_value_{key}"] = sol.objective_value + offset
        rows.append(row)
    for msg in exp.failures:
        log.warning("%s: %s", exp.preset.name, msg)
    exp.rows = rows
    return rows


def _fmt(v) -> str:
    return repr(float(v))


def write_envelope_csv(exp: Experiment, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENVELOPE_COLUMNS)
        for r in compute_rows(exp):
            w.writerow([_fmt(r[c]) for c in ENVELOPE_COLUMNS])


def write_risk_csv(exp: Experiment, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RISK_COLUMNS)
        for r in compute_rows(exp):
            w.writerow([_fmt(r[c]) for c in RISK_COLUMNS])


def explicit_path(exp: Experiment):
    kind = "ridge" if exp.algorithm == "gd" else "kl"
    return lambda_path_solve(exp.data.problem, kind, exp.grid, tol=exp.options.tol, max_iter=exp.options.max_iter)


def path_records(exp: Experiment) -> list:
    """(x, coordinate, value, kind) with x = tau for the iterates and 1/lambda for the explicit path."""
    trace = run_trace(exp)
    lo, hi = exp.preset.tau_range
    out = []
    for i in aligned_indices(exp):
        tau = float(trace.accumulated_time[i])
        for j, v in enumerate(trace.iterates[i]):
            out.append((tau, j, float(v), "implicit"))
    path = explicit_path(exp)
    for sol in path:
        x = 1.0 / sol.lam
        if lo * (1 - 1e-12) <= x <= hi * (1 + 1e-12):
            for j, v in enumerate(sol.theta):
                out.append((x, j, float(v), "explicit"))
    return out


def write_paths_csv(exp: Experiment, path: Path) -> list:
    recs = path_records(exp)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PATH_COLUMNS)
        for x, j, v, kind in recs:
            w.writerow([_fmt(x), j, _fmt(v), kind])
    return recs


def plotted_components(exp: Experiment) -> int:
    d = exp.data.problem.d
    return min(d, OVERPARAM_PLOTTED_COMPONENTS) if exp.preset.regime == "over" else d


def experiment_for(preset, seed: Optional[int] = None, schedule=None, grid=None, options=None) -> Experiment:
    return build(generate(preset, seed), schedule, grid, options)
