"""Explicitly regularized estimators and regularization paths.

* ridge-GLM: min l(theta) + lam ||theta - anchor||^2 (anchor 0 by default),
  damped Newton with the exact Hessian.
* KL-regularized GLM: min l(theta) + lam KL(theta, z) over the simplex,
  Newton on the optimality system in log coordinates with an entropic
  fallback step.
* lasso: min ||Y - X theta||^2 / (2n) + lam ||theta||_1 by cyclic
  coordinate descent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from implicitreg.glm_model import POISSON_CLAMP, GlmProblem, SaturationError, loss, loss_gradient, loss_hessian
from implicitreg.optimizers import Objective, soft_threshold

DEFAULT_GRID = (1e-4, 1e4, 500)
LOG_FLOOR = -700.0  # log-coordinates below this count as off the support
MONOTONE_TOL = 1e-8
MAX_HALVINGS = 200  # enough to shrink a 1e20-sized Newton step to below 1e-40


@dataclass
class RegularizedSolution:
    kind: str
    lam: float
    theta: np.ndarray
    objective_value: float  # loss + lam * penalty
    penalty_value: float
    converged: bool
    iterations: int
    residual: float  # gradient norm (ridge), KKT spread (kl), KKT violation (lasso)
    info: dict = field(default_factory=dict)

    @property
    def loss_value(self) -> float:
        return self.objective_value - self.lam * self.penalty_value


def _saturation_info(problem, theta) -> dict:
    """For Poisson, the largest linear predictor and whether it passed the reporting threshold."""
    if not isinstance(problem, GlmProblem) or problem.family.kind != "poisson":
        return {}
    top = float((problem.x @ theta).max())
    return {"max_predictor": top, "saturated": top > POISSON_CLAMP}


def _safe_loss(problem: GlmProblem, theta) -> float:
    try:
        return loss(problem, theta)
    except SaturationError:
        return math.inf


def ridge_glm_solve(
    problem: GlmProblem,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    anchor=None,
    theta_init=None,
) -> RegularizedSolution:
    """Minimize l(theta) + lam ||theta - anchor||^2 by damped Newton.

    Steps are halved until the objective decreases; trial points whose
    Poisson predictor would overflow are rejected the same way. Converged
    means the gradient norm reached ``tol``.
    """
    if not lam >= 0:
        raise ValueError("lam must be nonnegative")
    d = problem.d
    a = np.zeros(d) if anchor is None else np.asarray(anchor, dtype=float)
    theta = a.copy() if theta_init is None else np.array(theta_init, dtype=float)

    def obj(th):
        diff = th - a
        return _safe_loss(problem, th) + lam * float(diff @ diff)

    f = obj(theta)
    if not math.isfinite(f):
        theta, f = a.copy(), obj(a)
    gnorm = math.inf
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        g = loss_gradient(problem, theta) + 2.0 * lam * (theta - a)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            it -= 1
            break
        h = loss_hessian(problem, theta)
        h[np.diag_indices(d)] += 2.0 * lam
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        s = 1.0
        accepted = False
        # once the predicted decrease is below rounding, take the full step
        tiny = float(g @ step) <= 1e-13 * max(1.0, abs(f))
        for _ in range(MAX_HALVINGS):
            trial = theta - s * step
            ft = obj(trial)
            if ft <= f or (tiny and math.isfinite(ft)):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            stalled = True
            break
        theta, f = trial, ft
    else:
        g = loss_gradient(problem, theta) + 2.0 * lam * (theta - a)
        gnorm = float(np.linalg.norm(g))
    diff = theta - a
    return RegularizedSolution(
        kind="ridge",
        lam=float(lam),
        theta=theta,
        objective_value=f,
        penalty_value=float(diff @ diff),
        converged=gnorm <= tol,
        iterations=it,
        residual=gnorm,
        info={"stalled": stalled, **_saturation_info(problem, theta)},
    )


def ridge_closed_form(x, y, lam: float) -> np.ndarray:
    """(X^T X / n + 2 lam I)^{-1} X^T y / n, the Gaussian ridge solution."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    return np.linalg.solve(x.T @ x / n + 2.0 * lam * np.eye(d), x.T @ np.asarray(y, dtype=float) / n)


def _kl(u_log: np.ndarray, theta: np.ndarray, log_z: np.ndarray) -> float:
    return float(theta @ (u_log - log_z))


def kl_glm_solve(
    problem: Union[GlmProblem, Objective],
    lam: float,
    anchor=None,
    tol: float = 1e-10,
    max_iter: int = 500,
    theta_init=None,
    hessian: Optional[Callable] = None,
) -> RegularizedSolution:
    """Minimize f(theta) + lam KL(theta, anchor) over the probability simplex.

    ``problem`` is a GLM or a bare Objective; for an Objective pass
    ``hessian`` (omit it for linear f, whose Hessian is zero). The iterate
    is kept in log coordinates u = log theta so tiny weights never
    underflow. The stopping residual is lam times the spread of
    log(theta / z) + grad f(theta) / lam over the support; it is compared
    with tol * max(1, lam) because the log coordinates carry rounding error
    of relative size 1e-16 that the factor lam amplifies.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if isinstance(problem, GlmProblem):
        d = problem.d
        f_val = lambda th: _safe_loss(problem, th)  # noqa: E731
        f_grad = lambda th: loss_gradient(problem, th)  # noqa: E731
        f_hess = lambda th: loss_hessian(problem, th)  # noqa: E731
    else:
        f_val, f_grad = problem.value, problem.gradient
        d = None
        f_hess = hessian
    z = None if anchor is None else np.asarray(anchor, dtype=float)
    if theta_init is not None:
        d = len(theta_init) if d is None else d
    if d is None:
        if z is None:
            raise ValueError("dimension unknown: pass anchor or theta_init")
        d = z.shape[0]
    if z is None:
        z = np.full(d, 1.0 / d)
    if np.any(z <= 0) or abs(z.sum() - 1.0) > 1e-9:
        raise ValueError("anchor must be a strictly positive point of the simplex")
    log_z = np.log(z)
    if theta_init is None:
        u = log_z.copy()
    else:
        t0 = np.asarray(theta_init, dtype=float)
        u = np.log(np.maximum(t0, 1e-300))
    u -= logsumexp(u)

    def state(u):
        th = np.exp(u)
        fv = f_val(th)
        F = fv + lam * _kl(u, th, log_z) if math.isfinite(fv) else math.inf
        return th, F

    def residual(u, th):
        r = u - log_z + f_grad(th) / lam
        on = u > LOG_FLOOR
        spread = float(r[on].max() - r[on].min())
        return r, spread

    tol_eff = tol * max(1.0, lam)
    theta, F = state(u)
    r, spread = residual(u, theta)
    it = 0
    for it in range(1, max_iter + 1):
        if lam * spread <= tol_eff:
            it -= 1
            break
        moved = False
        if f_hess is not None or not isinstance(problem, GlmProblem):
            h = f_hess(theta) if f_hess is not None else np.zeros((d, d))
            c0 = -float(theta @ r)
            big = np.zeros((d + 1, d + 1))
            big[:d, :d] = np.eye(d) + h * (theta / lam)[None, :]
            big[:d, d] = 1.0
            big[d, :d] = theta
            rhs = np.concatenate([-(r + c0), [0.0]])
            try:
                du = np.linalg.solve(big, rhs)[:d]
            except np.linalg.LinAlgError:
                du = None
            if du is not None and np.all(np.isfinite(du)):
                s = 1.0
                near = lam * spread <= 1e-6
                for _ in range(40):
                    un = u + s * du
                    un -= logsumexp(un)
                    tn, Fn = state(un)
                    if math.isfinite(Fn):
                        rn, sn = residual(un, tn)
                        flat = Fn <= F + 1e-13 * max(1.0, abs(F))
                        if Fn < F or (flat and sn < spread) or (near and s == 1.0 and sn < spread):
                            u, theta, F, r, spread = un, tn, Fn, rn, sn
                            moved = True
                            break
                    s *= 0.5
        if not moved:
            # entropic step on f + lam KL with backtracking on the step size
            g = f_grad(theta)
            eta = 1.0 / lam
            for _ in range(60):
                un = (1 - eta * lam) * u + eta * lam * log_z - eta * g
                un -= logsumexp(un)
                tn, Fn = state(un)
                if Fn <= F:
                    break
                eta *= 0.5
            else:
                break
            u, theta, F = un, tn, Fn
            r, spread = residual(u, theta)
    return RegularizedSolution(
        kind="kl",
        lam=float(lam),
        theta=theta,
        objective_value=F,
        penalty_value=_kl(u, theta, log_z),
        converged=lam * spread <= tol_eff,
        iterations=it,
        residual=lam * spread,
        info={"log_theta": u, **_saturation_info(problem, theta)},
    )


def lasso_objective(problem: GlmProblem, theta, lam: float) -> float:
    theta = np.asarray(theta, dtype=float)
    res = problem.response - problem.x @ theta
    return float(res @ res) / (2.0 * problem.n) + lam * float(np.abs(theta).sum())


def elastic_net_objective(problem: GlmProblem, theta, lambda1: float, lambda2: float) -> float:
    """||Y - X theta||^2 / (2n) + lambda1 ||theta||_1 + lambda2 ||theta||_2^2."""
    theta = np.asarray(theta, dtype=float)
    return lasso_objective(problem, theta, lambda1) + lambda2 * float(theta @ theta)


def lasso_kkt_violation(problem: GlmProblem, theta, lam: float) -> float:
    """Largest violation of the lasso subgradient conditions."""
    theta = np.asarray(theta, dtype=float)
    c = problem.x.T @ (problem.response - problem.x @ theta) / problem.n
    on = theta != 0
    v_on = np.abs(c[on] - lam * np.sign(theta[on]))
    v_off = np.maximum(np.abs(c[~on]) - lam, 0.0)
    return float(max(v_on.max(initial=0.0), v_off.max(initial=0.0)))


def lasso_solve(
    problem: GlmProblem,
    lam: float,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    theta_init=None,
) -> RegularizedSolution:
    """Cyclic coordinate descent for the lasso; Gaussian family only."""
    if problem.family.kind != "gaussian":
        raise ValueError("lasso_solve needs the gaussian family")
    if not lam >= 0:
        raise ValueError("lam must be nonnegative")
    x, y, n = problem.x, problem.response, problem.n
    d = problem.d
    theta = np.zeros(d) if theta_init is None else np.array(theta_init, dtype=float)
    col_sq = (x**2).sum(0) / n
    res = y - x @ theta
    viol = lasso_kkt_violation(problem, theta, lam)
    sweep = 0
    for sweep in range(1, max_iter + 1):
        if viol <= tol:
            sweep -= 1
            break
        for j in range(d):
            if col_sq[j] == 0:
                continue
            old = theta[j]
            rho = x[:, j] @ res / n + col_sq[j] * old
            new = float(soft_threshold(rho, lam)) / col_sq[j]
            if new != old:
                res -= x[:, j] * (new - old)
                theta[j] = new
        if sweep % 10 == 0:
            res = y - x @ theta
        viol = lasso_kkt_violation(problem, theta, lam)
    return RegularizedSolution(
        kind="lasso",
        lam=float(lam),
        theta=theta,
        objective_value=lasso_objective(problem, theta, lam),
        penalty_value=float(np.abs(theta).sum()),
        converged=viol <= tol,
        iterations=sweep,
        residual=viol,
    )


def lambda_grid(lo: float = DEFAULT_GRID[0], hi: float = DEFAULT_GRID[1], count: int = DEFAULT_GRID[2]) -> np.ndarray:
    if not (0 < lo <= hi) or count < 1:
        raise ValueError("grid needs 0 < lo <= hi and count >= 1")
    if count == 1:
        return np.array([float(lo)])
    return np.logspace(math.log10(lo), math.log10(hi), count)


def parse_grid(text: str) -> tuple:
    """Parse 'min:max:count'."""
    try:
        lo, hi, count = text.split(":")
        return float(lo), float(hi), int(count)
    except ValueError:
        raise ValueError(f"grid must look like min:max:count, got {text!r}") from None


@dataclass
class LambdaPath:
    """Solutions ordered by increasing lambda."""

    solutions: List[RegularizedSolution]

    def __len__(self) -> int:
        return len(self.solutions)

    def __getitem__(self, i) -> RegularizedSolution:
        return self.solutions[i]

    def __iter__(self):
        return iter(self.solutions)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.solutions])

    @property
    def objective_values(self) -> np.ndarray:
        return np.array([s.objective_value for s in self.solutions])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.solutions])

    @property
    def all_converged(self) -> bool:
        return all(s.converged for s in self.solutions)

    def monotonicity_violation(self) -> float:
        """Largest decrease of the regularized objective as lambda increases (0 if monotone)."""
        v = self.objective_values
        if len(v) < 2:
            return 0.0
        return float(max(0.0, -(np.diff(v)).min()))

    def is_monotone(self, tol: float = MONOTONE_TOL) -> bool:
        return self.monotonicity_violation() <= tol

    def to_csv(self, path: Union[str, Path]) -> None:
        d = len(self.solutions[0].theta) if self.solutions else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "objective", "penalty"] + [f"theta_{j}" for j in range(d)] + ["converged"])
            for s in self.solutions:
                w.writerow(
                    [repr(s.lam), repr(float(s.objective_value)), repr(float(s.penalty_value))]
                    + [repr(float(v)) for v in s.theta]
                    + [int(s.converged)]
                )


_SOLVERS = {"ridge": ridge_glm_solve, "kl": kl_glm_solve, "lasso": lasso_solve}


def lambda_path_solve(
    problem: GlmProblem,
    solver_kind: str,
    grid: Union[Sequence[float], tuple, str, None] = None,
    **solver_options,
) -> LambdaPath:
    """Solve along a lambda grid, warm starting from larger to smaller lambda.

    ``grid`` is (min, max, count) for a log-spaced grid, a 'min:max:count'
    string, or an explicit array of lambdas. A point that fails to converge
    is kept with its flag cleared; the path continues.
    """
    if solver_kind not in _SOLVERS:
        raise ValueError(f"unknown solver {solver_kind!r}; expected one of {sorted(_SOLVERS)}")
    if grid is None:
        lams = lambda_grid()
    elif isinstance(grid, str):
        lams = lambda_grid(*parse_grid(grid))
    elif isinstance(grid, tuple) and len(grid) == 3 and isinstance(grid[2], (int, np.integer)):
        lams = lambda_grid(*grid)
    else:
        lams = np.sort(np.asarray(grid, dtype=float))
    solve = _SOLVERS[solver_kind]
    out = []
    warm = None
    for lam in lams[::-1]:
        sol = solve(problem, float(lam), theta_init=warm, **solver_options)
        out.append(sol)
        if np.all(np.isfinite(sol.theta)):
            warm = sol.theta
    return LambdaPath(out[::-1])
