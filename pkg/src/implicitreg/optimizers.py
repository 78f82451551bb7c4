"""First-order iterative algorithms with trace recording.

Every runner takes a step-size schedule made of constant phases and returns
an :class:`IterateTrace` holding iterates at a subset of iterations together
with the accumulated step size tau_t = eta_0 + ... + eta_{t-1}.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from implicitreg.geometry import (
    BURG,
    EUCLIDEAN,
    NEGATIVE_ENTROPY,
    BregmanGeometry,
    DomainError,
    entropic_step,
    project_ball,
)

FULL_RECORD_UNTIL = 100
GEOMETRIC_GROWTH = 0.01


class StepSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Objective:
    """A differentiable objective given by value and gradient callables."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = "objective"

    def __call__(self, theta) -> float:
        return self.value(theta)


def quadratic_objective(hessian, linear, constant: float = 0.0) -> Objective:
    """f(theta) = theta^T H theta / 2 - linear^T theta + constant."""
    h = np.asarray(hessian, dtype=float)
    c = np.asarray(linear, dtype=float)
    return Objective(
        value=lambda th: float(0.5 * th @ h @ th - c @ th + constant),
        gradient=lambda th: h @ th - c,
        name="quadratic",
    )


def least_squares_objective(x, y) -> Objective:
    """g(theta) = ||y - X theta||^2 / (2n)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]

    def value(th):
        r = y - x @ th
        return float(r @ r) / (2.0 * n)

    return Objective(value, lambda th: -x.T @ (y - x @ th) / n, name="least-squares")


def linear_objective(c) -> Objective:
    c = np.asarray(c, dtype=float)
    return Objective(lambda th: float(c @ th), lambda th: c.copy(), name="linear")


@dataclass(frozen=True)
class StepSchedule:
    """Ordered phases of (step size, iteration count)."""

    phases: tuple

    def __init__(self, phases: Sequence):
        ph = []
        for item in phases:
            eta, count = item
            eta = float(eta)
            if isinstance(count, float):
                if not count.is_integer():
                    raise ValueError(f"iteration count must be an integer, got {count}")
            count = int(count)
            if not (eta > 0 and math.isfinite(eta)):
                raise ValueError(f"step size must be positive and finite, got {eta}")
            if count < 1:
                raise ValueError(f"iteration count must be >= 1, got {count}")
            ph.append((eta, count))
        if not ph:
            raise ValueError("schedule needs at least one phase")
        object.__setattr__(self, "phases", tuple(ph))

    @classmethod
    def constant(cls, eta: float, iterations: int) -> "StepSchedule":
        return cls([(eta, iterations)])

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        """Parse ``"eta:count,eta:count,..."``."""
        phases = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                eta, count = chunk.split(":")
                count_f = float(count)
            except ValueError:
                raise ValueError(f"bad schedule phase {chunk!r}; expected eta:count") from None
            phases.append((float(eta), count_f))
        return cls(phases)

    def format(self) -> str:
        return ",".join(f"{eta:g}:{count}" for eta, count in self.phases)

    @property
    def total_iterations(self) -> int:
        return sum(c for _, c in self.phases)

    @property
    def max_step(self) -> float:
        return max(eta for eta, _ in self.phases)

    def step_sizes(self) -> Iterator[float]:
        for eta, count in self.phases:
            for _ in range(count):
                yield eta

    def eta_at(self, t: int) -> float:
        for eta, count in self.phases:
            if t < count:
                return eta
            t -= count
        raise IndexError("iteration beyond schedule")

    def accumulated_time(self, t: int) -> float:
        """Sum of the first t step sizes."""
        if t < 0 or t > self.total_iterations:
            raise IndexError(f"t={t} outside [0, {self.total_iterations}]")
        tau = 0.0
        for eta, count in self.phases:
            if t <= count:
                return tau + t * eta
            tau += count * eta
            t -= count
        return tau

    def phase_boundaries(self) -> list:
        out, t = [], 0
        for _, count in self.phases:
            t += count
            out.append(t)
        return out


@dataclass
class IterateTrace:
    steps: np.ndarray
    iterates: np.ndarray
    objective_values: np.ndarray
    accumulated_time: np.ndarray
    schedule: StepSchedule
    algorithm_tag: str
    geometry: Optional[BregmanGeometry] = None
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_theta(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def final_objective(self) -> float:
        return float(self.objective_values[-1])

    @property
    def theta0(self) -> np.ndarray:
        return self.iterates[0]

    def index_of(self, t: int) -> int:
        i = int(np.searchsorted(self.steps, t))
        if i >= len(self.steps) or self.steps[i] != t:
            raise KeyError(f"iteration {t} was not recorded")
        return i

    def theta_at(self, t: int) -> np.ndarray:
        return self.iterates[self.index_of(t)]

    def nearest_index(self, tau: float) -> int:
        """Recorded index whose tau is closest to ``tau`` on a log scale."""
        taus = self.accumulated_time
        pos = taus > 0
        if not np.any(pos):
            return 0
        cand = np.flatnonzero(pos)
        return int(cand[np.argmin(np.abs(np.log(taus[cand]) - math.log(tau)))])

    def to_csv(self, path: Union[str, Path], include_theta: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t", "tau", "objective"]
            if include_theta:
                head += [f"theta_{j}" for j in range(self.iterates.shape[1])]
            w.writerow(head)
            for k in range(len(self.steps)):
                row = [int(self.steps[k]), repr(float(self.accumulated_time[k])), repr(float(self.objective_values[k]))]
                if include_theta:
                    row += [repr(float(v)) for v in self.iterates[k]]
                w.writerow(row)


def _check_steps(schedule: StepSchedule, smoothness: Optional[float], alpha: float = 1.0) -> None:
    if smoothness is None:
        warnings.warn("step sizes not validated: no smoothness constant supplied", StepSizeWarning, stacklevel=3)
        return
    limit = alpha / smoothness
    if schedule.max_step > limit * (1 + 1e-12):
        raise ValueError(f"step size {schedule.max_step:g} exceeds alpha/L = {limit:g}")


def _run(step, value, gradient, theta0, schedule, tag, record, geometry=None, domain_check=None) -> IterateTrace:
    theta = np.array(theta0, dtype=float, copy=True)
    steps = [0]
    thetas = [theta.copy()]
    vals = [value(theta)]
    taus = [0.0]
    every = record if isinstance(record, int) and not isinstance(record, bool) else None
    if record not in ("geometric", "all") and every is None:
        raise ValueError(f"unknown record mode {record!r}")
    if every is not None and every < 1:
        raise ValueError("record stride must be >= 1")
    t = 0
    base = 0.0
    last_tau = 0.0
    for eta, count in schedule.phases:
        for k in range(count):
            g = gradient(theta)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient at iteration {t}")
            theta = step(theta, g, eta, t)
            t += 1
            tau = base + (k + 1) * eta
            if domain_check is not None:
                domain_check(theta, t)
            if record == "all":
                keep = True
            elif every is not None:
                keep = t % every == 0 or k == count - 1
            else:
                keep = t <= FULL_RECORD_UNTIL or tau >= last_tau * (1 + GEOMETRIC_GROWTH) or k == count - 1
            if keep:
                steps.append(t)
                thetas.append(theta.copy())
                vals.append(value(theta))
                taus.append(tau)
                last_tau = tau
        base += count * eta
    return IterateTrace(
        steps=np.array(steps, dtype=np.int64),
        iterates=np.array(thetas),
        objective_values=np.array(vals, dtype=float),
        accumulated_time=np.array(taus, dtype=float),
        schedule=schedule,
        algorithm_tag=tag,
        geometry=geometry,
    )


def _as_schedule(schedule) -> StepSchedule:
    if isinstance(schedule, StepSchedule):
        return schedule
    if isinstance(schedule, str):
        return StepSchedule.parse(schedule)
    return StepSchedule(schedule)


def gd_run(objective: Objective, theta0, schedule, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    """Gradient descent theta_{t+1} = theta_t - eta_t grad f(theta_t)."""
    schedule = _as_schedule(schedule)
    _check_steps(schedule, smoothness)
    return _run(
        lambda th, g, eta, t: th - eta * g,
        objective.value,
        objective.gradient,
        theta0,
        schedule,
        "gd",
        record,
        geometry=BregmanGeometry(EUCLIDEAN),
    )


def projected_gd_run(objective: Objective, theta0, schedule, radius: float, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    schedule = _as_schedule(schedule)
    theta0 = np.asarray(theta0, dtype=float)
    if np.linalg.norm(theta0) > radius * (1 + 1e-12):
        raise ValueError(f"initial point has norm {np.linalg.norm(theta0):g} > radius {radius:g}")
    _check_steps(schedule, smoothness)
    return _run(
        lambda th, g, eta, t: project_ball(th - eta * g, radius),
        objective.value,
        objective.gradient,
        theta0,
        schedule,
        "projected_gd",
        record,
        geometry=BregmanGeometry(EUCLIDEAN, radius),
    )


def _check_simplex_start(theta0) -> np.ndarray:
    theta0 = np.asarray(theta0, dtype=float)
    if np.any(theta0 <= 0):
        raise ValueError("initial point must be strictly positive")
    if abs(theta0.sum() - 1.0) > 1e-9:
        raise ValueError(f"initial point must sum to 1, sums to {theta0.sum():.12g}")
    return theta0


def egd_run(objective: Objective, theta0, schedule, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    """Exponentiated gradient descent on the probability simplex.

    ``smoothness`` is with respect to the l1 norm.
    """
    schedule = _as_schedule(schedule)
    theta0 = _check_simplex_start(theta0)
    _check_steps(schedule, smoothness)
    return _run(
        lambda th, g, eta, t: entropic_step(th, g, eta),
        objective.value,
        objective.gradient,
        theta0,
        schedule,
        "egd",
        record,
        geometry=BregmanGeometry(NEGATIVE_ENTROPY),
    )


def mirror_descent_run(objective: Objective, geometry: BregmanGeometry, theta0, schedule, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    """Mirror descent with a closed-form step for each shipped geometry."""
    schedule = _as_schedule(schedule)
    theta0 = np.asarray(theta0, dtype=float)
    if not geometry.in_constraint_set(theta0) or not geometry.in_interior(theta0):
        raise ValueError("initial point must lie in C and the interior of the domain")
    alpha = geometry.strong_convexity
    if alpha is None:
        if smoothness is None:
            warnings.warn("step sizes not validated: no smoothness constant supplied", StepSizeWarning, stacklevel=2)
        elif schedule.max_step > (1 + 1e-12) / smoothness:
            raise ValueError(f"step size {schedule.max_step:g} exceeds 1/L = {1 / smoothness:g}")
    else:
        _check_steps(schedule, smoothness, alpha)

    def step(th, g, eta, t):
        try:
            return geometry.mirror_step(th, g, eta)
        except DomainError as exc:
            raise DomainError(str(exc), iteration=t) from None

    def domain_check(th, t):
        if not geometry.in_interior(th):
            raise DomainError("iterate left the interior of the domain", iteration=t)

    return _run(
        step,
        objective.value,
        objective.gradient,
        theta0,
        schedule,
        f"md_{geometry.kind}",
        record,
        geometry=geometry,
        domain_check=domain_check if geometry.kind != EUCLIDEAN else None,
    )


def soft_threshold(v, t: float) -> np.ndarray:
    """Coordinatewise sign(v) * max(|v| - t, 0)."""
    v = np.asarray(v, dtype=float)
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def ista_run(smooth_part: Objective, l1_weight: float, theta0, schedule, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    """Proximal gradient descent on g + l1_weight * ||.||_1.

    Recorded objective values are those of the composite objective.
    """
    if l1_weight < 0:
        raise ValueError("l1 weight must be nonnegative")
    schedule = _as_schedule(schedule)
    _check_steps(schedule, smoothness)
    lam = float(l1_weight)
    g_value = smooth_part.value
    trace = _run(
        lambda th, g, eta, t: soft_threshold(th - eta * g, eta * lam),
        lambda th: g_value(th) + lam * float(np.abs(th).sum()),
        smooth_part.gradient,
        theta0,
        schedule,
        "ista",
        record,
        geometry=BregmanGeometry(EUCLIDEAN),
    )
    trace.info["l1_weight"] = lam
    return trace


def composite_objective(smooth_part: Objective, l1_weight: float) -> Objective:
    """g + l1_weight * ||.||_1 (the gradient is that of g alone)."""
    return Objective(
        value=lambda th: smooth_part.value(th) + l1_weight * float(np.abs(th).sum()),
        gradient=smooth_part.gradient,
        name=f"{smooth_part.name}+l1",
    )


def plip_objective(x, y) -> Objective:
    """Poisson linear inverse problem f(theta) = D_BS(y, X theta) / n.

    D_BS(u, v) = sum u log u - u - u log v + v, with 0 log 0 = 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    pos = y > 0
    const = float(np.sum(y[pos] * np.log(y[pos])) - y.sum())

    def value(th):
        m = x @ th
        if np.any(m <= 0):
            return math.inf
        return (const - float(y @ np.log(m)) + float(m.sum())) / n

    def gradient(th):
        m = x @ th
        return x.T @ (1.0 - y / m) / n

    return Objective(value, gradient, name="plip")


def nolips_run(x, y, theta0, schedule, smoothness: Optional[float] = None, record="geometric") -> IterateTrace:
    """NoLips (Bregman gradient with the Burg potential) on the PLIP loss.

    The default relative-smoothness constant is ||y||_1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if np.any(x <= 0):
        raise ValueError("NoLips/PLIP needs a strictly positive design")
    if np.any(y <= 0):
        raise ValueError("NoLips/PLIP needs strictly positive responses")
    if np.any(theta0 <= 0):
        raise ValueError("NoLips needs a strictly positive initial point")
    schedule = _as_schedule(schedule)
    L = float(np.abs(y).sum()) if smoothness is None else float(smoothness)
    if schedule.max_step > (1 + 1e-12) / L:
        raise ValueError(f"step size {schedule.max_step:g} exceeds 1/L = {1 / L:g}")
    geom = BregmanGeometry(BURG)
    obj = plip_objective(x, y)

    def step(th, g, eta, t):
        try:
            return geom.mirror_step(th, g, eta)
        except DomainError as exc:
            raise DomainError(str(exc), iteration=t) from None

    trace = _run(step, obj.value, obj.gradient, theta0, schedule, "nolips", record, geometry=geom)
    trace.info["smoothness"] = L
    return trace
