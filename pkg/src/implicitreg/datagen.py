"""Fixed-design experiment data and the named experiment presets.

Randomness comes from numpy's counter-based Philox generator. Every random
quantity has its own stream derived from (seed, stream key) through
``numpy.random.SeedSequence``, so the design, the true parameter and the
response noise can be redrawn independently and replicate i of a Monte
Carlo run always sees the same draws.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from implicitreg.glm_model import Design, GlmProblem
from implicitreg.optimizers import StepSchedule

log = logging.getLogger(__name__)

POISSON_MEAN_FLOOR = 1e-6
DEFAULT_SEED = 2024

STREAM_DESIGN = 0
STREAM_THETA = 1
STREAM_RESPONSE = 2
STREAM_REPLICATE = 3

TASK_FAMILY = {"linear": "gaussian", "logistic": "bernoulli", "poisson": "poisson"}

SCHEDULES = {
    "gd-default": StepSchedule([(1e-4, 10_000), (1e-3, 100_000), (1e-2, 100_000)]),
    "gd-poisson-over": StepSchedule([(1e-4, 100_000), (2e-4, 200_000), (5e-4, 2_000_000)]),
    "egd-default": StepSchedule([(1e-4, 100_000), (1e-3, 100_000), (1e-2, 100_000), (1e-1, 100_000)]),
}

# plotted tau range per algorithm
TAU_RANGE = {"gd": (1e-4, 1e3), "egd": (1e-4, 1e4)}
OVERPARAM_PLOTTED_COMPONENTS = 40


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for the given seed and stream key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return make_rng(seed, STREAM_REPLICATE, index)


@dataclass(frozen=True)
class ExperimentPreset:
    task: str  # linear, logistic, poisson
    algorithm: str  # gd, egd
    regime: str  # under, over
    n: int
    d: int
    gamma: float
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.task not in TASK_FAMILY:
            raise ValueError(f"unknown task {self.task!r}")
        if self.algorithm not in ("gd", "egd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.regime not in ("under", "over"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")

    @property
    def name(self) -> str:
        return f"{self.algorithm}-{self.task}-{self.regime}"

    @property
    def family(self) -> str:
        return TASK_FAMILY[self.task]

    @property
    def schedule_name(self) -> str:
        if self.algorithm == "egd":
            return "egd-default"
        if self.task == "poisson" and self.regime == "over":
            return "gd-poisson-over"
        return "gd-default"

    @property
    def schedule(self) -> StepSchedule:
        return SCHEDULES[self.schedule_name]

    @property
    def tau_range(self) -> tuple:
        return TAU_RANGE[self.algorithm]

    def with_seed(self, seed: int) -> "ExperimentPreset":
        return replace(self, seed=int(seed))


_TABLE = {
    # (algorithm, regime): (n, d, {task: gamma})
    ("gd", "under"): (200, 20, {"linear": 5.0, "logistic": 0.3, "poisson": 0.1}),
    ("gd", "over"): (100, 200, {"linear": 5.0, "logistic": 0.5, "poisson": 0.15}),
    ("egd", "under"): (200, 20, {"linear": 1.0, "logistic": 1.5, "poisson": 1.2}),
    ("egd", "over"): (30, 60, {"linear": 0.1, "logistic": 10.0, "poisson": 3.5}),
}

PRESETS = {}
for (_alg, _reg), (_n, _d, _gammas) in _TABLE.items():
    for _task, _g in _gammas.items():
        _p = ExperimentPreset(_task, _alg, _reg, _n, _d, _g)
        PRESETS[_p.name] = _p


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class GeneratedData:
    problem: GlmProblem
    theta_true: np.ndarray
    preset: ExperimentPreset
    clamped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def resample(self, rng: np.random.Generator) -> GlmProblem:
        """Same design and mean, fresh response noise."""
        y = sample_response(self.preset.task, self.problem.mean_truth, self.preset.gamma, rng)
        return self.problem.with_response(y)

    @property
    def noise_sigma(self) -> Optional[float]:
        """Sub-Gaussian parameter of the response noise for the linear task."""
        return self.preset.gamma if self.preset.task == "linear" else None


def true_mean(task: str, x: np.ndarray, theta: np.ndarray, gamma: float):
    """Mean vector of the response; returns (mean, indices clamped to the floor)."""
    lin = x @ theta
    if task == "linear":
        return lin, np.zeros(0, dtype=np.int64)
    if task == "logistic":
        return expit(gamma * lin), np.zeros(0, dtype=np.int64)
    raw = gamma * lin
    clamped = np.flatnonzero(raw < POISSON_MEAN_FLOOR)
    return np.maximum(raw, POISSON_MEAN_FLOOR), clamped


def sample_response(task: str, mean: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
    if task == "linear":
        return mean + gamma * rng.standard_normal(mean.shape[0])
    if task == "logistic":
        return (rng.random(mean.shape[0]) < mean).astype(float)
    return rng.poisson(mean).astype(float)


def generate(
    preset: Union[ExperimentPreset, str, None] = None,
    seed: Optional[int] = None,
    *,
    task: Optional[str] = None,
    algorithm: str = "gd",
    n: Optional[int] = None,
    d: Optional[int] = None,
    gamma: Optional[float] = None,
) -> GeneratedData:
    """Draw X with standard normal entries, the true parameter and the response.

    The true parameter is uniform on [-1, 1]^d for gd and uniform on [0, 1]^d
    then l1-normalized for egd. Pass a preset (or its name) or explicit
    task/algorithm/n/d/gamma.
    """
    if preset is None:
        if None in (task, n, d, gamma):
            raise ValueError("explicit generation needs task, n, d and gamma")
        regime = "over" if d > n else "under"
        preset = ExperimentPreset(task, algorithm, regime, int(n), int(d), float(gamma))
    elif isinstance(preset, str):
        preset = get_preset(preset)
    if seed is not None:
        preset = preset.with_seed(seed)
    x = make_rng(preset.seed, STREAM_DESIGN).standard_normal((preset.n, preset.d))
    trng = make_rng(preset.seed, STREAM_THETA)
    if preset.algorithm == "gd":
        theta = trng.uniform(-1.0, 1.0, preset.d)
    else:
        theta = trng.uniform(0.0, 1.0, preset.d)
        theta = theta / theta.sum()
    mean, clamped = true_mean(preset.task, x, theta, preset.gamma)
    if clamped.size:
        log.info("%s: %d of %d Poisson means clamped to %g", preset.name, clamped.size, preset.n, POISSON_MEAN_FLOOR)
    y = sample_response(preset.task, mean, preset.gamma, make_rng(preset.seed, STREAM_RESPONSE))
    problem = GlmProblem(Design(x), y, preset.family, mean)
    return GeneratedData(problem, theta, preset, clamped)


def write_problem_csv(data: GeneratedData, path: Union[str, Path]) -> Path:
    """Write design, response and mean (one row per sample); theta_true goes to a sibling file.

    Returns the path of the theta file. The problem file reads back with
    ``read_problem_csv(path, response="y", mean_column="mean")``.
    """
    path = Path(path)
    p = data.problem
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(p.d)] + ["y", "mean"])
        for i in range(p.n):
            w.writerow([repr(float(v)) for v in p.x[i]] + [repr(float(p.response[i])), repr(float(p.mean_truth[i]))])
    theta_path = path.with_name(path.stem + "_theta_true.csv")
    with open(theta_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "theta_true"])
        for j, v in enumerate(data.theta_true):
            w.writerow([j, repr(float(v))])
    return theta_path
