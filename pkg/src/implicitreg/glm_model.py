"""Fixed-design generalized linear models.

The loss is the normalized negative log-likelihood

    loss(theta) = (1/n) * (-Y^T X theta + sum_i A((X theta)_i))

with A the cumulant of a Gaussian, Bernoulli or Poisson family.  The
prediction risk replaces Y by the mean vector ``mean_truth``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

# Linear predictors above this value raise instead of silently overflowing exp.
POISSON_OVERFLOW = 700.0
# Predictors above this value are reported as saturated by the solvers.
POISSON_CLAMP = 30.0

POWER_ITER_MAX = 10_000
POWER_ITER_RTOL = 1e-13
POWER_ITER_SEED = 20240917


class SaturationError(FloatingPointError):
    """Raised when a Poisson linear predictor would overflow ``exp``."""

    def __init__(self, index: int, value: float):
        self.index = int(index)
        self.value = float(value)
        super().__init__(
            f"linear predictor {value:.6g} at sample {index} exceeds {POISSON_OVERFLOW:g}"
        )


class ConvergenceError(RuntimeError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Design:
    """Dense n x d feature matrix with cached column norms."""

    x: np.ndarray
    column_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"design must be a 2-D matrix, got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"design needs n >= 1 and d >= 1, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "column_norms", _readonly(np.linalg.norm(x, axis=0)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def covariance(self) -> np.ndarray:
        """Empirical covariance X^T X / n."""
        return self.x.T @ self.x / self.n


@dataclass(frozen=True)
class GlmFamily:
    """Canonical exponential family: cumulant A and its first two derivatives."""

    kind: str
    cumulant: Callable[[np.ndarray], np.ndarray]
    mean_map: Callable[[np.ndarray], np.ndarray]
    variance_map: Callable[[np.ndarray], np.ndarray]

    def __repr__(self) -> str:
        return f"GlmFamily({self.kind!r})"


def _bern_var(xi):
    p = expit(xi)
    return p * (1.0 - p)


GAUSSIAN = GlmFamily(
    "gaussian",
    cumulant=lambda xi: 0.5 * np.square(xi),
    mean_map=lambda xi: np.asarray(xi, dtype=float),
    variance_map=lambda xi: np.ones_like(np.asarray(xi, dtype=float)),
)
BERNOULLI = GlmFamily(
    "bernoulli",
    cumulant=lambda xi: np.logaddexp(0.0, xi),
    mean_map=expit,
    variance_map=_bern_var,
)
POISSON = GlmFamily("poisson", cumulant=np.exp, mean_map=np.exp, variance_map=np.exp)

FAMILIES = {f.kind: f for f in (GAUSSIAN, BERNOULLI, POISSON)}
_ALIASES = {"linear": "gaussian", "logistic": "bernoulli", "normal": "gaussian"}


def get_family(kind: Union[str, GlmFamily]) -> GlmFamily:
    if isinstance(kind, GlmFamily):
        return kind
    key = _ALIASES.get(kind.lower(), kind.lower())
    try:
        return FAMILIES[key]
    except KeyError:
        raise ValueError(f"unknown GLM family {kind!r}") from None


@dataclass(frozen=True)
class GlmProblem:
    """Design, response (already mapped through the sufficient statistic) and family.

    ``mean_truth`` is the true mean vector E[Y], only known in simulation.
    It is stored as given; it is not checked against the family.
    """

    design: Design
    response: np.ndarray
    family: GlmFamily
    mean_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.design, Design):
            object.__setattr__(self, "design", Design(self.design))
        object.__setattr__(self, "family", get_family(self.family))
        y = np.asarray(self.response, dtype=float).reshape(-1)
        if y.shape[0] != self.design.n:
            raise ValueError(f"response has length {y.shape[0]}, design has n={self.design.n}")
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite entries")
        kind = self.family.kind
        if kind == "bernoulli" and (y.min() < 0.0 or y.max() > 1.0):
            raise ValueError("Bernoulli responses must lie in [0, 1]")
        if kind == "poisson" and y.min() < 0.0:
            raise ValueError("Poisson responses must be nonnegative")
        object.__setattr__(self, "response", _readonly(y))
        if self.mean_truth is not None:
            mu = np.asarray(self.mean_truth, dtype=float).reshape(-1)
            if mu.shape[0] != self.design.n:
                raise ValueError("mean_truth length does not match n")
            if not np.all(np.isfinite(mu)):
                raise ValueError("mean_truth contains non-finite entries")
            object.__setattr__(self, "mean_truth", _readonly(mu))

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def d(self) -> int:
        return self.design.d

    @property
    def x(self) -> np.ndarray:
        return self.design.x

    def with_response(self, response: np.ndarray) -> "GlmProblem":
        return GlmProblem(self.design, response, self.family, self.mean_truth)

    def risk_problem(self) -> "GlmProblem":
        """Same model with Y replaced by the mean, so its loss is the prediction risk."""
        if self.mean_truth is None:
            raise ValueError("prediction risk needs mean_truth")
        return GlmProblem(self.design, self.mean_truth, self.family, self.mean_truth)

    def objective(self):
        """Loss as an :class:`~implicitreg.optimizers.Objective`.

        The gradient closure skips argument validation; it runs once per
        iteration in the optimizers.
        """
        from implicitreg.optimizers import Objective

        x = self.x
        xt_y = x.T @ self.response / self.n
        xt = np.ascontiguousarray(x.T) / self.n
        mean_map = self.family.mean_map
        poisson = self.family.kind == "poisson"

        def gradient(th):
            xi = x @ th
            if poisson:
                i = int(np.argmax(xi))
                if xi[i] > POISSON_OVERFLOW:
                    raise SaturationError(i, xi[i])
            return xt @ mean_map(xi) - xt_y

        return Objective(value=lambda th: loss(self, th), gradient=gradient, name=f"glm-{self.family.kind}")


def _predictor(problem: GlmProblem, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != problem.d:
        raise ValueError(f"theta has length {theta.shape[0]}, expected d={problem.d}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite entries")
    xi = problem.x @ theta
    if problem.family.kind == "poisson":
        i = int(np.argmax(xi))
        if xi[i] > POISSON_OVERFLOW:
            raise SaturationError(i, xi[i])
    return xi


def loss(problem: GlmProblem, theta) -> float:
    xi = _predictor(problem, theta)
    return float((-problem.response @ xi + problem.family.cumulant(xi).sum()) / problem.n)


def loss_offset(problem: GlmProblem) -> float:
    """Theta-free constant turning the Gaussian loss into ||Y - X theta||^2 / (2n); 0 for other families."""
    if problem.family.kind == "gaussian":
        return float(problem.response @ problem.response) / (2.0 * problem.n)
    return 0.0


def training_loss(problem: GlmProblem, theta) -> float:
    """Loss plus :func:`loss_offset`; least squares for the Gaussian family."""
    return loss(problem, theta) + loss_offset(problem)


def loss_gradient(problem: GlmProblem, theta) -> np.ndarray:
    xi = _predictor(problem, theta)
    return -problem.x.T @ (problem.response - problem.family.mean_map(xi)) / problem.n


def loss_hessian(problem: GlmProblem, theta) -> np.ndarray:
    xi = _predictor(problem, theta)
    w = problem.family.variance_map(xi)
    return (problem.x.T * w) @ problem.x / problem.n


def prediction_risk(problem: GlmProblem, theta) -> float:
    """Fixed-design risk: the loss evaluated with the mean vector in place of Y."""
    if problem.mean_truth is None:
        raise ValueError("prediction risk needs mean_truth")
    xi = _predictor(problem, theta)
    return float((-problem.mean_truth @ xi + problem.family.cumulant(xi).sum()) / problem.n)


def noise(problem: GlmProblem) -> np.ndarray:
    if problem.mean_truth is None:
        raise ValueError("noise needs mean_truth")
    return problem.response - problem.mean_truth


def operator_norm(design: Design, max_iter: int = POWER_ITER_MAX, rtol: float = POWER_ITER_RTOL) -> float:
    """Largest eigenvalue of X^T X / n by power iteration from a fixed start."""
    x = design.x
    n = design.n
    v = np.random.default_rng(POWER_ITER_SEED).standard_normal(design.d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = x.T @ (x @ v) / n
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - est) <= rtol * max(abs(new), np.finfo(float).tiny):
            # one more Rayleigh quotient at the normalized vector
            return float(v @ (x.T @ (x @ v)) / n)
        est = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class SpectralTerms:
    trace: float
    frobenius: float
    operator: float

    def concentration_sum(self, delta: float) -> float:
        """tr + 2 ||.||_F sqrt(delta) + 2 ||.||_op delta."""
        return self.trace + 2.0 * self.frobenius * math.sqrt(delta) + 2.0 * self.operator * delta


def spectral_terms(design: Design) -> SpectralTerms:
    if not isinstance(design, Design):
        design = Design(design)
    n = design.n
    trace = float(np.sum(design.column_norms**2) / n)
    # ||X^T X||_F == ||X X^T||_F; use the smaller Gram matrix
    gram = design.x @ design.x.T if n <= design.d else design.x.T @ design.x
    frob = float(np.linalg.norm(gram) / n)
    op = operator_norm(design)
    return SpectralTerms(trace, frob, op)


def smoothness_constant(problem: GlmProblem, geometry_kind: str = "euclidean", radius: Optional[float] = None) -> float:
    """Smoothness constant of the loss for the given geometry.

    ``euclidean`` is with respect to the l2 norm on R^d (on the ball of the
    given radius for Poisson); ``l1_simplex`` is with respect to the l1 norm
    on the simplex.
    """
    kind = problem.family.kind
    design = problem.design
    if geometry_kind == "euclidean":
        op = operator_norm(design)
        if kind == "gaussian":
            return op
        if kind == "bernoulli":
            return op / 4.0
        if radius is None:
            raise ValueError("Poisson smoothness on a Euclidean ball needs a radius")
        if radius <= 0:
            raise ValueError("radius must be positive")
        return op * math.exp(radius * float(design.row_norms.max()))
    if geometry_kind in ("l1_simplex", "simplex", "l1"):
        col_sq = design.column_norms**2
        if kind == "gaussian":
            return float(col_sq.max() / design.n)
        if kind == "bernoulli":
            return float(col_sq.max() / (4.0 * design.n))
        row_inf = np.abs(design.x).max(axis=1)
        weighted = (np.exp(row_inf)[:, None] * design.x**2).sum(axis=0)
        return float(weighted.max() / design.n)
    raise ValueError(f"unknown geometry kind {geometry_kind!r}")


def least_squares_problem(x, y) -> GlmProblem:
    return GlmProblem(Design(x), y, GAUSSIAN)


def read_problem_csv(
    path: Union[str, Path],
    response: Union[str, int],
    family: Union[str, GlmFamily] = "gaussian",
    mean_column: Optional[Union[str, int]] = None,
    feature_columns: Optional[Sequence[Union[str, int]]] = None,
    sufficient_statistic: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> GlmProblem:
    """Load a problem from CSV, one sample per row.

    The header row is optional. Columns may be named (when a header exists)
    or given by position. Unless ``feature_columns`` is set, every column
    other than the response and mean columns is a feature.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    data = np.array([[float(c) for c in r] for r in rows], dtype=float)

    def col(key):
        if isinstance(key, (int, np.integer)):
            return int(key)
        if header is None:
            raise ValueError(f"column {key!r} given by name but the file has no header")
        try:
            return header.index(key)
        except ValueError:
            raise ValueError(f"column {key!r} not found in header") from None

    yi = col(response)
    skip = {yi}
    mu = None
    if mean_column is not None:
        mi = col(mean_column)
        skip.add(mi)
        mu = data[:, mi]
    if feature_columns is None:
        feats = [j for j in range(data.shape[1]) if j not in skip]
    else:
        feats = [col(k) for k in feature_columns]
    y = data[:, yi]
    if sufficient_statistic is not None:
        y = np.asarray(sufficient_statistic(y), dtype=float)
    return GlmProblem(Design(data[:, feats]), y, get_family(family), mu)
