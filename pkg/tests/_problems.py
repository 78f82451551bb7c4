"""Random desk-scale problem builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from implicitreg.glm_model import Design, GlmProblem, smoothness_constant
from implicitreg.optimizers import least_squares_objective


def rng_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(20240, spawn_key=key))


def random_glm(rng, family: str, n: int = 30, d: int = 5, scale: float = 0.5) -> GlmProblem:
    x = rng.standard_normal((n, d)) * scale
    theta = rng.uniform(-1, 1, d)
    lin = x @ theta
    if family == "gaussian":
        mu = lin
        y = mu + rng.standard_normal(n)
    elif family == "bernoulli":
        mu = 1.0 / (1.0 + np.exp(-lin))
        y = (rng.random(n) < mu).astype(float)
    else:
        mu = np.exp(lin)
        y = rng.poisson(mu).astype(float)
    return GlmProblem(Design(x), y, family, mu)


def random_least_squares(rng, n: int = 20, d: int = 5):
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    return x, y, least_squares_objective(x, y)


def gd_step(problem: GlmProblem) -> float:
    return 1.0 / smoothness_constant(problem, "euclidean", radius=3.0)


def egd_step(problem: GlmProblem) -> float:
    return 1.0 / smoothness_constant(problem, "l1_simplex")


def random_simplex_points(rng, d: int, count: int) -> np.ndarray:
    return rng.dirichlet(np.ones(d), size=count)
