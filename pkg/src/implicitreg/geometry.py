"""Bregman geometries: potential, mirror map, divergence and mirror step.

Three geometries ship:

* ``euclidean``: phi = ||.||^2 / 2 on R^d, optionally constrained to a ball.
* ``negative_entropy_simplex``: phi = sum a log a on the probability simplex;
  the divergence is KL and the mirror step is the multiplicative update.
* ``burg_positive_orthant``: phi = -sum log a on (0, inf)^d; not strongly
  convex, used by NoLips.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

EGD_FLOOR = 1e-300

EUCLIDEAN = "euclidean"
NEGATIVE_ENTROPY = "negative_entropy_simplex"
BURG = "burg_positive_orthant"
KINDS = (EUCLIDEAN, NEGATIVE_ENTROPY, BURG)


class DomainError(ValueError):
    """An iterate left the interior of the potential's domain."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


def _xlogy_ratio(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """u * log(u / v) with 0 log 0 = 0 and +inf where u > 0 = v."""
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    with np.errstate(divide="ignore"):
        out[pos] = u[pos] * (np.log(u[pos]) - np.log(v[pos]))
    return out


@dataclass(frozen=True)
class BregmanGeometry:
    kind: str
    radius: Optional[float] = None  # euclidean only: constraint ball radius

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry {self.kind!r}; expected one of {KINDS}")
        if self.radius is not None:
            if self.kind != EUCLIDEAN:
                raise ValueError("a radius constraint only applies to the euclidean geometry")
            if not self.radius > 0:
                raise ValueError("radius must be positive")

    @classmethod
    def euclidean(cls, radius: Optional[float] = None) -> "BregmanGeometry":
        return cls(EUCLIDEAN, radius)

    @classmethod
    def negative_entropy(cls) -> "BregmanGeometry":
        return cls(NEGATIVE_ENTROPY)

    @classmethod
    def burg(cls) -> "BregmanGeometry":
        return cls(BURG)

    @property
    def strong_convexity(self) -> Optional[float]:
        """Modulus alpha w.r.t. :attr:`norm_order`; ``None`` for Burg."""
        return None if self.kind == BURG else 1.0

    @property
    def norm_order(self) -> int:
        return 1 if self.kind == NEGATIVE_ENTROPY else 2

    def norm(self, v) -> float:
        return float(np.linalg.norm(np.asarray(v, dtype=float), ord=self.norm_order))

    def potential(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if self.kind == EUCLIDEAN:
            return 0.5 * float(u @ u)
        if self.kind == NEGATIVE_ENTROPY:
            return float(_xlogy_ratio(u, np.ones_like(u)).sum())
        return float(-np.log(u).sum())

    def mirror_map(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == EUCLIDEAN:
            return v.copy()
        if self.kind == NEGATIVE_ENTROPY:
            return np.log(v) + 1.0
        return -1.0 / v

    def in_interior(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            return False
        if self.kind == EUCLIDEAN:
            return True
        if np.any(v <= 0):
            return False
        if self.kind == NEGATIVE_ENTROPY:
            return abs(v.sum() - 1.0) <= tol
        return True

    def in_constraint_set(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        if self.kind == EUCLIDEAN:
            return self.radius is None or np.linalg.norm(u) <= self.radius + tol
        if self.kind == NEGATIVE_ENTROPY:
            return bool(np.all(u >= -tol) and abs(u.sum() - 1.0) <= tol)
        return bool(np.all(u > 0))

    def divergence(self, u, v) -> float:
        """D_phi(u, v) = phi(u) - phi(v) - <grad phi(v), u - v>."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != v.shape:
            raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
        if self.kind == EUCLIDEAN:
            diff = u - v
            return 0.5 * float(diff @ diff)
        if np.any(v <= 0):
            raise ValueError("divergence needs v in the interior of the domain")
        if self.kind == NEGATIVE_ENTROPY:
            return float(_xlogy_ratio(u, v).sum())
        r = u / v
        return float((r - np.log(r) - 1.0).sum())

    def project(self, v) -> np.ndarray:
        """Bregman projection onto the constraint set."""
        v = np.asarray(v, dtype=float)
        if self.kind == EUCLIDEAN:
            return v.copy() if self.radius is None else project_ball(v, self.radius)
        if self.kind == NEGATIVE_ENTROPY:
            return v / v.sum()
        return v.copy()

    def mirror_step(self, theta: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
        """argmin over C of eta <grad, u> + D_phi(u, theta), in closed form."""
        if self.kind == EUCLIDEAN:
            step = theta - eta * grad
            if self.radius is None:
                return step
            return project_ball(step, self.radius)
        if self.kind == NEGATIVE_ENTROPY:
            return entropic_step(theta, grad, eta)
        inv = 1.0 / theta + eta * grad
        if np.any(inv <= 0) or not np.all(np.isfinite(inv)):
            raise DomainError("Burg mirror step left the positive orthant")
        return 1.0 / inv


def entropic_step(theta: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Multiplicative update theta * exp(-eta grad), renormalized to the simplex.

    The exponent is shifted so its largest entry is zero, and coordinates are
    floored at EGD_FLOOR so iterates never reach the boundary.
    """
    e = -eta * grad
    w = theta * np.exp(e - e.max())
    out = w / w.sum()
    if out.min() < EGD_FLOOR:
        out = np.maximum(out, EGD_FLOOR)
        out /= out.sum()
    return out


def project_ball(v, b: float) -> np.ndarray:
    """Euclidean projection onto the closed ball of radius b."""
    v = np.asarray(v, dtype=float)
    if not b > 0:
        raise ValueError("radius must be positive")
    nv = np.linalg.norm(v)
    if nv <= b:
        return v.copy()
    return v * (b / nv)


def divergence(geometry: BregmanGeometry, u, v) -> float:
    return geometry.divergence(u, v)


def kl_divergence(u, v) -> float:
    return BregmanGeometry(NEGATIVE_ENTROPY).divergence(u, v)
