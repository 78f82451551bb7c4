"""Basic-inequality bounds, trace verification and training envelopes.

For a trace with accumulated step size tau_T the basic inequality reads

    f(theta_T) - f(z) <= (D(z, theta_0) - D(z, theta_T)) / tau_T

with D the Bregman divergence of the algorithm's geometry (half the squared
Euclidean distance for gradient descent, ISTA and projected GD; KL for EGD;
the Burg divergence for NoLips).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from implicitreg.geometry import (
    EUCLIDEAN,
    NEGATIVE_ENTROPY,
    BregmanGeometry,
    entropic_step,
)
from implicitreg.optimizers import IterateTrace, Objective

GAP_TOL = 1e-9
ENVELOPE_TOL = 1e-7


def gd_bound(theta0, thetaT, z, tau: float) -> float:
    if not tau > 0:
        raise ValueError("tau must be positive")
    theta0, thetaT, z = (np.asarray(a, dtype=float) for a in (theta0, thetaT, z))
    a = theta0 - z
    b = thetaT - z
    return float(a @ a - b @ b) / (2.0 * tau)


def md_bound(geometry: BregmanGeometry, theta0, thetaT, z, tau: float) -> float:
    if not tau > 0:
        raise ValueError("tau must be positive")
    return (geometry.divergence(z, theta0) - geometry.divergence(z, thetaT)) / tau


def divergence_matrix(geometry: BregmanGeometry, zs: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """D(z_j, theta_i) for every recorded theta_i (rows) and z_j (columns)."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if geometry.kind == EUCLIDEAN:
        sq = (thetas**2).sum(1)[:, None] + (zs**2).sum(1)[None, :] - 2.0 * thetas @ zs.T
        return 0.5 * np.maximum(sq, 0.0)
    if np.any(thetas <= 0):
        raise ValueError("divergence needs iterates in the interior of the domain")
    if geometry.kind == NEGATIVE_ENTROPY:
        with np.errstate(divide="ignore", invalid="ignore"):
            zlogz = np.where(zs > 0, zs * np.log(np.where(zs > 0, zs, 1.0)), 0.0).sum(1)
        return zlogz[None, :] - np.log(thetas) @ zs.T
    if np.any(zs <= 0):
        raise ValueError("Burg divergence needs strictly positive reference points")
    d = zs.shape[1]
    return (1.0 / thetas) @ zs.T - np.log(zs).sum(1)[None, :] + np.log(thetas).sum(1)[:, None] - d


@dataclass
class BoundLedger:
    """Per (T, z) record of both sides of the basic inequality."""

    steps: np.ndarray  # shape (m,)
    tau: np.ndarray  # shape (m,)
    lhs: np.ndarray  # shape (m, k)
    rhs: np.ndarray  # shape (m, k)
    tol: float = GAP_TOL

    @property
    def gap(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def min_gap(self) -> float:
        return float(self.gap.min()) if self.gap.size else math.inf

    @property
    def worst(self) -> tuple:
        """(T, z index) of the smallest gap."""
        i, j = np.unravel_index(np.argmin(self.gap), self.gap.shape)
        return int(self.steps[i]), int(j)

    @property
    def passed(self) -> bool:
        return self.min_gap >= -self.tol

    def violations(self) -> list:
        i, j = np.nonzero(self.gap < -self.tol)
        return [(int(self.steps[a]), int(b), float(self.gap[a, b])) for a, b in zip(i, j)]

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        T, z = self.worst
        return f"{status}: min gap {self.min_gap:.3e} at T={T}, z#{z} over {self.gap.size} pairs"

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "tau", "z_id", "lhs", "rhs", "gap"])
            gap = self.gap
            for i in range(len(self.steps)):
                for j in range(self.lhs.shape[1]):
                    w.writerow(
                        [int(self.steps[i]), repr(float(self.tau[i])), j]
                        + [repr(float(v)) for v in (self.lhs[i, j], self.rhs[i, j], gap[i, j])]
                    )


def verify_trace(
    trace: IterateTrace,
    objective: Objective,
    geometry: Optional[BregmanGeometry] = None,
    reference_points: Sequence = (),
    tol: float = GAP_TOL,
) -> BoundLedger:
    """Evaluate the basic inequality at every recorded T > 0 and every z.

    A violation is reported in the ledger, never raised. For ISTA pass the
    composite objective g + lambda ||.||_1.
    """
    geometry = geometry or trace.geometry or BregmanGeometry(EUCLIDEAN)
    zs = np.atleast_2d(np.asarray(reference_points, dtype=float))
    keep = trace.accumulated_time > 0
    thetas = trace.iterates[keep]
    taus = trace.accumulated_time[keep]
    f_T = np.array([objective.value(th) for th in thetas])
    f_z = np.array([objective.value(z) for z in zs])
    d0 = divergence_matrix(geometry, zs, trace.theta0[None, :])[0]
    dT = divergence_matrix(geometry, zs, thetas)
    lhs = f_T[:, None] - f_z[None, :]
    rhs = (d0[None, :] - dT) / taus[:, None]
    return BoundLedger(trace.steps[keep], taus, lhs, rhs, tol)


def step_certificates(trace: IterateTrace, objective: Objective, z, geometry: Optional[BregmanGeometry] = None):
    """Per-step inequality eta_t (f(theta_{t+1}) - f(z)) <= D(z, theta_t) - D(z, theta_{t+1}).

    Needs a trace recorded at every iteration. Returns (lhs, rhs) arrays;
    rhs sums telescopically to D(z, theta_0) - D(z, theta_T).
    """
    if not np.array_equal(trace.steps, np.arange(len(trace.steps))):
        raise ValueError("step certificates need a trace recorded at every iteration")
    geometry = geometry or trace.geometry
    z = np.asarray(z, dtype=float)
    dz = divergence_matrix(geometry, z[None, :], trace.iterates)[:, 0]
    etas = np.diff(trace.accumulated_time)
    fz = objective.value(z)
    f_next = np.array([objective.value(th) for th in trace.iterates[1:]])
    return etas * (f_next - fz), dz[:-1] - dz[1:]


def three_point_gaps(trace: IterateTrace, objective: Objective, z) -> np.ndarray:
    """Slack in eta <grad f(theta_t), theta_{t+1} - z> <= D(z,theta_t) - D(z,theta_{t+1}) - D(theta_{t+1},theta_t)."""
    if not np.array_equal(trace.steps, np.arange(len(trace.steps))):
        raise ValueError("three-point check needs a trace recorded at every iteration")
    geom = trace.geometry
    z = np.asarray(z, dtype=float)
    etas = np.diff(trace.accumulated_time)
    out = np.empty(len(etas))
    for t in range(len(etas)):
        a, b = trace.iterates[t], trace.iterates[t + 1]
        lhs = etas[t] * float(objective.gradient(a) @ (b - z))
        rhs = geom.divergence(z, a) - geom.divergence(z, b) - geom.divergence(b, a)
        out[t] = rhs - lhs
    return out


@dataclass(frozen=True)
class EnvelopeTriple:
    lower: float
    mid: float
    upper: float
    lambda_T: float
    tau: float
    T: int

    def ordered(self, tol: float = ENVELOPE_TOL) -> bool:
        return self.lower <= self.mid + tol and self.mid <= self.upper + tol


def envelope_gd(
    objective: Objective,
    trace: IterateTrace,
    T: int,
    ridge_solver: Callable,
) -> EnvelopeTriple:
    """Training envelope of gradient descent at recorded iteration T.

    ``ridge_solver(lam, anchor)`` must return a converged solution of
    min_z f(z) + lam ||z - anchor||^2 exposing ``objective_value`` and
    ``converged``. The coefficient is lambda_T = 1 / tau_T, which is
    1/(eta T) for a constant step.
    """
    i = trace.index_of(T)
    tau = float(trace.accumulated_time[i])
    if not tau > 0:
        raise ValueError("envelope needs T >= 1")
    lam = 1.0 / tau
    theta0 = trace.theta0
    thetaT = trace.iterates[i]
    low = ridge_solver(lam / 4.0, theta0)
    up = ridge_solver(lam, theta0)
    for sol in (low, up):
        if not sol.converged:
            raise RuntimeError(f"explicit solver did not converge at lambda={sol.lam:g}")
    diff = thetaT - theta0
    mid = objective.value(thetaT) + lam / 4.0 * float(diff @ diff)
    return EnvelopeTriple(low.objective_value, mid, up.objective_value, lam, tau, int(T))


@dataclass(frozen=True)
class EgdEnvelope:
    """Both sides of the EGD envelope at one T.

    ``lhs`` = f(theta_T) + (lambda/4) ||pi - theta_T||_1^2. ``rhs_quadratic``
    and ``rhs_log`` are the minima over z of f(z) + lambda * penalty for the
    (d+1)/2 ||pi - z||_1^2 and (1/2)||pi - z||_1^2 + (log d / 2)||pi - z||_1
    penalties; ``*_lower`` are certified lower bounds on those minima.
    """

    lhs: float
    rhs_quadratic: float
    rhs_log: float
    rhs_quadratic_lower: float
    rhs_log_lower: float
    lambda_T: float
    tau: float
    T: int
    convention: str

    @property
    def rhs(self) -> float:
        return min(self.rhs_quadratic, self.rhs_log)

    def holds(self, tol: float = ENVELOPE_TOL) -> bool:
        return self.lhs <= self.rhs + tol

    def certified(self, tol: float = ENVELOPE_TOL) -> bool:
        """True when lhs is below a proven lower bound of the right side."""
        return self.lhs <= min(self.rhs_quadratic_lower, self.rhs_log_lower) + tol


def _simplex_minimize(F, subgrad, candidates, iters: int = 3000):
    """Minimize a convex function on the simplex from a set of starting candidates.

    Returns (best value, best point, certified lower bound). The lower bound
    uses F* >= F(z) + min_i g_i - <g, z> for any subgradient g at z.
    """
    d = candidates[0].shape[0]
    pi = np.full(d, 1.0 / d)
    vals = [F(c) for c in candidates]
    k = int(np.argmin(vals))
    best_v, best_z = vals[k], candidates[k]
    lower = -math.inf
    z = 0.999 * best_z + 0.001 * pi
    z = z / z.sum()
    for it in range(1, iters + 1):
        v = F(z)
        g = subgrad(z)
        lower = max(lower, v + float(g.min() - g @ z))
        if v < best_v:
            best_v, best_z = v, z.copy()
        gn = float(np.abs(g).max())
        if gn == 0:
            break
        z = entropic_step(z, g, 0.5 / (gn * math.sqrt(it)))
    g = subgrad(best_z)
    lower = max(lower, best_v + float(g.min() - g @ best_z))
    return best_v, best_z, lower


def envelope_egd(
    objective: Objective,
    trace: IterateTrace,
    T: int,
    kl_solver: Optional[Callable] = None,
    convention: str = "inverse",
    extra_candidates: Sequence = (),
    seed: int = 0,
) -> EgdEnvelope:
    """EGD training envelope at recorded iteration T.

    ``convention="inverse"`` uses lambda_T = 1/tau_T, the coefficient the
    basic inequality yields. ``convention="as_printed"`` uses lambda_T = eta T
    (tau_T), the coefficient taken at face value; that form is not implied by
    the basic inequality and can fail for large T.

    The minimum over z is taken over candidates (KL-regularized solutions from
    ``kl_solver(lam)`` when given, pi, theta_T, random points) and refined by
    entropic subgradient descent.
    """
    if convention not in ("inverse", "as_printed"):
        raise ValueError(f"unknown convention {convention!r}")
    i = trace.index_of(T)
    tau = float(trace.accumulated_time[i])
    if not tau > 0:
        raise ValueError("envelope needs T >= 1")
    thetaT = trace.iterates[i]
    d = thetaT.shape[0]
    pi = np.full(d, 1.0 / d)
    if not np.allclose(trace.theta0, pi, atol=1e-12):
        raise ValueError("EGD envelope assumes initialization at the uniform distribution")
    lam = 1.0 / tau if convention == "inverse" else tau
    dist = float(np.abs(pi - thetaT).sum())
    lhs = objective.value(thetaT) + lam / 4.0 * dist**2
    logd = math.log(d)

    def F_quad(z):
        r = float(np.abs(z - pi).sum())
        return objective.value(z) + lam * (d + 1) / 2.0 * r * r

    def g_quad(z):
        r = float(np.abs(z - pi).sum())
        return objective.gradient(z) + lam * (d + 1) * r * np.sign(z - pi)

    def F_log(z):
        r = float(np.abs(z - pi).sum())
        return objective.value(z) + lam * (0.5 * r * r + 0.5 * logd * r)

    def g_log(z):
        r = float(np.abs(z - pi).sum())
        return objective.gradient(z) + lam * (r + 0.5 * logd) * np.sign(z - pi)

    rng = np.random.default_rng(seed)
    cands = [pi, thetaT.copy()] + [np.asarray(c, dtype=float) for c in extra_candidates]
    cands += list(rng.dirichlet(np.ones(d), size=8))
    if kl_solver is not None:
        for mult in (0.25, 1.0, 4.0, 0.5 * (d + 1)):
            sol = kl_solver(mult / tau)
            cands.append(np.asarray(sol.theta, dtype=float))
    vq, _, lq = _simplex_minimize(F_quad, g_quad, cands)
    vl, _, ll = _simplex_minimize(F_log, g_log, cands)
    return EgdEnvelope(lhs, vq, vl, lq, ll, lam, tau, int(T), convention)
