"""Randomized predictors over a finite model collection.

A weight vector theta on the simplex over the models B is a randomized
predictor; its empirical and population risks are <theta, R_hat> and
<theta, R>. Exponential weights (the Gibbs posterior) minimize
<theta, R_hat> + lam KL(theta, z), and exponentiated gradient descent on
the linear objective <theta, R_hat> from theta_0 = z reproduces them with
lam = 1 / (eta T).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from implicitreg.datagen import replicate_rng
from implicitreg.geometry import kl_divergence
from implicitreg.optimizers import StepSchedule, egd_run, linear_objective


@dataclass(frozen=True)
class ModelCollection:
    empirical_risks: np.ndarray
    population_risks: Optional[np.ndarray] = None
    prior: Optional[np.ndarray] = None
    model_ids: Optional[tuple] = None

    def __post_init__(self):
        r = np.asarray(self.empirical_risks, dtype=float).reshape(-1)
        if r.size == 0:
            raise ValueError("a collection needs at least one model")
        if not np.all(np.isfinite(r)):
            raise ValueError("empirical risks must be finite")
        object.__setattr__(self, "empirical_risks", r)
        if self.population_risks is not None:
            p = np.asarray(self.population_risks, dtype=float).reshape(-1)
            if p.shape != r.shape or not np.all(np.isfinite(p)):
                raise ValueError("population risks must be finite and match the collection size")
            object.__setattr__(self, "population_risks", p)
        z = np.full(r.size, 1.0 / r.size) if self.prior is None else np.asarray(self.prior, dtype=float).reshape(-1)
        if z.shape != r.shape or np.any(z <= 0) or abs(z.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be strictly positive and sum to 1")
        object.__setattr__(self, "prior", z)
        ids = tuple(range(r.size)) if self.model_ids is None else tuple(self.model_ids)
        if len(ids) != r.size:
            raise ValueError("model_ids length does not match the collection size")
        object.__setattr__(self, "model_ids", ids)

    @property
    def size(self) -> int:
        return self.empirical_risks.size

    @property
    def estimation_error(self) -> float:
        """||R_hat - R||_inf over the collection."""
        return float(np.abs(self.empirical_risks - self._population()).max())

    def _population(self) -> np.ndarray:
        if self.population_risks is None:
            raise ValueError("this operation needs population risks")
        return self.population_risks

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ModelCollection":
        """Columns model_id, empirical_risk and optionally population_risk and prior_weight."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no models")
        if "empirical_risk" not in rows[0]:
            raise ValueError(f"{path}: missing empirical_risk column")

        def column(name):
            if name not in rows[0]:
                return None
            vals = [r[name].strip() for r in rows]
            if all(v == "" for v in vals):
                return None
            return np.array([float(v) for v in vals])

        ids = tuple(r.get("model_id", str(i)) for i, r in enumerate(rows))
        prior = column("prior_weight")
        if prior is not None:
            prior = prior / prior.sum()
        return cls(column("empirical_risk"), column("population_risk"), prior, ids)


def gibbs_posterior(collection: ModelCollection, lam: float) -> np.ndarray:
    """Weights proportional to z * exp(-R_hat / lam), normalized in log space."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    logits = np.log(collection.prior) - collection.empirical_risks / lam
    return np.exp(logits - logsumexp(logits))


def egd_weights(collection: ModelCollection, eta: float, T: int) -> np.ndarray:
    """Exponentiated gradient descent on <theta, R_hat> from the prior, T steps of size eta."""
    schedule = StepSchedule.constant(eta, T)
    # a linear objective is L-smooth for every L > 0, so any eta is valid
    trace = egd_run(linear_objective(collection.empirical_risks), collection.prior, schedule, smoothness=1.0 / eta, record=max(T, 1))
    return trace.final_theta


def egd_equivalence_check(collection: ModelCollection, eta: float, T: int) -> float:
    """Largest coordinate gap between the EGD weights and the Gibbs posterior at lam = 1/(eta T)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return float(np.abs(egd_weights(collection, eta, T) - gibbs_posterior(collection, 1.0 / (eta * T))).max())


def expected_risk(collection: ModelCollection, weights, population: bool = True) -> float:
    w = np.asarray(weights, dtype=float)
    r = collection._population() if population else collection.empirical_risks
    return float(w @ r)


def risk_gap(collection: ModelCollection, weights, reference_weights) -> float:
    """E_weights[R] - E_reference[R] under the population risks."""
    return expected_risk(collection, weights) - expected_risk(collection, reference_weights)


def risk_gap_bound(collection: ModelCollection, weights_kind: str, lam: float, reference_weights) -> float:
    """Upper bound on the population-risk gap of exponential weights against a reference.

    ``gibbs``: ||R_hat - R||_inf^2 / lam + 2 lam KL(ref, z).
    ``egd``: ||R_hat - R||_inf^2 / (2 lam) + lam KL(ref, z), with lam = 1/(eta T).
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    err2 = collection.estimation_error**2
    kl = kl_divergence(np.asarray(reference_weights, dtype=float), collection.prior)
    if weights_kind == "gibbs":
        return err2 / lam + 2 * lam * kl
    if weights_kind == "egd":
        return err2 / (2 * lam) + lam * kl
    raise ValueError(f"unknown weights kind {weights_kind!r}")


def hoeffding_lambda(C: float, n: int, cardinality: int, delta: float, b: float) -> tuple:
    """(lam, bound) for losses with range C: lam = (C/2) sqrt(a/(n b)), bound = 2 C sqrt(b a / n), a = log(2|B|) + delta."""
    if not C > 0 or n < 1 or cardinality < 1 or not delta > 0 or not b > 0:
        raise ValueError("need C > 0, n >= 1, |B| >= 1, delta > 0, b > 0")
    a = math.log(2 * cardinality) + delta
    return C / 2.0 * math.sqrt(a / (n * b)), 2.0 * C * math.sqrt(b * a / n)


def linear_kl_ball_min(risks, prior, b: float, iters: int = 200) -> tuple:
    """(value, weights) minimizing <theta, risks> over {KL(theta, prior) <= b}.

    The minimizer has the exponential-weights form; the temperature is found
    by bisection and the returned weights are feasible.
    """
    r = np.asarray(risks, dtype=float)
    z = np.asarray(prior, dtype=float)
    best = np.flatnonzero(r == r.min())
    vertex = np.zeros_like(z)
    vertex[best] = z[best] / z[best].sum()
    if kl_divergence(vertex, z) <= b:
        return float(r.min()), vertex
    coll = ModelCollection(r, prior=z)
    lo, hi = -40.0, 40.0  # log temperature
    w = z.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cand = gibbs_posterior(coll, math.exp(mid))
        if kl_divergence(cand, z) <= b:
            w, hi = cand, mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    return float(w @ r), w


def bounded_loss_coverage(
    model_means: Sequence[float],
    n: int,
    delta: float,
    b: float,
    replicates: int,
    seed: int = 0,
):
    """Monte Carlo coverage of the bounded-loss bound with Bernoulli losses.

    Each model's per-sample loss is Bernoulli(mean), so C = 1. A violation is
    a replicate where the Gibbs weights at the tuned lam exceed the best
    population risk over the KL ball by more than the bound.
    """
    from implicitreg.riskbounds import CoverageReport

    means = np.asarray(model_means, dtype=float)
    m = means.size
    z = np.full(m, 1.0 / m)
    lam, bound = hoeffding_lambda(1.0, n, m, delta, b)
    best, _ = linear_kl_ball_min(means, z, b)
    hits = 0
    for i in range(replicates):
        rng = replicate_rng(seed, i)
        emp = rng.binomial(n, means) / n
        w = gibbs_posterior(ModelCollection(emp, means, z), lam)
        if float(w @ means) - best > bound:
            hits += 1
    return CoverageReport("bounded-loss exponential weights", replicates, hits, math.exp(-delta), {"lambda": lam, "bound": bound})
