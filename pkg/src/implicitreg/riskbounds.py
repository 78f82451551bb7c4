"""Noise-level constants, regularization targets, risk-bound values and Monte Carlo checks.

Four estimator kinds share one vocabulary:

========  ==============================  =============================
kind      deterministic bound             penalty / noise statistic
========  ==============================  =============================
ridge     s / (2 lam) + 2 lam P           P = ||theta||^2, s = ||X^T eps / n||_2^2
gd        s / (2 lam) + lam P / 2         same as ridge, lam = 1 / (eta T)
kl        s / lam + 2 lam P               P = KL(theta, z), s = ||X^T eps / n||_inf^2
egd       s / (2 lam) + lam P             same as kl, lam = 1 / (eta T)
========  ==============================  =============================
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np

from implicitreg.datagen import replicate_rng
from implicitreg.explicit import kl_glm_solve, ridge_glm_solve
from implicitreg.geometry import kl_divergence, project_ball
from implicitreg.glm_model import (
    Design,
    GlmProblem,
    SpectralTerms,
    get_family,
    noise,
    prediction_risk,
    smoothness_constant,
    spectral_terms,
)
from implicitreg.optimizers import StepSchedule, egd_run, gd_run

KINDS = ("ridge", "gd", "kl", "egd")
ITERATIVE = ("gd", "egd")
INTEGRAL_TOL = 1e-12


def spectral_noise_term(spectral: SpectralTerms, sigma: float, n: int, delta: float) -> float:
    """High-probability bound on ||X^T eps / n||_2^2 for sigma-sub-Gaussian noise."""
    if not sigma > 0 or not delta > 0:
        raise ValueError("sigma and delta must be positive")
    return sigma**2 / n * spectral.concentration_sum(delta)


def ridge_lambda_star(spectral: SpectralTerms, sigma: float, n: int, delta: float, b: float) -> float:
    if not b > 0:
        raise ValueError("b must be positive")
    return math.sqrt(spectral_noise_term(spectral, sigma, n, delta)) / (2.0 * b)


def gd_lambda_star(spectral: SpectralTerms, sigma: float, n: int, delta: float, b: float) -> float:
    if not b > 0:
        raise ValueError("b must be positive")
    return math.sqrt(spectral_noise_term(spectral, sigma, n, delta)) / b


def column_factor(design) -> float:
    """max_j ||X_{.j}||_2 / sqrt(n); the sup-norm results need it <= 1 or carry it as a factor."""
    if not isinstance(design, Design):
        design = Design(design)
    return float(design.column_norms.max() / math.sqrt(design.n))


def _log_term(d: int, delta: float) -> float:
    if d < 1 or not delta > 0:
        raise ValueError("need d >= 1 and delta > 0")
    return math.log(2 * d) + delta


def kl_lambda_star(sigma: float, n: int, d: int, delta: float, b: float, column_factor: float = 1.0) -> float:
    if not b > 0 or not sigma > 0:
        raise ValueError("sigma and b must be positive")
    return sigma * column_factor * math.sqrt(_log_term(d, delta) / (n * b))


def egd_lambda_star(sigma: float, n: int, d: int, delta: float, b: float, column_factor: float = 1.0) -> float:
    return kl_lambda_star(sigma, n, d, delta, b, column_factor)


def supnorm_threshold(sigma: float, n: int, d: int, delta: float, column_factor: float = 1.0) -> float:
    """With probability >= 1 - e^-delta, ||X^T eps||_inf / n is at most this value."""
    return sigma * column_factor * math.sqrt(2.0 * _log_term(d, delta) / n)


def family_sigma(family, mean_truth=None, n: Optional[int] = None, noise_sd=None) -> float:
    """Sub-Gaussian parameter of the response noise for each family.

    Gaussian: the largest of the supplied per-sample standard deviations.
    Bernoulli: 1/2. Poisson: (2 m + 2/3) log n + m / 2 with m = max mean,
    valid on the truncation event and requiring n >= 3.
    """
    kind = get_family(family).kind
    if kind == "gaussian":
        if noise_sd is None:
            raise ValueError("the Gaussian case needs the noise standard deviations")
        return float(np.max(np.atleast_1d(np.asarray(noise_sd, dtype=float))))
    if kind == "bernoulli":
        return 0.5
    if mean_truth is None:
        raise ValueError("the Poisson case needs the mean vector")
    mu = np.asarray(mean_truth, dtype=float)
    n = mu.shape[0] if n is None else int(n)
    if n < 3:
        raise ValueError("the Poisson constant needs n >= 3")
    m = float(mu.max())
    return (2.0 * m + 2.0 / 3.0) * math.log(n) + 0.5 * m


def poisson_truncation_level(mean_truth, n: Optional[int] = None) -> float:
    """D = 4 (max mean + 1/3) log n; each noise entry exceeds D with probability <= 1/n^2."""
    mu = np.asarray(mean_truth, dtype=float)
    n = mu.shape[0] if n is None else int(n)
    if n < 3:
        raise ValueError("the truncation level needs n >= 3")
    return 4.0 * (float(mu.max()) + 1.0 / 3.0) * math.log(n)


def stopping_time(lambda_star: float, eta: float) -> tuple:
    """(T, integral) with T the first t such that 1/(eta t) <= lambda_star."""
    if not eta > 0 or not lambda_star > 0:
        raise ValueError("eta and lambda_star must be positive")
    x = 1.0 / (eta * lambda_star)
    r = round(x)
    if r >= 1 and abs(x - r) <= INTEGRAL_TOL * max(1.0, x):
        return int(r), True
    return max(1, math.ceil(x)), False


def gd_discretization_extra(eta: float, noise_term: float) -> float:
    """eta * C / 2 with C the spectral noise term."""
    return eta * noise_term / 2.0


def egd_discretization_extra(eta: float, sigma: float, n: int, d: int, delta: float, b: float) -> float:
    return eta**2 * sigma**3 * _log_term(d, delta) ** 1.5 / (n**1.5 * math.sqrt(b))


def deterministic_rhs(kind: str, lam: float, noise_stat: float, penalty: float) -> float:
    """Right-hand side of the per-realization bound (see module table)."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if kind == "ridge":
        return noise_stat / (2 * lam) + 2 * lam * penalty
    if kind == "gd":
        return noise_stat / (2 * lam) + lam * penalty / 2
    if kind == "kl":
        return noise_stat / lam + 2 * lam * penalty
    if kind == "egd":
        return noise_stat / (2 * lam) + lam * penalty
    raise ValueError(f"unknown kind {kind!r}")


def noise_l2_sq(problem: GlmProblem) -> float:
    v = problem.x.T @ noise(problem) / problem.n
    return float(v @ v)


def noise_sup(problem: GlmProblem) -> float:
    return float(np.abs(problem.x.T @ noise(problem)).max() / problem.n)


@dataclass
class RiskCertificate:
    kind: str
    sigma: float
    delta: float
    b: float
    n: int
    d: int
    lambda_star: float
    bound_value: float
    spectral: Optional[SpectralTerms] = None
    noise_term: Optional[float] = None  # C_sG for ridge/gd
    column_factor: Optional[float] = None  # for kl/egd
    eta: Optional[float] = None
    stopping_time: Optional[int] = None
    integral: Optional[bool] = None
    discretization_extra: float = 0.0
    extra_probability: float = 0.0  # 1/n for Poisson

    @property
    def total_bound(self) -> float:
        return self.bound_value + self.discretization_extra

    @property
    def failure_probability(self) -> float:
        return math.exp(-self.delta) + self.extra_probability

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spectral"] = None if self.spectral is None else asdict(self.spectral)
        out["total_bound"] = self.total_bound
        return out


def certify(
    kind: str,
    design,
    sigma: float,
    delta: Optional[float],
    b: float,
    eta: Optional[float] = None,
    poisson: bool = False,
) -> RiskCertificate:
    """Regularization target, stopping time and high-probability bound for one kind.

    ``delta=None`` means delta = log n, which makes the failure probability 1/n.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if not isinstance(design, Design):
        design = Design(design)
    n, d = design.n, design.d
    if delta is None:
        delta = math.log(n)
    extra_p = 1.0 / n if poisson else 0.0
    if kind in ("ridge", "gd"):
        spec = spectral_terms(design)
        c = spectral_noise_term(spec, sigma, n, delta)
        if kind == "ridge":
            lam, bound = ridge_lambda_star(spec, sigma, n, delta, b), 2 * b * math.sqrt(c)
        else:
            lam, bound = gd_lambda_star(spec, sigma, n, delta, b), b * math.sqrt(c)
        cert = RiskCertificate(kind, sigma, delta, b, n, d, lam, bound, spectral=spec, noise_term=c, extra_probability=extra_p)
    else:
        cf = column_factor(design)
        lam = kl_lambda_star(sigma, n, d, delta, b, cf)
        root = sigma * cf * math.sqrt(b * _log_term(d, delta) / n)
        bound = 4 * root if kind == "kl" else 2 * root
        cert = RiskCertificate(kind, sigma, delta, b, n, d, lam, bound, column_factor=cf, extra_probability=extra_p)
    if kind in ITERATIVE:
        if eta is None:
            raise ValueError(f"{kind} needs a step size")
        T, integral = stopping_time(cert.lambda_star, eta)
        cert.eta, cert.stopping_time, cert.integral = float(eta), T, integral
        if not integral:
            if kind == "gd":
                cert.discretization_extra = gd_discretization_extra(eta, cert.noise_term)
            else:
                cert.discretization_extra = egd_discretization_extra(eta, sigma, n, d, delta, b) * cert.column_factor**3
    return cert


def bound_rhs(certificate: RiskCertificate) -> float:
    return certificate.total_bound


def write_certificates(certs: Iterable[RiskCertificate], path: Union[str, Path]) -> None:
    """JSON lines when the suffix is .jsonl, otherwise CSV."""
    path = Path(path)
    rows = [c.to_dict() for c in certs]
    for r in rows:
        if r["spectral"] is not None:
            sp = r.pop("spectral")
            r.update({f"spectral_{k}": v for k, v in sp.items()})
        else:
            r.pop("spectral")
    if path.suffix == ".jsonl":
        with open(path, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
        return
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)


# ---------------------------------------------------------------------------
# feasible-set infima of the prediction risk


def ball_risk_infimum(problem: GlmProblem, b: float, iters: int = 200) -> tuple:
    """(value, theta): a feasible minimizer of Risk over ||theta||_2 <= b.

    Uses ridge solutions of the risk objective, bisecting on lambda so the
    norm meets b; the returned theta is always feasible.
    """
    rp = problem.risk_problem()
    lo, hi = 1e-12, 1e8
    sol_lo = ridge_glm_solve(rp, lo)
    if np.linalg.norm(sol_lo.theta) <= b:
        return prediction_risk(problem, sol_lo.theta), sol_lo.theta
    best = ridge_glm_solve(rp, hi).theta
    warm = best
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (llo + lhi)
        th = ridge_glm_solve(rp, math.exp(mid), theta_init=warm).theta
        if np.linalg.norm(th) <= b:
            lhi, best = mid, th
        else:
            llo = mid
        warm = th
        if lhi - llo < 1e-13:
            break
    best = project_ball(best, b)
    return prediction_risk(problem, best), best


def kl_ball_risk_infimum(problem: GlmProblem, b: float, anchor=None, iters: int = 200) -> tuple:
    """(value, theta): a feasible minimizer of Risk over {theta in simplex : KL(theta, z) <= b}."""
    rp = problem.risk_problem()
    d = problem.d
    z = np.full(d, 1.0 / d) if anchor is None else np.asarray(anchor, dtype=float)
    lo, hi = 1e-8, 1e8
    sol = kl_glm_solve(rp, lo, anchor=z)
    if kl_divergence(sol.theta, z) <= b:
        return prediction_risk(problem, sol.theta), sol.theta
    best = z.copy()
    warm = None
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (llo + lhi)
        th = kl_glm_solve(rp, math.exp(mid), anchor=z, theta_init=warm).theta
        if kl_divergence(th, z) <= b:
            lhi, best = mid, th
        else:
            llo = mid
        warm = th
        if lhi - llo < 1e-12:
            break
    return prediction_risk(problem, best), best


# ---------------------------------------------------------------------------
# Monte Carlo coverage


@dataclass
class CoverageReport:
    label: str
    replicates: int
    violations: int
    target: float
    info: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.violations / self.replicates

    @property
    def standard_error(self) -> float:
        p = min(max(self.target, 0.0), 1.0)
        return math.sqrt(p * (1 - p) / self.replicates)

    @property
    def threshold(self) -> float:
        return self.target + 3.0 * self.standard_error

    @property
    def passed(self) -> bool:
        return self.rate <= self.threshold

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}: {self.label} violation rate {self.rate:.4f} "
            f"({self.violations}/{self.replicates}), allowed {self.threshold:.4f}"
        )

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "replicates": self.replicates,
            "violations": self.violations,
            "rate": self.rate,
            "target": self.target,
            "standard_error": self.standard_error,
            "threshold": self.threshold,
            "passed": self.passed,
        }
        out.update(self.info)
        return out


def event_coverage(label: str, event: Callable[[np.random.Generator], bool], replicates: int, target: float, seed: int) -> CoverageReport:
    """Count replicates where ``event(rng)`` is True (a violation)."""
    hits = sum(bool(event(replicate_rng(seed, i))) for i in range(replicates))
    return CoverageReport(label, replicates, hits, target)


def _estimate(kind: str, problem: GlmProblem, cert: RiskCertificate, anchor) -> np.ndarray:
    if kind == "ridge":
        sol = ridge_glm_solve(problem, cert.lambda_star)
        if not sol.converged:
            raise RuntimeError("ridge solve did not converge")
        return sol.theta
    if kind == "kl":
        sol = kl_glm_solve(problem, cert.lambda_star, anchor=anchor)
        if not sol.converged:
            raise RuntimeError("KL solve did not converge")
        return sol.theta
    schedule = StepSchedule.constant(cert.eta, cert.stopping_time)
    T = cert.stopping_time
    if kind == "gd":
        return gd_run(problem.objective(), np.zeros(problem.d), schedule, smoothness=1.0 / cert.eta, record=T).final_theta
    return egd_run(problem.objective(), anchor, schedule, smoothness=1.0 / cert.eta, record=T).final_theta


def monte_carlo_validate(
    problem_generator: Callable[[np.random.Generator], GlmProblem],
    kind: str,
    replicates: int,
    delta: float,
    b: float,
    sigma: float,
    eta: Optional[float] = None,
    seed: int = 0,
    anchor=None,
    poisson: bool = False,
) -> CoverageReport:
    """Empirical frequency of Risk(estimate) - inf_feasible Risk > bound.

    ``problem_generator(rng)`` must return problems sharing one design and
    one mean vector (fixed design); only the response changes. The feasible
    infimum is therefore computed once. For gd and egd the step size
    defaults to 1/L for the matching geometry.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    first = problem_generator(replicate_rng(seed, 0))
    d = first.d
    z = np.full(d, 1.0 / d) if anchor is None else np.asarray(anchor, dtype=float)
    if kind in ITERATIVE and eta is None:
        geom = "euclidean" if kind == "gd" else "l1_simplex"
        eta = 1.0 / smoothness_constant(first, geom, radius=b if kind == "gd" else None)
    cert = certify(kind, first.design, sigma, delta, b, eta=eta, poisson=poisson)
    if kind in ("ridge", "gd"):
        inf_value, inf_theta = ball_risk_infimum(first, b)
    else:
        inf_value, inf_theta = kl_ball_risk_infimum(first, b, z)
    bound = cert.total_bound
    gaps = np.empty(replicates)
    for i in range(replicates):
        prob = first if i == 0 else problem_generator(replicate_rng(seed, i))
        theta = _estimate(kind, prob, cert, z)
        gaps[i] = prediction_risk(prob, theta) - inf_value
    report = CoverageReport(
        f"{kind} risk bound",
        replicates,
        int(np.sum(gaps > bound)),
        cert.failure_probability,
        info={
            "bound": bound,
            "lambda_star": cert.lambda_star,
            "stopping_time": cert.stopping_time,
            "infimum": inf_value,
            "mean_gap": float(gaps.mean()),
            "max_gap": float(gaps.max()),
        },
    )
    report.info["certificate"] = cert
    return report


def spectral_coverage(problem_generator, sigma: float, delta: float, replicates: int, seed: int = 0) -> CoverageReport:
    """How often ||X^T eps / n||_2^2 exceeds the spectral noise term."""
    first = problem_generator(replicate_rng(seed, 0))
    c = spectral_noise_term(spectral_terms(first.design), sigma, first.n, delta)
    return event_coverage(
        "spectral noise term",
        lambda rng: noise_l2_sq(problem_generator(rng)) > c,
        replicates,
        math.exp(-delta),
        seed,
    )


def supnorm_coverage(problem_generator, sigma: float, delta: float, replicates: int, seed: int = 0) -> CoverageReport:
    """How often ||X^T eps||_inf / n exceeds its sub-Gaussian maximal bound."""
    first = problem_generator(replicate_rng(seed, 0))
    t = supnorm_threshold(sigma, first.n, first.d, delta, column_factor(first.design))
    return event_coverage(
        "sup-norm noise bound",
        lambda rng: noise_sup(problem_generator(rng)) > t,
        replicates,
        math.exp(-delta),
        seed,
    )


def poisson_truncation_coverage(mean_truth, replicates: int, seed: int = 0) -> CoverageReport:
    """How often some Poisson noise entry reaches the truncation level D (target 1/n)."""
    mu = np.asarray(mean_truth, dtype=float)
    n = mu.shape[0]
    D = poisson_truncation_level(mu)
    return event_coverage(
        "Poisson truncation event",
        lambda rng: bool(np.max(rng.poisson(mu) - mu) >= D),
        replicates,
        1.0 / n,
        seed,
    )
