"""Named numerical checks of the optimal-discriminator solver, collected into a report."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np

from . import augmentation as aug
from . import oracle
from .metrics import InverseTransformDiscriminator, cosine_similarity_diag
from .models import Discriminator
from .objectives import grouped_variance

DEFAULT_TOLERANCES = {
    "inner_root_unique": 0.0,
    "vanilla_closed_form": 1e-10,
    "fixed_point_residual": 1e-10,
    "scale_invariance": 1e-8,
    "upper_bound": None,  # the bound itself, 4 lam ((1 - delta) / delta)^2
    "lower_bound": None,  # the bound itself, 4 lam
    "uniform_ratio_collapse": 1e-12,
    "q_lambda_vanilla_js": 1e-4,
    "cosine_invariance": 1e-6,
    "variance_identity": 1e-12,
}


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def random_grid_pair(rng: np.random.Generator, cells: int = 32, delta: Optional[float] = None,
                     lo: float = -1.0, hi: float = 1.0):
    """Random strictly positive p0, q on a 1-D grid.

    With ``delta`` the ratio r = q / p0 is drawn from [1, K^0.9] with
    K = (1 - delta) / delta before normalization; normalizing divides r by
    its p0-mean, which keeps r inside (1/K, K), i.e. p0 / (p0 + q) inside
    (delta, 1 - delta) on every cell.
    """
    p = rng.uniform(0.2, 1.0, cells)
    p0 = oracle.DensityGrid.from_probs(p, lo, hi)
    if delta is None:
        q = rng.uniform(0.2, 1.0, cells)
    else:
        K = (1.0 - delta) / delta
        q = p * K ** (0.9 * rng.uniform(0.0, 1.0, cells))
    return p0, oracle.DensityGrid.from_probs(q, lo, hi)


def _check(name, measured, tol, detail="") -> CheckResult:
    measured = float(measured)
    return CheckResult(name, measured, float(tol), bool(measured <= tol), detail)


def run_checks(tolerances: Optional[dict] = None, lam: float = 0.0027, delta: float = 0.3,
               seed: int = 0, instances: int = 20, with_trend: bool = False) -> list[CheckResult]:
    tol = dict(DEFAULT_TOLERANCES)
    unknown = set(tolerances or {}) - set(tol)
    if unknown:
        raise KeyError(f"unknown check name(s): {sorted(unknown)}")
    tol.update(tolerances or {})
    rng = np.random.default_rng(seed)
    out = []

    # one sign change of the cubic on (0, 1) by dense scan
    zs = np.linspace(0.0, 1.0, 100_001)[1:-1]
    worst = 0
    for _ in range(200):
        r, c, lm = rng.uniform(0.05, 20.0), rng.uniform(0, 1), rng.uniform(0, 0.05)
        f = oracle.cubic(zs, c, r, lm)
        worst = max(worst, abs(int(np.count_nonzero(np.diff(np.sign(f)) != 0)) - 1))
    out.append(_check("inner_root_unique", worst, tol["inner_root_unique"],
                      "|sign changes - 1| over 200 random (r, c, lambda)"))

    pairs = [random_grid_pair(rng) for _ in range(instances)]
    dev = 0.0
    for p0, q in pairs:
        sol = oracle.solve_optimal_discriminator(p0, q, 0.0)
        dev = max(dev, np.max(np.abs(sol.D - p0.density / (p0.density + q.density))))
    out.append(_check("vanilla_closed_form", dev, tol["vanilla_closed_form"],
                      "max |D - p0/(p0+q)| at lambda = 0"))

    res = 0.0
    for p0, q in pairs[:5]:
        sol = oracle.solve_optimal_discriminator(p0, q, lam)
        res = max(res, sol.h_residual, sol.cubic_residual)
    out.append(_check("fixed_point_residual", res, tol["fixed_point_residual"],
                      f"max of |h(c)| and cellwise |f(D, c)| at lambda = {lam}"))

    schedule = aug.build_schedule(1e-4, 0.02, 500)
    dev = 0.0
    for lm in sorted({0.0, 0.001, lam}):
        for p0, q in pairs[:3]:
            dev = max(dev, oracle.verify_scale_invariance(p0, q, schedule, lm, [50, 200, 500]))
    out.append(_check("scale_invariance", dev, tol["scale_invariance"],
                      "max |D_t(s_t x) - D_0(x)|, t in {50, 200, 500}"))

    upper = 4 * lam * ((1 - delta) / delta) ** 2 if tol["upper_bound"] is None else tol["upper_bound"]
    lower = 4 * lam if tol["lower_bound"] is None else tol["lower_bound"]
    above, below = 0.0, 0.0
    for _ in range(instances):
        p0, q = random_grid_pair(rng, delta=delta)
        sol = oracle.solve_optimal_discriminator(p0, q, lam)
        vanilla = p0.density / (p0.density + q.density)
        above = max(above, np.max(sol.D - vanilla))
        below = max(below, np.max(vanilla - sol.D))
    note = "" if lam <= oracle.bound_lambda_limit(delta) else " (lambda above the range where the bound is proved)"
    out.append(_check("upper_bound", max(above, 0.0), upper,
                      f"max (D - p0/(p0+q)) vs 4 lam ((1-delta)/delta)^2, delta = {delta}{note}"))
    out.append(_check("lower_bound", max(below, 0.0), lower,
                      f"max (p0/(p0+q) - D) vs 4 lam{note}"))

    res = 0.0
    for lm in (0.0, 0.01, 0.1):
        for p0, _ in pairs[:5]:
            sol = oracle.solve_optimal_discriminator(p0, p0, lm)
            res = max(res, np.max(np.abs(sol.D - 0.5)), abs(sol.c - 0.5), sol.h_residual,
                      sol.cubic_residual)
    out.append(_check("uniform_ratio_collapse", res, tol["uniform_ratio_collapse"],
                      "q = p0: max |D - 1/2|, |c - 1/2| and residuals"))

    p0 = oracle.DensityGrid.from_probs(rng.uniform(0.2, 1.0, 16), 0.0, 1.0)
    result = oracle.solve_q_lambda(p0, 0.0, steps=10_000)
    out.append(_check("q_lambda_vanilla_js", result.js, tol["q_lambda_vanilla_js"],
                      "JS(p0, q_0) after 10^4 projected subgradient steps"))

    base = Discriminator(2, 16, 0.2, np.random.default_rng(seed), final_scale=1.0)
    inv = InverseTransformDiscriminator(base, schedule)
    x = rng.normal(size=(64, 2))
    worst = 0.0
    for t in (1, 50, 200, 500):
        cos = cosine_similarity_diag(inv, schedule, x, np.full(64, t), 500)
        worst = max(worst, 1.0 - cos)
    out.append(_check("cosine_invariance", worst, tol["cosine_invariance"],
                      "1 - cosine for D(y, t) = g(y / s_t)"))

    worst = 0.0
    for _ in range(1000):
        v = rng.uniform(0, 1, int(rng.integers(2, 65)))
        pair = np.mean((v[:, None] - v[None, :]) ** 2)
        worst = max(worst, abs(2 * grouped_variance(v[None, :]) - pair))
    out.append(_check("variance_identity", worst, tol["variance_identity"],
                      "|2 Var(v) - mean pairwise squared difference|"))

    if with_trend:
        out.append(q_lambda_trend(seed=seed))
    return out


def q_lambda_trend(seed: int = 0, lams=(0.1, 0.01, 0.001), steps: int = 10_000,
                   progress: Optional[Callable[[float, float], None]] = None) -> CheckResult:
    """Is ||q_lam - p0||_inf strictly decreasing as lam shrinks? Reports the norms."""
    p0 = oracle.DensityGrid.from_probs(np.random.default_rng(seed).uniform(0.2, 1.0, 16), 0.0, 1.0)
    norms = []
    for lm in lams:
        norms.append(oracle.solve_q_lambda(p0, lm, steps=steps).sup_norm)
        if progress:
            progress(lm, norms[-1])
    steps_up = [b - a for a, b in zip(norms, norms[1:])]
    # measured: the largest non-decrease; strictly decreasing means every step is < 0
    worst = max(steps_up)
    return CheckResult("q_lambda_trend", float(worst), 0.0, bool(worst < 0),
                       "sup norms " + ", ".join(f"{lm:g}: {n:.3e}" for lm, n in zip(lams, norms)))


def report(results: list[CheckResult], lam: float, delta: float) -> dict:
    return {
        "lambda": lam,
        "delta": delta,
        "upper_bound_value": 4 * lam * ((1 - delta) / delta) ** 2,
        "all_passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
