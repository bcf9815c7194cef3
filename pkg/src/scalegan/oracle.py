"""Grid-based solver for the variance-regularized optimal discriminator.

On a density grid the inner maximization decouples cellwise once the mean
c = E_p0[D] is fixed: every cell solves the cubic

    f(z, c) = 2 lam z^3 - 2 lam (c + 1) z^2 + (2 lam c - 1 - r) z + 1 = 0,   r = q / p0,

which has exactly one root in (0, 1) because f(0, c) = 1 and f(1, c) = -r.
The common mean is then the root of h(c) = E_p0[z_c] - c on [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .metrics import js_on_grid


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DensityGrid:
    """Piecewise-constant density on a box split into equal cells (C order)."""

    lo: np.ndarray
    hi: np.ndarray
    cells: tuple[int, ...]
    density: np.ndarray = field(repr=False)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cells", tuple(int(c) for c in np.atleast_1d(self.cells)))
        dens = np.asarray(self.density, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "density", dens)
        if not (lo.shape == hi.shape == (len(self.cells),)) or np.any(hi <= lo):
            raise ValueError("bad box bounds")
        if dens.size != int(np.prod(self.cells)):
            raise ValueError("density size does not match the cell count")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("density must be finite and non-negative")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod((self.hi - self.lo) / np.asarray(self.cells)))

    @property
    def probs(self) -> np.ndarray:
        return self.density * self.cell_volume

    @property
    def centers(self) -> np.ndarray:
        axes = [self.lo[i] + (np.arange(n) + 0.5) * (self.hi[i] - self.lo[i]) / n
                for i, n in enumerate(self.cells)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @classmethod
    def from_probs(cls, probs, lo, hi, cells=None) -> "DensityGrid":
        probs = np.asarray(probs, dtype=np.float64)
        cells = probs.shape if cells is None else cells
        probs = probs.reshape(-1) / probs.sum()
        vol = float(np.prod((np.atleast_1d(hi) - np.atleast_1d(lo)) / np.atleast_1d(cells)))
        return cls(lo, hi, cells, probs / vol)

    @classmethod
    def from_function(cls, fn, lo, hi, cells) -> "DensityGrid":
        """Evaluate ``fn`` at cell centers and renormalize to unit mass."""
        shell = cls(lo, hi, cells, np.ones(int(np.prod(np.atleast_1d(cells)))))
        vals = np.asarray(fn(shell.centers), dtype=np.float64).reshape(-1)
        return cls(lo, hi, cells, vals / (vals.sum() * shell.cell_volume))

    def scaled(self, s: float) -> "DensityGrid":
        """Pushforward under y = s x: box scaled by s, density p(y / s) / s^d."""
        return DensityGrid(self.lo * s, self.hi * s, self.cells, self.density / s ** self.dim)

    def same_geometry(self, other: "DensityGrid") -> bool:
        return (self.cells == other.cells and np.allclose(self.lo, other.lo, rtol=0, atol=1e-12)
                and np.allclose(self.hi, other.hi, rtol=0, atol=1e-12))


def cubic(z, c, r, lam):
    return 2 * lam * z ** 3 - 2 * lam * (c + 1) * z ** 2 + (2 * lam * c - 1 - r) * z + 1


def _cubic_dz(z, c, r, lam):
    return 6 * lam * z ** 2 - 4 * lam * (c + 1) * z + (2 * lam * c - 1 - r)


def solve_inner_root(r, c, lam: float, tol: float = 1e-12, z0=None, max_iter: int = 200):
    """Root of f(., c) in (0, 1) for each ratio r.

    Bracketing Newton: the bracket [lo, hi] with f(lo) > 0 > f(hi) starts at
    [0, 1] and shrinks every iteration; a Newton step that leaves it is
    replaced by the bisection midpoint.
    """
    r_arr = np.asarray(r, dtype=np.float64)
    scalar = r_arr.ndim == 0
    r_arr = np.atleast_1d(r_arr)
    if np.any(r_arr <= 0):
        raise ValueError("ratio r must be positive")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    c = float(c)
    if lam == 0:
        z = 1.0 / (1.0 + r_arr)
        return float(z[0]) if scalar else z
    lo = np.zeros_like(r_arr)
    hi = np.ones_like(r_arr)
    z = 1.0 / (1.0 + r_arr) if z0 is None else np.clip(np.array(z0, dtype=np.float64), 1e-300, 1 - 1e-16)
    for _ in range(max_iter):
        fz = cubic(z, c, r_arr, lam)
        lo = np.where(fz > 0, z, lo)
        hi = np.where(fz < 0, z, hi)
        root = fz == 0
        lo = np.where(root, z, lo)
        hi = np.where(root, z, hi)
        if np.all((np.abs(fz) <= 0.01 * tol) | (hi - lo <= 4e-16)):
            break
        step = z - fz / _cubic_dz(z, c, r_arr, lam)
        bad = ~((step > lo) & (step < hi))
        z = np.where(bad, 0.5 * (lo + hi), step)
        z = np.where(root, lo, z)
    return float(z[0]) if scalar else z


@dataclass
class OracleSolution:
    D: np.ndarray
    c: float
    lam: float
    r: np.ndarray = field(repr=False)
    h_residual: float = 0.0
    cubic_residual: float = 0.0


def solve_optimal_discriminator(p0: DensityGrid, q: DensityGrid, lam: float) -> OracleSolution:
    """Maximize E_p0[log D] + E_q[log(1 - D)] - lam Var_p0[D] cellwise on a grid."""
    if not p0.same_geometry(q):
        raise GridMismatchError("p0 and q grids differ in geometry")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if np.any(p0.density <= 0) or np.any(q.density <= 0):
        raise ValueError("densities must be strictly positive for a finite ratio q/p0")
    r = q.density / p0.density
    w = p0.probs

    def mean(z):
        # exactly rounded p0-mean, so a constant D has exactly that mean
        return math.fsum(w * z) / math.fsum(w)

    if lam == 0:
        D = 1.0 / (1.0 + r)
        c = mean(D)
    else:
        state = {"z": None}

        def h(c):
            z = solve_inner_root(r, c, lam, z0=state["z"])
            state["z"] = z
            return mean(z) - c

        c = brentq(h, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        res = abs(h(c))
        # brentq can stop an ulp short; a few fixed-point steps land on exact roots
        for _ in range(3):
            c_new = c + h(c)
            res_new = abs(h(c_new))
            if res_new > res or c_new == c:
                break
            c, res = c_new, res_new
        D = solve_inner_root(r, c, lam, z0=state["z"])
    return OracleSolution(
        D=D, c=float(c), lam=float(lam), r=r,
        h_residual=float(abs(mean(D) - c)),
        cubic_residual=float(np.max(np.abs(cubic(D, c, r, lam)))),
    )


def verify_scale_invariance(p0: DensityGrid, q: DensityGrid, schedule, lam: float, t_list) -> float:
    """max over t and cells of |D_t(s_t x) - D_0(x)| with every t solved independently."""
    base = solve_optimal_discriminator(p0, q, lam)
    worst = 0.0
    for t in t_list:
        s = float(schedule[int(t)])
        sol = solve_optimal_discriminator(p0.scaled(s), q.scaled(s), lam)
        worst = max(worst, float(np.max(np.abs(sol.D - base.D))))
    return worst


def lambda_delta(delta: float) -> float:
    return delta ** 3 / 10.0


def bound_lambda_limit(delta: float) -> float:
    """Largest lam for which the +-4 lam bounds on D are established."""
    return 3.0 * delta / (16.0 * (1.0 - delta))


def discriminator_bounds(r, lam: float, delta: float | None = None) -> dict[str, np.ndarray]:
    """Envelopes for the optimal D at ratio r = q / p0.

    ``quad_lo``/``quad_hi`` are the zeros of the quadratic minorant/majorant of f;
    ``lo``/``hi`` are their linearized forms p0/(p0+q) - 4 lam and
    p0/(p0+q) + 4 lam r^2, and ``hi_delta`` replaces r^2 by ((1-delta)/delta)^2.
    """
    r = np.asarray(r, dtype=np.float64)
    base = 1.0 / (1.0 + r)
    out = {"vanilla": base, "lo": base - 4 * lam, "hi": base + 4 * lam * r ** 2}
    if lam > 0:
        out["quad_lo"] = (-(r + 1) + np.sqrt((1 + r) ** 2 + 16 * lam)) / (8 * lam)
        out["quad_hi"] = (r + 1 + 8 * lam - np.sqrt((1 + r) ** 2 + 16 * lam * r)) / (8 * lam)
    if delta is not None:
        out["hi_delta"] = base + 4 * lam * ((1 - delta) / delta) ** 2
    return out


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = total} by the sorted-threshold rule."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class QLambdaResult:
    q: DensityGrid
    lam: float
    steps: int
    objective: float
    gap: float
    sup_norm: float
    js: float
    history: list = field(default_factory=list, repr=False)


def regularized_value(p0: DensityGrid, q: DensityGrid, lam: float) -> tuple[float, OracleSolution]:
    """G(q, lam) = max_D F(q, D; lam) and the maximizing discriminator."""
    sol = solve_optimal_discriminator(p0, q, lam)
    P, Q, D = p0.probs, q.probs, sol.D
    mean = P @ D
    val = P @ np.log(D) + Q @ np.log1p(-D) - lam * (P @ (D - mean) ** 2)
    return float(val), sol


def solve_q_lambda(p0: DensityGrid, lam: float, steps: int = 10_000, step0: float = 0.05,
                   floor_delta: float = 0.05, q_init: DensityGrid | None = None,
                   record_every: int = 0) -> QLambdaResult:
    """Minimize G(q, lam) over cell probabilities by projected subgradient descent.

    Danskin's theorem gives dG/dq_k = log(1 - D*_k). Steps shrink as
    step0 / sqrt(k). Iterates stay in {q >= p0 delta / (1 - delta), sum q = 1}
    so that p0 / (p0 + q) stays below 1 - delta and q / p0 is finite. No
    exception on slow convergence; the final stationarity gap is reported.
    """
    P = p0.probs / p0.probs.sum()
    lb = P * floor_delta / (1.0 - floor_delta)
    free_mass = 1.0 - lb.sum()
    Q = (np.full_like(P, 1.0 / P.size) if q_init is None else q_init.probs / q_init.probs.sum())
    Q = lb + project_simplex(Q - lb, free_mass)
    vol = p0.cell_volume
    history = []
    sol = None
    for k in range(1, steps + 1):
        sol = solve_optimal_discriminator(p0, DensityGrid(p0.lo, p0.hi, p0.cells, Q / vol), lam)
        grad = np.log1p(-sol.D)
        Q = lb + project_simplex(Q - step0 / np.sqrt(k) * grad - lb, free_mass)
        if record_every and k % record_every == 0:
            history.append((k, float(np.max(np.abs(Q - P))) / vol))
    q = DensityGrid(p0.lo, p0.hi, p0.cells, Q / vol)
    obj, sol = regularized_value(p0, q, lam)
    grad = np.log1p(-sol.D)
    free = Q > lb * (1 + 1e-9)
    gap = float(grad[free].max() - grad[free].min()) if free.any() else 0.0
    return QLambdaResult(
        q=q, lam=float(lam), steps=steps, objective=obj, gap=gap,
        sup_norm=float(np.max(np.abs(q.density - p0.density))),
        js=js_on_grid(P, Q / Q.sum()), history=history,
    )
