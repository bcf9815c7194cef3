"""Scaling schedule s_t and the transforms applied to real and generated samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TRANSFORM_KINDS = ("scale_only", "noise_only", "diffusion", "rotate90k", "identity")
INVERTIBLE_KINDS = ("scale_only", "rotate90k", "identity")


class ScheduleError(ValueError):
    pass


class NotInvertibleError(TypeError):
    pass


@dataclass(frozen=True)
class ScalingSchedule:
    beta0: float
    betaT: float
    T: int
    s: np.ndarray = field(repr=False, compare=False)

    def __getitem__(self, t):
        return self.s[t]

    def values(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (np.any(t < 0) or np.any(t > self.T)):
            raise ScheduleError(f"intensity outside [0, {self.T}]")
        return self.s[t.astype(np.int64)]

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "betaT": self.betaT, "T": self.T}


def build_schedule(beta0: float, betaT: float, T: int) -> ScalingSchedule:
    """s_0 = 1, s_t = s_{t-1} * sqrt(1 - beta0 (1 - t/T) - betaT t/T)."""
    if not (0.0 <= beta0 <= betaT < 1.0):
        raise ScheduleError(f"need 0 <= beta0 <= betaT < 1, got beta0={beta0}, betaT={betaT}")
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be an integer >= 1, got {T}")
    T = int(T)
    t = np.arange(1, T + 1, dtype=np.float64)
    radicand = 1.0 - beta0 * (1.0 - t / T) - betaT * t / T
    if np.any(radicand <= 0):
        raise ScheduleError("non-positive radicand; schedule parameters too aggressive")
    s = np.empty(T + 1)
    s[0] = 1.0
    for k in range(1, T + 1):
        s[k] = s[k - 1] * np.sqrt(radicand[k - 1])
    s.setflags(write=False)
    return ScalingSchedule(float(beta0), float(betaT), T, s)


@dataclass(frozen=True)
class Transform:
    kind: str = "scale_only"
    sigma_noise: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.sigma_noise < 0:
            raise ValueError("sigma_noise must be non-negative")

    @property
    def invertible(self) -> bool:
        return self.kind in INVERTIBLE_KINDS


def rotate(x: np.ndarray, k: int) -> np.ndarray:
    """Rotate the first two coordinates by k * pi/2 (exact, no trig)."""
    k = int(k) % 4
    out = np.array(x, dtype=np.float64, copy=True)
    a, b = x[..., 0], x[..., 1]
    if k == 1:
        out[..., 0], out[..., 1] = -b, a
    elif k == 2:
        out[..., 0], out[..., 1] = -a, -b
    elif k == 3:
        out[..., 0], out[..., 1] = b, -a
    return out


def apply(transform: Transform, schedule: ScalingSchedule, x: np.ndarray, t,
          rng: Optional[np.random.Generator] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    if schedule is not None:
        schedule.values(t)  # range check
    kind = transform.kind
    if kind == "identity":
        return x.copy()
    if kind == "rotate90k":
        # S_0 is the identity for every kind; rows with t > 0 are rotated
        return np.where((t > 0)[:, None], rotate(x, transform.k), x)
    if kind == "noise_only":
        return x + transform.sigma_noise * rng.standard_normal(x.shape)
    s = schedule.values(t)[:, None]
    if kind == "scale_only":
        return s * x
    # diffusion
    eps = rng.standard_normal(x.shape)
    return s * x + np.sqrt(1.0 - s * s) * transform.sigma_noise * eps


def pullback(transform: Transform, schedule: ScalingSchedule, grad_y: np.ndarray, t) -> np.ndarray:
    """J^T grad for the Jacobian J = d x_tilde / d x of the transform at intensity t.

    This is the gradient a sample actually receives through the transform.
    Additive noise does not depend on x, so noise and diffusion pull back
    like their deterministic parts.
    """
    grad_y = np.asarray(grad_y, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t), (grad_y.shape[0],))
    kind = transform.kind
    if kind in ("identity", "noise_only"):
        return grad_y.copy()
    if kind == "rotate90k":
        return np.where((t > 0)[:, None], rotate(grad_y, -transform.k), grad_y)
    return schedule.values(t)[:, None] * grad_y


def invert(transform: Transform, schedule: ScalingSchedule, x_tilde: np.ndarray, t) -> np.ndarray:
    if not transform.invertible:
        raise NotInvertibleError(f"transform {transform.kind!r} has no inverse")
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if transform.kind == "identity":
        return x_tilde.copy()
    t = np.broadcast_to(np.asarray(t), (x_tilde.shape[0],))
    if transform.kind == "rotate90k":
        return np.where((t > 0)[:, None], rotate(x_tilde, -transform.k), x_tilde)
    return x_tilde / schedule.values(t)[:, None]


def apply_node(g, transform: Transform, schedule: ScalingSchedule, y, t,
               rng: Optional[np.random.Generator] = None):
    """Graph version of :func:`apply` so gradients flow back into ``y``.

    Draws exactly the same noise as :func:`apply` for the same rng state.
    """
    n = y.shape[0]
    t = np.broadcast_to(np.asarray(t), (n,))
    if schedule is not None:
        schedule.values(t)
    kind = transform.kind
    if kind == "identity":
        return y
    if kind == "rotate90k":
        R = np.linalg.matrix_power(np.array([[0.0, 1.0], [-1.0, 0.0]]), transform.k % 4)
        mask = (t > 0).astype(np.float64)[:, None]
        return g.add(g.mul(g.matmul(y, g.const(R)), g.const(mask)), g.mul(y, g.const(1.0 - mask)))
    if kind == "noise_only":
        return g.add(y, g.const(transform.sigma_noise * rng.standard_normal(y.shape)))
    s = schedule.values(t)[:, None]
    scaled = g.mul(y, g.const(s))
    if kind == "scale_only":
        return scaled
    eps = rng.standard_normal(y.shape)
    return g.add(scaled, g.const(np.sqrt(1.0 - s * s) * transform.sigma_noise * eps))
