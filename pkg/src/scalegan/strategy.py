"""Intensity distribution pi(t) and the rules that move its ceiling T during training."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

STRATEGY_KINDS = ("fix", "linear_const", "adaptive")
PI0_KINDS = ("uniform", "priority")


@dataclass
class IntensityDistribution:
    """pi(t) = mix_weight * delta_0 + (1 - mix_weight) * pi_0 on {1..current_T}."""

    pi0_kind: str = "uniform"
    current_T: int = 1
    mix_weight: float = 0.5

    def __post_init__(self):
        if self.pi0_kind not in PI0_KINDS:
            raise ValueError(f"unknown pi0 kind {self.pi0_kind!r}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("mix_weight must lie in [0, 1]")

    def pmf(self) -> np.ndarray:
        """Probabilities of t = 0..current_T."""
        T = int(self.current_T)
        p = np.zeros(T + 1)
        if T == 0:
            p[0] = 1.0
            return p
        k = np.arange(1, T + 1, dtype=np.float64)
        w = np.ones(T) if self.pi0_kind == "uniform" else k
        p[1:] = (1.0 - self.mix_weight) * w / w.sum()
        p[0] = self.mix_weight
        return p


def sample_t(dist: IntensityDistribution, rng: np.random.Generator, m: int) -> np.ndarray:
    """m intensities: 0 with probability mix_weight, otherwise a draw from pi_0.

    With current_T == 0 the support of pi_0 is empty and every draw is 0.
    Degenerate mixtures (weight 0 or 1) consume no randomness for the mask.
    """
    T = int(dist.current_T)
    if T == 0 or dist.mix_weight == 1.0:
        return np.zeros(m, dtype=np.int64)
    zero = rng.random(m) < dist.mix_weight if dist.mix_weight > 0 else np.zeros(m, dtype=bool)
    if dist.pi0_kind == "uniform":
        draws = rng.integers(1, T + 1, size=m)
    else:
        # pi_0(t) proportional to t: inverse CDF on the triangular numbers
        u = rng.random(m) * (T * (T + 1) / 2)
        draws = np.ceil((np.sqrt(8.0 * u + 1.0) - 1.0) / 2.0).astype(np.int64)
        draws = np.clip(draws, 1, T)
    return np.where(zero, 0, draws).astype(np.int64)


def estimate_rd(disc_outputs) -> float:
    """Batch mean of sign(D - 0.5); sign(0) = 0."""
    v = np.asarray(disc_outputs, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("r_d of an empty batch")
    return float(np.mean(np.sign(v - 0.5)))


@dataclass
class StrategyState:
    kind: str = "adaptive"
    T_min: int = 0
    T_max: int = 500
    I: int = 40000
    d_target: float = 0.1
    current_T: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if not 0 <= self.T_min <= self.T_max:
            raise ValueError("need 0 <= T_min <= T_max")
        if self.kind == "fix":
            self.current_T = self.T_max
        self.current_T = int(min(max(self.current_T, self.T_min), self.T_max))

    def to_dict(self) -> dict:
        return asdict(self)


def update_T(state: StrategyState, *, r_d: float | None = None, iteration: int | None = None) -> int:
    """Advance ``state.current_T`` in place and return it.

    fix keeps T_max, linear_const needs ``iteration``, adaptive needs ``r_d``.
    """
    if state.kind == "fix":
        T = state.T_max
    elif state.kind == "linear_const":
        if iteration is None:
            raise ValueError("linear_const update needs the iteration")
        T = int(np.floor(min(2.0 * state.T_max * iteration / state.I, state.T_max)))
    else:
        if r_d is None:
            raise ValueError("adaptive update needs r_d")
        T = state.current_T + int(np.sign(r_d - state.d_target))
    state.current_T = int(min(max(T, state.T_min), state.T_max))
    return state.current_T
