"""Eight-mode Gaussian ring used by the toy experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GmmSpec:
    K: int = 8
    var: float = 0.05  # per-axis variance; covariance is var * I_2
    n: int = 80

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.var))

    @property
    def means(self) -> np.ndarray:
        k = np.arange(1, self.K + 1)
        ang = 2.0 * np.pi * k / self.K
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def to_dict(self) -> dict:
        return asdict(self)


def sample(spec: GmmSpec, n: int, rng: np.random.Generator, components=None) -> np.ndarray:
    """n points; component indices drawn uniformly unless ``components`` is given."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if components is None:
        components = rng.integers(0, spec.K, size=n)
    components = np.asarray(components)
    noise = rng.standard_normal((n, 2)) * spec.sigma
    return spec.means[components] + noise


def density(spec: GmmSpec, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diff = pts[:, None, :] - spec.means[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    if spec.var == 0:
        raise ValueError("density undefined for zero variance")
    norm = 1.0 / (2.0 * np.pi * spec.var)
    return norm * np.mean(np.exp(-0.5 * sq / spec.var), axis=1)


def save_csv(path, points: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in points:
            w.writerow([repr(float(x)), repr(float(y))])


def load_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(a), float(b)] for a, b in rows[1:]])
