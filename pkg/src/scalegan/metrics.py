"""Diagnostics: mode-radius precision/recall, discriminator input gradients, JS on grids."""

from __future__ import annotations

import numpy as np

from . import augmentation as aug
from .autodiff import Graph, grad_wrt_input

COSINE_MIN_NORM = 1e-12


def precision_recall(samples, modes, sigma: float, threshold_mult: float = 3.0):
    """Fraction of samples within ``threshold_mult * sigma`` of some mode, and
    fraction of modes with at least one such sample."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("precision/recall of an empty sample set")
    modes = np.asarray(modes, dtype=np.float64)
    dist = np.linalg.norm(x[:, None, :] - modes[None, :, :], axis=-1)
    close = dist <= threshold_mult * sigma
    return float(close.any(axis=1).mean()), float(close.any(axis=0).mean())


def input_gradients(disc, y, t, t_max) -> np.ndarray:
    """Rows of grad_y D(y, t); ``disc`` only needs an ``input_grad`` method."""
    return disc.input_grad(np.asarray(y, dtype=np.float64), np.asarray(t), t_max)


def disc_grad_norm(disc, points, t_batch, t_max) -> float:
    grads = input_gradients(disc, points, np.broadcast_to(t_batch, (len(points),)), t_max)
    return float(np.mean(np.linalg.norm(grads, axis=1)))


def cosine_similarity_diag(disc, schedule, x_batch, t_batch, t_max=None,
                           transform: aug.Transform | None = None, rng=None) -> float:
    """Mean cosine between the gradient reaching x through the transform at t and
    grad_y D(x, 0).

    For scaling (and its noisy variant) the pulled-back gradient is the raw
    gradient times s_t, so this is the plain angle between grad D(x~, t) and
    grad D(x, 0). Pairs where either norm is below 1e-12 are skipped; NaN
    when every pair is skipped.
    """
    transform = aug.Transform("scale_only") if transform is None else transform
    t_max = schedule.T if t_max is None else t_max
    x = np.asarray(x_batch, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t_batch), (x.shape[0],))
    x_tilde = aug.apply(transform, schedule, x, t, rng)
    g_t = aug.pullback(transform, schedule, input_gradients(disc, x_tilde, t, t_max), t)
    g_0 = input_gradients(disc, x, np.zeros_like(t), t_max)
    n_t = np.linalg.norm(g_t, axis=1)
    n_0 = np.linalg.norm(g_0, axis=1)
    keep = (n_t >= COSINE_MIN_NORM) & (n_0 >= COSINE_MIN_NORM)
    if not keep.any():
        return float("nan")
    cos = np.sum(g_t[keep] * g_0[keep], axis=1) / (n_t[keep] * n_0[keep])
    return float(np.mean(np.clip(cos, -1.0, 1.0)))


class InverseTransformDiscriminator:
    """D(y, t) = base(S_t^{-1} y, 0): a discriminator that factors through the
    inverse of an invertible transform, built on the autodiff graph."""

    def __init__(self, base, schedule, transform: aug.Transform | None = None):
        self.base = base
        self.schedule = schedule
        self.transform = aug.Transform("scale_only") if transform is None else transform
        if not self.transform.invertible:
            raise aug.NotInvertibleError(f"{self.transform.kind!r} is not invertible")

    def _unwarp(self, g: Graph, y, t):
        kind = self.transform.kind
        if kind == "identity":
            return y
        if kind == "scale_only":
            inv_s = 1.0 / self.schedule.values(t)
            return g.mul(y, g.const(inv_s[:, None]))
        k = self.transform.k % 4
        R = np.linalg.matrix_power(np.array([[0.0, -1.0], [1.0, 0.0]]), k)
        rotated = g.matmul(y, g.const(R))  # rows times R == R^{-1} applied to each row
        mask = (np.asarray(t) > 0).astype(np.float64)[:, None]
        return g.add(g.mul(rotated, g.const(mask)), g.mul(y, g.const(1.0 - mask)))

    def prob_node(self, g: Graph, y, t, t_max):
        u = self._unwarp(g, y, t)
        zeros = np.zeros(y.shape[0])
        return self.base.prob(g, u, self.base.t_features(zeros, t_max))

    def input_grad(self, y, t, t_max) -> np.ndarray:
        g = Graph()
        yn = g.input(y, requires_grad=True)
        return grad_wrt_input(g, self.prob_node(g, yn, np.asarray(t), t_max), yn)

    def __call__(self, y, t, t_max) -> np.ndarray:
        g = Graph()
        return self.prob_node(g, g.input(y), np.asarray(t), t_max).value.reshape(-1)


def js_on_grid(p_grid, q_grid, atol: float = 1e-9) -> float:
    """Jensen-Shannon divergence (natural log) between two cell-probability grids."""
    p = np.asarray(p_grid, dtype=np.float64).reshape(-1)
    q = np.asarray(q_grid, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ValueError("grids differ in size")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative cell probability")
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1.0) > atol:
            raise ValueError(f"{name} grid is not normalized (sum {v.sum()!r})")
    m = 0.5 * (p + q)

    def kl_to_m(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return min(max(0.5 * kl_to_m(p) + 0.5 * kl_to_m(q), 0.0), float(np.log(2.0)))
