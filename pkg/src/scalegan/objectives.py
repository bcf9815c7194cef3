"""GAN value function and the discriminator-output regularizers.

Every function accepts graph nodes (and then returns a node on the same
graph, for training) or plain arrays/floats (and then returns a float).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node

PROB_CLAMP = 1e-7
REG_KINDS = ("variance", "modified", "none")
GEN_LOSS_KINDS = ("saturating", "non_saturating")


def _lift(*xs):
    graph = next((x.graph for x in xs if isinstance(x, Node)), None)
    numeric = graph is None
    if numeric:
        graph = Graph()
    nodes = [x if isinstance(x, Node) else graph.const(np.asarray(x, dtype=np.float64)) for x in xs]
    return graph, nodes, numeric


def _out(node: Node, numeric: bool):
    return node.item() if numeric else node


def _clamped_log(g: Graph, p: Node) -> Node:
    return g.log(g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def _clamped_log1m(g: Graph, p: Node) -> Node:
    one_minus = g.shift(g.scale(p, -1.0), 1.0)
    return g.log(g.clamp(one_minus, PROB_CLAMP, 1.0 - PROB_CLAMP))


def disc_loss(d_real, d_fake, reg_value=0.0, lam: float = 0.0):
    """mean log D(real) + mean log(1 - D(fake)) - lam * reg.

    This is the objective the discriminator ascends; the trainer descends
    its negation.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    g, (dr, df, reg), numeric = _lift(d_real, d_fake, reg_value)
    value = g.add(g.mean(_clamped_log(g, dr)), g.mean(_clamped_log1m(g, df)))
    if lam != 0.0:
        value = g.sub(value, g.scale(g.reshape(reg, ()), lam))
    return _out(value, numeric)


def gen_loss(d_fake, kind: str = "saturating"):
    """Quantity the generator minimizes."""
    if kind not in GEN_LOSS_KINDS:
        raise ValueError(f"unknown generator loss {kind!r}")
    g, (df,), numeric = _lift(d_fake)
    if kind == "saturating":
        value = g.mean(_clamped_log1m(g, df))
    else:
        value = g.scale(g.mean(_clamped_log(g, df)), -1.0)
    return _out(value, numeric)


def modified_reg(disc_outputs):
    """Mean of (D - 1/2)^2, the second moment about the fixed value 1/2."""
    g, (v,), numeric = _lift(disc_outputs)
    if v.value.size == 0:
        raise ValueError("modified_reg of an empty batch")
    return _out(g.mean(g.square(g.shift(v, -0.5))), numeric)


def grouped_variance(outputs, weights=None):
    """Weighted mean over rows of the biased variance along each row.

    ``outputs`` has shape (k, n); row j holds D(s_{t_j} x_i, t_j), i = 1..n.
    ``weights`` (length k, summing to 1) lets duplicate t_j be evaluated once.
    """
    g, (v,), numeric = _lift(outputs)
    if v.value.ndim != 2 or v.shape[1] < 2:
        raise ValueError("need a (k, n) batch with n >= 2")
    per_t = g.var(v, axis=1)
    if weights is None:
        total = g.mean(per_t)
    else:
        total = g.sum(g.mul(per_t, g.const(np.asarray(weights, dtype=np.float64))))
    return _out(total, numeric)


def variance_reg(disc, schedule, x_batch, t_batch, t_max=None, *, graph: Graph | None = None,
                 nodes=None, max_distinct: int | None = None, rng=None):
    """(1/n) sum_j Var_i D(s_{t_j} x_i, t_j) over the real samples x_i.

    Equal t_j give equal inner variances, so each distinct value is evaluated
    once and weighted by its multiplicity. ``max_distinct`` caps how many of
    the t_j draws are used (a random subset picked with ``rng``).
    Returns a float, or a node on ``graph`` when one is given.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    t = np.asarray(t_batch).reshape(-1)
    n = x.shape[0]
    if n < 2:
        raise ValueError("variance regularizer needs at least 2 samples")
    t_max = schedule.T if t_max is None else t_max
    if max_distinct is not None and t.size > max_distinct:
        t = rng.choice(t, size=max_distinct, replace=False)
    uniq, counts = np.unique(t, return_counts=True)
    k = uniq.size
    s = schedule.values(uniq)
    y = (s[:, None, None] * x[None, :, :]).reshape(k * n, -1)
    numeric = graph is None
    g = Graph() if numeric else graph
    d = disc.prob(g, g.input(y), disc.t_features(np.repeat(uniq, n), t_max), nodes)
    total = grouped_variance(g.reshape(d, (k, n)), counts / counts.sum())
    return total.item() if numeric else total
