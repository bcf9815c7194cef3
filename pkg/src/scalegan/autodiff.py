"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` is an append-only tape. Every op appends one node holding
its cached output; inputs always have smaller ids than the node that consumes
them, so the backward sweep simply walks ids in decreasing order.

    g = Graph()
    x = g.param(np.array([[3.0]]))
    loss = g.mean(g.square(x))
    grads = g.backward(loss)
    grads[x.id]  # -> [[6.]]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Graph",
    "Node",
    "ShapeError",
    "NonFiniteError",
    "UnreachableError",
    "backward",
    "grad_wrt_input",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class UnreachableError(ValueError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    backward_fn: Optional[BackwardFn] = field(default=None, repr=False)
    graph: Optional["Graph"] = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:
    """Tape of nodes; each op method returns the new :class:`Node`."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite

    def __len__(self) -> int:
        return len(self.nodes)

    # -- leaves ---------------------------------------------------------

    def _push(self, op, inputs, value, backward_fn=None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite output in op {op!r} (node {len(self.nodes)})")
        parents = [self.nodes[i] for i in inputs]
        requires_grad = any(p.requires_grad for p in parents)
        node = Node(len(self.nodes), op, tuple(inputs), value, requires_grad,
                    backward_fn if requires_grad else None, self)
        self.nodes.append(node)
        return node

    def _leaf(self, op, value, requires_grad) -> Node:
        value = np.array(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite {op} value")
        node = Node(len(self.nodes), op, (), value, requires_grad, None, self)
        self.nodes.append(node)
        return node

    def param(self, value) -> Node:
        return self._leaf("param", value, True)

    def input(self, value, requires_grad: bool = False) -> Node:
        return self._leaf("input", value, requires_grad)

    def const(self, value) -> Node:
        return self._leaf("const", value, False)

    # -- ops ------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")
        av, bv = a.value, b.value

        def bw(g):
            return (g @ bv.T if a.requires_grad else None,
                    av.T @ g if b.requires_grad else None)

        return self._push("matmul", (a.id, b.id), av @ bv, bw)

    def add_bias(self, x: Node, b: Node) -> Node:
        if x.value.ndim != 2 or b.shape not in ((x.shape[1],), (1, x.shape[1])):
            raise ShapeError(f"add_bias {x.shape} + {b.shape}")
        bshape = b.shape

        def bw(g):
            return g, g.sum(axis=0).reshape(bshape)

        return self._push("add_bias", (x.id, b.id), x.value + b.value.reshape(1, -1), bw)

    def add(self, a: Node, b: Node) -> Node:
        try:
            out = a.value + b.value
        except ValueError as exc:
            raise ShapeError(f"add {a.shape} + {b.shape}") from exc
        sa, sb = a.shape, b.shape
        return self._push("add", (a.id, b.id), out,
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        try:
            out = a.value - b.value
        except ValueError as exc:
            raise ShapeError(f"sub {a.shape} - {b.shape}") from exc
        sa, sb = a.shape, b.shape
        return self._push("sub", (a.id, b.id), out,
                          lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        try:
            out = a.value * b.value
        except ValueError as exc:
            raise ShapeError(f"mul {a.shape} * {b.shape}") from exc
        av, bv = a.value, b.value

        def bw(g):
            return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                    _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

        return self._push("mul", (a.id, b.id), out, bw)

    def scale(self, x: Node, k: float) -> Node:
        k = float(k)
        return self._push("scale", (x.id,), k * x.value, lambda g: (k * g,))

    def shift(self, x: Node, k: float) -> Node:
        return self._push("shift", (x.id,), x.value + float(k), lambda g: (g,))

    def leaky_relu(self, x: Node, slope: float = 0.2) -> Node:
        # derivative at exactly 0 is the negative-side slope
        mask = np.where(x.value > 0, 1.0, slope)
        return self._push("leaky_relu", (x.id,), x.value * mask, lambda g: (g * mask,))

    def sigmoid(self, x: Node) -> Node:
        v = x.value
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return self._push("sigmoid", (x.id,), out, lambda g: (g * out * (1.0 - out),))

    def log(self, x: Node) -> Node:
        if np.any(x.value <= 0):
            raise NonFiniteError("log of non-positive value")
        v = x.value
        return self._push("log", (x.id,), np.log(v), lambda g: (g / v,))

    def square(self, x: Node) -> Node:
        v = x.value
        return self._push("square", (x.id,), v * v, lambda g: (2.0 * g * v,))

    def clamp(self, x: Node, lo: float, hi: float) -> Node:
        """Clip to [lo, hi]; gradient passes only where the input is inside."""
        v = x.value
        inside = ((v >= lo) & (v <= hi)).astype(np.float64)
        return self._push("clamp", (x.id,), np.clip(v, lo, hi), lambda g: (g * inside,))

    def sum(self, x: Node, axis: Optional[int] = None) -> Node:
        shape = x.shape
        if axis is None:
            return self._push("sum", (x.id,), np.asarray(x.value.sum()),
                              lambda g: (np.broadcast_to(g, shape).copy(),))
        out = x.value.sum(axis=axis)
        return self._push("sum", (x.id,), out,
                          lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))

    def mean(self, x: Node, axis: Optional[int] = None) -> Node:
        n = x.value.size if axis is None else x.shape[axis]
        return self.scale(self.sum(x, axis), 1.0 / n)

    def var(self, x: Node, axis: int = 0) -> Node:
        """Biased (divide-by-n) variance along ``axis``."""
        v = x.value
        n = v.shape[axis]
        if n < 1:
            raise ShapeError("variance of empty axis")
        centered = v - v.mean(axis=axis, keepdims=True)
        out = (centered * centered).mean(axis=axis)

        def bw(g):
            # mean of centered is zero, so the mean-subtraction term drops out
            return (np.expand_dims(g, axis) * (2.0 / n) * centered,)

        return self._push("var", (x.id,), out, bw)

    def concat(self, xs: Sequence[Node], axis: int = 1) -> Node:
        vals = [x.value for x in xs]
        try:
            out = np.concatenate(vals, axis=axis)
        except ValueError as exc:
            raise ShapeError(f"concat of {[v.shape for v in vals]}") from exc
        splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
        return self._push("concat", tuple(x.id for x in xs), out,
                          lambda g: tuple(np.split(g, splits, axis=axis)))

    def reshape(self, x: Node, shape: tuple[int, ...]) -> Node:
        old = x.shape
        try:
            out = x.value.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape {old} -> {shape}") from exc
        return self._push("reshape", (x.id,), out, lambda g: (g.reshape(old),))

    def slice_rows(self, x: Node, start: int, stop: int) -> Node:
        shape = x.shape

        def bw(g):
            full = np.zeros(shape)
            full[start:stop] = g
            return (full,)

        return self._push("slice_rows", (x.id,), x.value[start:stop], bw)

    # -- backward -------------------------------------------------------

    def backward(self, loss: Node, seed: Optional[np.ndarray] = None) -> dict[int, np.ndarray]:
        """Gradients of ``loss`` wrt every reachable grad-requiring node.

        ``seed`` overrides the unit cotangent; without it ``loss`` must be scalar.
        """
        if seed is None:
            if loss.value.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.value)
        grads: dict[int, np.ndarray] = {loss.id: np.asarray(seed, dtype=np.float64)}
        for nid in range(loss.id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward_fn is None:
                continue
            for iid, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not self.nodes[iid].requires_grad:
                    continue
                if iid in grads:
                    grads[iid] = grads[iid] + ig
                else:
                    grads[iid] = ig
        return grads

    def reaches(self, output: Node, target: Node) -> bool:
        if target.id > output.id:
            return False
        frontier = {output.id}
        for nid in range(output.id, target.id - 1, -1):
            if nid in frontier:
                if nid == target.id:
                    return True
                frontier.update(self.nodes[nid].inputs)
        return False


def backward(graph: Graph, loss: Node) -> dict[int, np.ndarray]:
    return graph.backward(loss)


def grad_wrt_input(graph: Graph, output: Node, input_node: Node) -> np.ndarray:
    """d(sum of ``output``)/d``input_node``, shaped like the input.

    For a batch of independent rows this is the per-row input gradient.
    """
    if not input_node.requires_grad:
        raise UnreachableError("input node was created without requires_grad")
    if not graph.reaches(output, input_node):
        raise UnreachableError(f"node {input_node.id} does not feed node {output.id}")
    grads = graph.backward(output, seed=np.ones_like(output.value))
    return grads.get(input_node.id, np.zeros_like(input_node.value))
