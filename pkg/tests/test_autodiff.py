import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scalegan.autodiff import (Graph, NonFiniteError, ShapeError, UnreachableError, backward,
                               grad_wrt_input)
from fd_oracle import central_diff, rel_err


def test_leaky_relu_values():
    g = Graph()
    out = g.leaky_relu(g.const(np.array([-1.0, 2.0])), 0.2)
    np.testing.assert_array_equal(out.value, [-0.2, 2.0])


def test_variance_of_constant_batch_is_zero():
    g = Graph()
    assert g.var(g.const(np.ones(3))).item() == 0.0


def test_sigmoid_at_zero():
    g = Graph()
    assert g.sigmoid(g.const(0.0)).item() == 0.5


def test_square_derivative():
    g = Graph()
    x = g.param(np.array(3.0))
    grads = g.backward(g.square(x))
    assert grads[x.id] == pytest.approx(6.0)


def test_sigmoid_derivative_at_zero():
    g = Graph()
    x = g.param(np.array(0.0))
    assert g.backward(g.sigmoid(x))[x.id] == pytest.approx(0.25)


def test_seed_gradient_of_loss_is_one():
    g = Graph()
    x = g.param(np.array(1.5))
    loss = g.square(x)
    assert g.backward(loss)[loss.id] == 1.0


def test_input_gradient_of_linear_map():
    g = Graph()
    x = g.input(np.array([[1.0], [-4.0]]), requires_grad=True)
    y = g.scale(x, 2.0)
    np.testing.assert_array_equal(grad_wrt_input(g, y, x), [[2.0], [2.0]])


def test_input_gradient_through_sigmoid_of_dot():
    g = Graph()
    x = g.input(np.zeros((1, 2)), requires_grad=True)
    d = g.sigmoid(g.matmul(x, g.const(np.array([[1.0], [0.0]]))))
    np.testing.assert_allclose(grad_wrt_input(g, d, x), [[0.25, 0.0]])


def test_non_scalar_loss_rejected():
    g = Graph()
    x = g.param(np.ones(3))
    with pytest.raises(ShapeError):
        g.backward(g.square(x))


def test_matmul_shape_mismatch():
    g = Graph()
    with pytest.raises(ShapeError):
        g.matmul(g.const(np.ones((2, 3))), g.const(np.ones((2, 3))))


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_output_raises():
    g = Graph()
    with pytest.raises(NonFiniteError):
        g.scale(g.const(np.array([1e308])), 10.0)
    with pytest.raises(NonFiniteError):
        g.log(g.const(np.array([0.0])))


def test_unreachable_input():
    g = Graph()
    a = g.input(np.ones((2, 2)), requires_grad=True)
    b = g.input(np.ones((2, 2)), requires_grad=True)
    out = g.square(a)
    with pytest.raises(UnreachableError):
        grad_wrt_input(g, out, b)
    c = g.input(np.ones((2, 2)))
    with pytest.raises(UnreachableError):
        grad_wrt_input(g, g.square(c), c)


def test_inputs_precede_outputs():
    g = Graph()
    x = g.param(np.ones((3, 2)))
    g.mean(g.sigmoid(g.matmul(x, g.const(np.ones((2, 2))))))
    for node in g.nodes:
        assert all(i < node.id for i in node.inputs)


def test_leaky_relu_derivative_at_zero_is_slope():
    g = Graph()
    x = g.param(np.array([0.0]))
    assert g.backward(g.sum(g.leaky_relu(x, 0.3)))[x.id][0] == pytest.approx(0.3)


# every op against central differences on 100 random instances in [-2, 2]

def _unary(name, **kw):
    def build(g, xs):
        return getattr(g, name)(xs[0], **kw)
    return build


OPS = {
    "matmul": (lambda g, xs: g.matmul(xs[0], xs[1]), [(3, 4), (4, 2)]),
    "add_bias": (lambda g, xs: g.add_bias(xs[0], xs[1]), [(3, 4), (4,)]),
    "add_broadcast": (lambda g, xs: g.add(xs[0], xs[1]), [(3, 4), (1, 4)]),
    "sub": (lambda g, xs: g.sub(xs[0], xs[1]), [(3, 4), (3, 4)]),
    "mul_broadcast": (lambda g, xs: g.mul(xs[0], xs[1]), [(3, 4), (3, 1)]),
    "scale": (lambda g, xs: g.scale(xs[0], -1.7), [(3, 4)]),
    "shift": (lambda g, xs: g.shift(xs[0], 0.3), [(3, 4)]),
    "leaky_relu": (_unary("leaky_relu", slope=0.2), [(3, 4)]),
    "sigmoid": (_unary("sigmoid"), [(3, 4)]),
    "log": (lambda g, xs: g.log(g.shift(g.square(xs[0]), 0.5)), [(3, 4)]),
    "square": (_unary("square"), [(3, 4)]),
    "sum_axis": (lambda g, xs: g.sum(xs[0], axis=0), [(3, 4)]),
    "mean": (lambda g, xs: g.mean(xs[0], axis=1), [(3, 4)]),
    "var": (lambda g, xs: g.var(xs[0], axis=0), [(5, 3)]),
    "concat": (lambda g, xs: g.concat([xs[0], xs[1]], axis=1), [(3, 2), (3, 1)]),
    "reshape": (lambda g, xs: g.reshape(xs[0], (2, 6)), [(3, 4)]),
    "slice_rows": (lambda g, xs: g.slice_rows(xs[0], 1, 3), [(4, 2)]),
    "clamp": (lambda g, xs: g.clamp(xs[0], -1.0, 1.0), [(3, 4)]),
}


def _far_from_kinks(name, arrs):
    # finite differences are only meaningful away from the non-smooth points
    if name == "leaky_relu":
        return np.min(np.abs(arrs[0])) > 1e-3
    if name == "clamp":
        return np.min(np.abs(np.abs(arrs[0]) - 1.0)) > 1e-3
    return True


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    build, shapes = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    done = 0
    while done < 100:
        arrs = [rng.uniform(-2, 2, s) for s in shapes]
        if not _far_from_kinks(name, arrs):
            continue
        g = Graph()
        nodes = [g.param(a) for a in arrs]
        out = build(g, nodes)
        w = rng.normal(size=out.shape)
        loss = g.sum(g.mul(out, g.const(w)))
        grads = g.backward(loss)

        def f():
            g2 = Graph()
            return float(np.sum(build(g2, [g2.const(a) for a in arrs]).value * w))

        for a, n in zip(arrs, nodes):
            assert rel_err(grads[n.id], central_diff(f, a)) <= 1e-5, name
        done += 1


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, (3, 2), elements=st.floats(-2, 2)))
def test_backward_is_linear_in_the_loss(x, w):
    def losses(g):
        xn, wn = g.param(x), g.param(w)
        h = g.sigmoid(g.matmul(xn, wn))
        return xn, wn, g.mean(g.square(h)), g.sum(h)

    g = Graph()
    xn, wn, l1, l2 = losses(g)
    both = g.backward(g.add(l1, l2))
    g1 = Graph()
    xa, wa, l1a, _ = losses(g1)
    ga = g1.backward(l1a)
    g2 = Graph()
    xb, wb, _, l2b = losses(g2)
    gb = g2.backward(l2b)
    np.testing.assert_allclose(both[xn.id], ga[xa.id] + gb[xb.id], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(both[wn.id], ga[wa.id] + gb[wb.id], rtol=1e-12, atol=1e-14)


def test_repeat_forward_backward_is_bit_identical():
    def run():
        rng = np.random.default_rng(5)
        g = Graph()
        x = g.param(rng.normal(size=(8, 3)))
        w = g.param(rng.normal(size=(3, 1)))
        loss = g.mean(g.log(g.sigmoid(g.matmul(x, w))))
        gr = backward(g, loss)
        return gr[x.id], gr[w.id]

    a, b = run(), run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
