"""Acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line (printed in the terminal summary)
before asserting. Criterion 10 trains six full 40k-iteration runs and
takes roughly 45 minutes on one core; set SCALEGAN_SKIP_LONG=1 to skip it.
"""

import math
import os
import time

import numpy as np
import pytest

from scalegan import oracle, trainer
from scalegan.augmentation import build_schedule
from scalegan.autodiff import Graph, grad_wrt_input
from scalegan.metrics import InverseTransformDiscriminator, cosine_similarity_diag, js_on_grid
from scalegan.models import MLP
from scalegan.objectives import grouped_variance
from scalegan.theory_checks import random_grid_pair

from conftest import record
from fd_oracle import central_diff, mlp_forward, rel_err, sigmoid
import vanilla_reference

TOY = build_schedule(1e-4, 0.02, 500)


def _random_mlp_instance(rng):
    sizes = [int(rng.integers(1, 5))] + [int(w) for w in rng.integers(1, 33, 3)] + [int(rng.integers(1, 4))]
    net = MLP(sizes, 0.2, rng, final_scale=1.0)
    for layer in net.layers:
        layer[1][:] = rng.normal(scale=0.1, size=layer[1].shape)
    x = rng.uniform(-2, 2, (int(rng.integers(1, 6)), sizes[0]))
    c = rng.normal(size=(x.shape[0], sizes[-1]))
    return net, x, c


def test_criterion_01_autodiff_vs_finite_differences():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, done = 0.0, 0
    while done < 100:
        net, x, c = _random_mlp_instance(rng)
        _, pre = mlp_forward(net.params, x, net.slope)
        if any(np.min(np.abs(a)) < 1e-3 for a in pre):
            continue  # a kink within reach of the finite-difference step; redraw
        g = Graph()
        nodes = net.bind(g)
        xn = g.input(x, requires_grad=True)
        loss = g.sum(g.mul(g.sigmoid(net.forward(g, xn, nodes)), g.const(c)))
        grads = g.backward(loss)
        params = net.params

        def f():
            return float(np.sum(sigmoid(mlp_forward(params, x, net.slope)[0]) * c))

        for p, n in zip(params, nodes):
            worst = max(worst, rel_err(grads[n.id], central_diff(f, p)))
        g2 = Graph()
        xn2 = g2.input(x, requires_grad=True)
        out2 = g2.sum(g2.mul(g2.sigmoid(net.forward(g2, xn2)), g2.const(c)))
        worst = max(worst, rel_err(grad_wrt_input(g2, out2, xn2), central_diff(f, x)))
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 30
    record("1", ok, f"max relative error {worst:.2e} (tol 1e-5) over 100 MLPs in {elapsed:.1f}s (limit 30s)")
    assert ok


def test_criterion_02_vanilla_degeneracy_bitwise():
    state = trainer.init_state(trainer.preset_config("toy-vanilla", seed=0))
    cfg = state.config
    assert cfg.transform == "identity" and cfg.lam == 0 and cfg.mix_weight == 1.0
    mismatch = None
    for i, (ld, lg) in enumerate(vanilla_reference.run(0, 1000)):
        rec = trainer.train_step(state)
        if (rec["loss_d"], rec["loss_g"]) != (ld, lg):
            mismatch = i + 1
            break
    record("2", mismatch is None,
           "1000 steps bit-identical to the reference loop" if mismatch is None
           else f"first loss mismatch at step {mismatch}")
    assert mismatch is None


def test_criterion_03_vanilla_closed_form():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        p0, q = random_grid_pair(rng, int(rng.integers(4, 65)))
        sol = oracle.solve_optimal_discriminator(p0, q, 0.0)
        worst = max(worst, float(np.max(np.abs(sol.D - p0.density / (p0.density + q.density)))))
    ok = worst <= 1e-10
    record("3", ok, f"max |D - p0/(p0+q)| = {worst:.2e} over 20 grids (tol 1e-10)")
    assert ok


def test_criterion_04_scale_invariance():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(5):
        p0, q = random_grid_pair(rng, 32)
        for lam in (0.0, 0.001, 0.0027):
            worst = max(worst, oracle.verify_scale_invariance(p0, q, TOY, lam, [50, 200, 500]))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 60
    record("4", ok, f"max |D_t(s_t x) - D_0(x)| = {worst:.2e} (tol 1e-8) in {elapsed:.1f}s")
    assert ok


def test_criterion_05_regularization_bound():
    delta = 0.3
    lam = oracle.lambda_delta(delta)
    bound = 4 * lam * ((1 - delta) / delta) ** 2
    rng = np.random.default_rng(5)
    sup, low_violation = 0.0, -np.inf
    for _ in range(50):
        p0, q = random_grid_pair(rng, int(rng.integers(8, 65)), delta=delta)
        sol = oracle.solve_optimal_discriminator(p0, q, lam)
        van = p0.density / (p0.density + q.density)
        sup = max(sup, float(np.max(np.abs(sol.D - van))))
        low_violation = max(low_violation, float(np.max(van - 4 * lam - sol.D)))
    ok = sup <= bound and low_violation <= 0
    record("5", ok, f"sup |D - p0/(p0+q)| = {sup:.2e} <= {bound:.4f}; lower side slack "
                    f"{-low_violation:.2e} >= 0 (lambda = {lam:g})")
    assert ok


def test_criterion_06_uniform_ratio_collapse():
    rng = np.random.default_rng(6)
    ok, worst = True, 0.0
    for lam in (0.0, 0.01, 0.1):
        for _ in range(5):
            p0, _ = random_grid_pair(rng, int(rng.integers(4, 65)))
            sol = oracle.solve_optimal_discriminator(p0, p0, lam)
            ok &= bool(np.all(sol.D == 0.5) and sol.c == 0.5)
            worst = max(worst, sol.h_residual, sol.cubic_residual)
    ok &= worst <= 1e-12
    record("6", ok, f"D == 0.5 and c == 0.5 exactly; max residual {worst:.1e} (tol 1e-12)")
    assert ok


def test_criterion_07_q_lambda_trend():
    p0 = oracle.DensityGrid.from_probs(np.random.default_rng(7).uniform(0.2, 1.0, 16), 0.0, 1.0)
    norms = {lam: oracle.solve_q_lambda(p0, lam, steps=10_000).sup_norm for lam in (0.1, 0.01, 0.001)}
    js0 = oracle.solve_q_lambda(p0, 0.0, steps=10_000).js
    seq = [norms[0.1], norms[0.01], norms[0.001]]
    decreasing = seq[0] > seq[1] > seq[2]
    ok = decreasing and js0 <= 1e-4
    record("7", ok, "||q_lam - p0||_inf at lam = 0.1, 0.01, 0.001: "
                    + ", ".join(f"{v:.2e}" for v in seq)
                    + f" ({'strictly decreasing' if decreasing else 'NOT strictly decreasing'}); "
                    f"JS(p0, q_0) = {js0:.1e} (tol 1e-4)")
    assert ok


class SmoothG:
    """g(u) = sigmoid(w . u + 0.3 |u|^2), smooth and fixed."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def t_features(self, t, t_max):
        return np.zeros((len(t), 0))

    def prob(self, g, u, feats):
        lin = g.matmul(u, g.const(self.w[:, None]))
        quad = g.scale(g.sum(g.square(u), axis=1), 0.3)
        return g.sigmoid(g.add(lin, g.reshape(quad, (u.shape[0], 1))))


def test_criterion_08_gradient_direction_invariance():
    inv = InverseTransformDiscriminator(SmoothG([1.2, -0.7]), TOY)
    x = np.random.default_rng(8).normal(size=(64, 2))
    worst = min(cosine_similarity_diag(inv, TOY, x, np.full(64, t), 500) for t in range(501))
    ok = worst >= 1 - 1e-6
    record("8", ok, f"min over t = 0..500 of mean cosine = {worst:.12f} (>= 1 - 1e-6)")
    assert ok


def test_criterion_09_variance_identity():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        v = rng.uniform(0, 1, int(rng.integers(2, 129)))
        pair = float(np.mean((v[:, None] - v[None, :]) ** 2))
        worst = max(worst, abs(2 * grouped_variance(v[None, :]) - pair))
    ok = worst <= 1e-12
    record("9", ok, f"max |2 Var(v) - mean pairwise (v_i - v_j)^2| = {worst:.1e} (tol 1e-12)")
    assert ok


@pytest.fixture(scope="module")
def long_runs(tmp_path_factory):
    if os.environ.get("SCALEGAN_SKIP_LONG"):
        pytest.skip("SCALEGAN_SKIP_LONG set")
    root = tmp_path_factory.mktemp("long")
    out = {}
    for preset in ("toy-scalegan", "fixed-scale-1.5"):
        for seed in (0, 1, 2):
            t0 = time.perf_counter()
            trainer.run(trainer.preset_config(preset, seed=seed), root / preset / f"seed{seed}")
            out[preset, seed] = (time.perf_counter() - t0,
                                 trainer.summarize(root / preset / f"seed{seed}" / "metrics.csv"))
    return out


@pytest.mark.slow
def test_criterion_10_toy_training_stability(long_runs):
    good = [s for s in range(3)
            if long_runs["toy-scalegan", s][1]["final_recall"] >= 7 / 8
            and long_runs["toy-scalegan", s][1]["final_precision"] >= 0.8]
    dropped = [s for s in range(3) if long_runs["fixed-scale-1.5", s][1]["max_recall_drop"] >= 0.25]
    slowest = max(t for t, _ in long_runs.values())
    ok = len(good) >= 2 and len(dropped) >= 1 and slowest <= 15 * 60
    sg = "; ".join(f"seed {s}: P={long_runs['toy-scalegan', s][1]['final_precision']:.3f} "
                   f"R={long_runs['toy-scalegan', s][1]['final_recall']:.3f}" for s in range(3))
    fx = "; ".join(f"seed {s}: drop={long_runs['fixed-scale-1.5', s][1]['max_recall_drop']:.3f}"
                   for s in range(3))
    record("10", ok, f"Scale-GAN {len(good)}/3 seeds meet R>=7/8,P>=0.8 [{sg}]; "
                     f"s=1.5 {len(dropped)}/3 seeds drop >=0.25 [{fx}]; slowest run {slowest / 60:.1f} min")
    assert ok


def test_criterion_11_not_reproducible():
    record("11", True, "large-scale image benchmarks are out of scope and not reproduced (stated, no check)")
