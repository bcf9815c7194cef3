import numpy as np
import pytest

from scalegan.autodiff import Graph, ShapeError
from scalegan.models import (CheckpointError, Discriminator, Generator, MLP, check_architecture,
                             discriminate, generate, read_checkpoint, time_features,
                             write_checkpoint)
from fd_oracle import central_diff, mlp_forward, rel_err, sigmoid


def test_zeroed_generator_outputs_zero():
    gen = Generator(2, 2, 16, rng=np.random.default_rng(0))
    gen.zero_()
    out = generate(gen, np.random.default_rng(1).normal(size=(5, 2)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_generator_shape_and_determinism():
    gen = Generator(2, 2, 32, rng=np.random.default_rng(0))
    z = np.random.default_rng(3).normal(size=(80, 2))
    a, b = generate(gen, z), generate(gen, z)
    assert a.shape == (80, 2)
    assert np.array_equal(a, b)


def test_generator_rejects_bad_latent_shape():
    gen = Generator(3, 2, 8)
    with pytest.raises(ShapeError):
        generate(gen, np.zeros((4, 2)))


def test_zeroed_discriminator_is_one_half():
    disc = Discriminator(2, 16)
    disc.zero_()
    out = discriminate(disc, np.random.default_rng(0).normal(size=(7, 2)), np.arange(7), 10)
    assert np.array_equal(out, np.full(7, 0.5))


def test_discriminator_range_and_determinism():
    disc = Discriminator(2, 32, rng=np.random.default_rng(2), final_scale=3.0)
    y = np.random.default_rng(0).normal(size=(4, 2)) * 5
    a = discriminate(disc, y, [0, 1, 2, 3], 3)
    assert a.shape == (4,)
    assert np.all((a > 0) & (a < 1))
    assert np.array_equal(a, discriminate(disc, y, [0, 1, 2, 3], 3))


def test_intensity_out_of_range():
    disc = Discriminator(2, 8)
    with pytest.raises(ValueError):
        discriminate(disc, np.zeros((2, 2)), [0, 6], 5)
    with pytest.raises(ValueError):
        discriminate(disc, np.zeros((2, 2)), [-1, 0], 5)


def test_t_zero_output_independent_of_t_max():
    disc = Discriminator(2, 16, rng=np.random.default_rng(4))
    y = np.random.default_rng(0).normal(size=(6, 2))
    a = discriminate(disc, y, np.zeros(6), 10)
    b = discriminate(disc, y, np.zeros(6), 500)
    assert np.array_equal(a, b)


def test_t_feature_is_normalized_intensity():
    np.testing.assert_array_equal(time_features([0, 50, 100], 100), [[0.0], [0.5], [1.0]])
    sin = time_features([0], 10, "sinusoidal", 3)
    assert sin.shape == (1, 6) and np.all(sin == 0)


def test_architecture_sizes():
    gen = Generator(2, 2, 128)
    disc = Discriminator(2, 128)
    assert gen.sizes == [2, 128, 128, 128, 2]
    assert disc.sizes == [3, 128, 128, 128, 1]
    assert gen.num_params == 2 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 2 + 2


@pytest.mark.parametrize("who", ["generator", "discriminator"])
def test_parameter_gradients_match_numpy_reference(who):
    rng = np.random.default_rng(11)
    if who == "generator":
        net = Generator(2, 2, 12, rng=rng, final_scale=1.0)
        x = rng.normal(size=(5, 2))
    else:
        net = Discriminator(2, 12, rng=rng, final_scale=1.0)
        x = np.concatenate([rng.normal(size=(5, 2)), rng.uniform(0, 1, (5, 1))], axis=1)
    w = rng.normal(size=(5, net.sizes[-1]))
    g = Graph()
    nodes = net.bind(g)
    out = net.forward(g, g.input(x), nodes)
    if who == "discriminator":
        out = g.sigmoid(out)
    grads = g.backward(g.sum(g.mul(out, g.const(w))))
    params = net.params

    def f():
        o, _ = mlp_forward(params, x, net.slope)
        return float(np.sum((sigmoid(o) if who == "discriminator" else o) * w))

    for p, n in zip(params, nodes):
        assert rel_err(grads[n.id], central_diff(f, p)) <= 1e-5


def test_checkpoint_round_trip(tmp_path):
    blocks = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.array([np.pi]))]
    write_checkpoint(tmp_path / "c.bin", {"seed": 3, "iteration": 7}, blocks)
    header, arrays = read_checkpoint(tmp_path / "c.bin")
    assert header["seed"] == 3 and header["iteration"] == 7
    assert np.array_equal(arrays["a"], blocks[0][1])
    assert arrays["b"][0] == np.pi


def test_checkpoint_is_little_endian_float64_after_header(tmp_path):
    write_checkpoint(tmp_path / "c.bin", {}, [("x", np.array([1.0, -2.0]))])
    raw = (tmp_path / "c.bin").read_bytes()
    body = raw[raw.index(b"\n") + 1:]
    assert np.array_equal(np.frombuffer(body, "<f8"), [1.0, -2.0])


@pytest.mark.parametrize("damage", ["truncate", "garbage_header", "extra", "no_newline"])
def test_corrupted_checkpoint(tmp_path, damage):
    path = tmp_path / "c.bin"
    write_checkpoint(path, {}, [("x", np.ones(4))])
    raw = path.read_bytes()
    if damage == "truncate":
        raw = raw[:-5]
    elif damage == "garbage_header":
        raw = b"{not json" + raw[raw.index(b"\n"):]
    elif damage == "extra":
        raw = raw + b"\x00" * 8
    else:
        raw = b"abc"
    path.write_bytes(raw)
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_architecture_mismatch_names_field():
    with pytest.raises(CheckpointError, match="'width'"):
        check_architecture(Generator(width=8).architecture(), Generator(width=16).architecture(),
                           "generator")


def test_set_params_shape_check():
    m = MLP([2, 3, 1])
    with pytest.raises(ValueError):
        m.set_params([np.zeros((3, 2)), np.zeros(3), np.zeros((3, 1)), np.zeros(1)])
