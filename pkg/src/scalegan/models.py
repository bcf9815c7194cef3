"""Four-layer LeakyReLU MLPs for the generator and the intensity-conditioned discriminator."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Graph, Node, ShapeError, grad_wrt_input

CHECKPOINT_FORMAT = "scalegan-ckpt"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _init_layers(sizes: Sequence[int], rng: np.random.Generator, final_scale: float):
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)  # He-uniform
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if k == len(sizes) - 2:
            W *= final_scale
        layers.append([W, np.zeros(fan_out)])
    return layers


class MLP:
    """Dense stack with LeakyReLU between layers and no output activation."""

    def __init__(self, sizes: Sequence[int], slope: float = 0.2,
                 rng: Optional[np.random.Generator] = None, final_scale: float = 0.1):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.slope = float(slope)
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers = _init_layers(self.sizes, rng, final_scale)

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order: W1, b1, W2, b2, ..."""
        return [p for layer in self.layers for p in layer]

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ValueError(f"expected {2 * len(self.layers)} arrays, got {len(arrays)}")
        for k, layer in enumerate(self.layers):
            for j in range(2):
                new = np.asarray(arrays[2 * k + j], dtype=np.float64)
                if new.shape != layer[j].shape:
                    raise ValueError(f"layer {k} param {j}: shape {new.shape} != {layer[j].shape}")
                layer[j] = new.copy()

    def zero_(self) -> None:
        for layer in self.layers:
            for p in layer:
                p[...] = 0.0

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def bind(self, g: Graph) -> list[Node]:
        return [g.param(p) for p in self.params]

    def forward(self, g: Graph, x: Node, nodes: Optional[Sequence[Node]] = None) -> Node:
        if x.value.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"input shape {x.shape}, expected (m, {self.sizes[0]})")
        if nodes is None:
            nodes = [g.const(p) for p in self.params]
        h = x
        n = len(self.layers)
        for k in range(n):
            h = g.add_bias(g.matmul(h, nodes[2 * k]), nodes[2 * k + 1])
            if k < n - 1:
                h = g.leaky_relu(h, self.slope)
        return h


class Generator(MLP):
    def __init__(self, latent_dim: int = 2, out_dim: int = 2, width: int = 128,
                 slope: float = 0.2, rng: Optional[np.random.Generator] = None,
                 final_scale: float = 0.1):
        self.latent_dim = int(latent_dim)
        self.out_dim = int(out_dim)
        self.width = int(width)
        super().__init__([latent_dim, width, width, width, out_dim], slope, rng, final_scale)

    def architecture(self) -> dict:
        return {"kind": "generator", "latent_dim": self.latent_dim, "out_dim": self.out_dim,
                "width": self.width, "slope": self.slope}


def time_features(t: np.ndarray, t_max: float, embedding: str = "scalar",
                  n_freq: int = 4) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if np.any(t < 0) or np.any(t > t_max):
        raise ValueError(f"intensity outside [0, {t_max}]")
    u = t / t_max
    if embedding == "scalar":
        return u[:, None]
    if embedding == "sinusoidal":
        freqs = np.pi * 2.0 ** np.arange(n_freq)
        ang = u[:, None] * freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang) - 1.0], axis=1)
    raise ValueError(f"unknown time embedding {embedding!r}")


class Discriminator(MLP):
    """D(y, t) in (0, 1); t enters as the extra feature t / t_max."""

    def __init__(self, data_dim: int = 2, width: int = 128, slope: float = 0.2,
                 rng: Optional[np.random.Generator] = None, final_scale: float = 0.1,
                 embedding: str = "scalar", n_freq: int = 4):
        self.data_dim = int(data_dim)
        self.width = int(width)
        self.embedding = embedding
        self.n_freq = int(n_freq)
        t_dim = 1 if embedding == "scalar" else 2 * self.n_freq
        super().__init__([data_dim + t_dim, width, width, width, 1], slope, rng, final_scale)

    def architecture(self) -> dict:
        return {"kind": "discriminator", "data_dim": self.data_dim, "width": self.width,
                "slope": self.slope, "embedding": self.embedding, "n_freq": self.n_freq}

    def t_features(self, t, t_max) -> np.ndarray:
        return time_features(t, t_max, self.embedding, self.n_freq)

    def logits(self, g: Graph, y: Node, t_feat: np.ndarray,
               nodes: Optional[Sequence[Node]] = None) -> Node:
        if y.value.ndim != 2 or y.shape[1] != self.data_dim:
            raise ShapeError(f"data shape {y.shape}, expected (m, {self.data_dim})")
        if t_feat.shape[0] != y.shape[0]:
            raise ShapeError(f"{t_feat.shape[0]} intensities for {y.shape[0]} samples")
        return self.forward(g, g.concat([y, g.const(t_feat)], axis=1), nodes)

    def prob(self, g: Graph, y: Node, t_feat: np.ndarray,
             nodes: Optional[Sequence[Node]] = None) -> Node:
        return g.sigmoid(self.logits(g, y, t_feat, nodes))

    def input_grad(self, y: np.ndarray, t: np.ndarray, t_max: float) -> np.ndarray:
        """Per-sample gradient of D(y, t) with respect to y."""
        g = Graph()
        yn = g.input(np.asarray(y, dtype=np.float64), requires_grad=True)
        out = self.prob(g, yn, self.t_features(t, t_max))
        return grad_wrt_input(g, out, yn)


def generate(gen: Generator, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != gen.latent_dim:
        raise ShapeError(f"latent batch shape {z.shape}, expected (m, {gen.latent_dim})")
    g = Graph()
    return gen.forward(g, g.input(z)).value


def discriminate(disc: Discriminator, y: np.ndarray, t: np.ndarray, t_max: float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    g = Graph()
    return disc.prob(g, g.input(y), disc.t_features(t, t_max)).value.reshape(-1)


# -- checkpoint file: one JSON header line, then little-endian float64 blocks ----

def write_checkpoint(path, header: dict, blocks: Sequence[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["format"] = CHECKPOINT_FORMAT
    header["version"] = CHECKPOINT_VERSION
    header["blocks"] = [{"name": name, "shape": list(np.shape(arr))} for name, arr in blocks]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head + b"\n")
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot parse header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {header.get('version')} unsupported")
    body = raw[nl + 1:]
    arrays, offset = {}, 0
    for spec in header["blocks"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated at block {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(body, dtype="<f8", count=nbytes // 8,
                                             offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return header, arrays


def check_architecture(expected: dict, found: dict, who: str) -> None:
    for key in sorted(set(expected) | set(found)):
        if expected.get(key) != found.get(key):
            raise CheckpointError(
                f"{who} architecture mismatch in field {key!r}: "
                f"checkpoint has {found.get(key)!r}, model has {expected.get(key)!r}")
