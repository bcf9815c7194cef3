"""Scale-GAN training loop, run directories, checkpoints and experiment presets.

One iteration is: a discriminator ascent step on the regularized empirical
objective, a generator descent step with fresh latents and intensities, and,
every ``strategy_every`` iterations, an update of the intensity ceiling T.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import augmentation as aug
from . import data as gmm
from . import metrics
from . import objectives as obj
from .autodiff import Graph, NonFiniteError
from .models import (Discriminator, Generator, CheckpointError, check_architecture,
                     read_checkpoint, write_checkpoint)
from .optim import Adam
from .strategy import (IntensityDistribution, StrategyState, estimate_rd, sample_t,
                       update_T, STRATEGY_KINDS, PI0_KINDS)

log = logging.getLogger(__name__)

METRICS_HEADER = ["iter", "loss_d", "loss_g", "precision", "recall", "grad_norm",
                  "T", "r_d", "reg_value", "cos_sim"]

# config keys that are Python keywords on the dataclass side
_ALIASES = {"lambda": "lam"}
_REVERSE_ALIASES = {v: k for k, v in _ALIASES.items()}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump: Optional[dict] = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class RunConfig:
    name: str = "custom"
    seed: int = 0
    iterations: int = 40000
    batch_size: int = 64
    # data
    n_data: int = 80
    n_modes: int = 8
    gmm_var: float = 0.05
    data_scale: float = 1.0
    # networks
    latent_dim: int = 2
    width: int = 128
    slope: float = 0.2
    final_scale: float = 0.1
    t_embedding: str = "scalar"
    # optimizer
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # transform and schedule
    transform: str = "scale_only"
    sigma_noise: float = 0.0
    rotate_k: int = 1
    beta0: float = 1e-4
    betaT: float = 0.02
    recompute_schedule: bool = False
    # intensity distribution and strategy
    strategy: str = "adaptive"
    pi0: str = "uniform"
    mix_weight: float = 0.5
    T_min: int = 0
    T_max: int = 500
    T_init: Optional[int] = None
    d_target: float = 0.1
    strategy_every: int = 4
    rd_source: str = "real"
    pair_t: bool = True
    # loss
    lam: float = 0.1
    reg_kind: str = "variance"
    reg_max_t: Optional[int] = None
    gen_loss: str = "saturating"
    # evaluation and output
    eval_every: int = 500
    eval_samples: int = 1000
    pr_threshold: float = 3.0
    ckpt_every: int = 10000

    def validate(self) -> "RunConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        for name in ("iterations", "batch_size", "n_data", "n_modes", "latent_dim", "width",
                     "T_max", "strategy_every", "eval_every", "eval_samples", "ckpt_every"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name,
                 "must be an integer >= 1")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(self.batch_size >= 2, "batch_size", "must be >= 2")
        need(self.gmm_var > 0, "gmm_var", "must be positive")
        need(self.data_scale > 0, "data_scale", "must be positive")
        need(self.transform in aug.TRANSFORM_KINDS, "transform", f"one of {aug.TRANSFORM_KINDS}")
        need(self.sigma_noise >= 0, "sigma_noise", "must be >= 0")
        need(0 <= self.beta0 <= self.betaT < 1, "beta0", "need 0 <= beta0 <= betaT < 1")
        need(self.strategy in STRATEGY_KINDS, "strategy", f"one of {STRATEGY_KINDS}")
        need(self.pi0 in PI0_KINDS, "pi0", f"one of {PI0_KINDS}")
        need(0 <= self.mix_weight <= 1, "mix_weight", "must lie in [0, 1]")
        need(isinstance(self.T_min, int) and 0 <= self.T_min <= self.T_max, "T_min",
             "need 0 <= T_min <= T_max")
        need(self.T_init is None or self.T_min <= self.T_init <= self.T_max, "T_init",
             "must lie in [T_min, T_max]")
        need(self.rd_source in ("real", "both"), "rd_source", "'real' or 'both'")
        need(self.lam >= 0, "lambda", "must be >= 0")
        need(self.reg_kind in obj.REG_KINDS, "reg_kind", f"one of {obj.REG_KINDS}")
        need(self.reg_max_t is None or self.reg_max_t >= 1, "reg_max_t", "must be >= 1")
        need(self.gen_loss in obj.GEN_LOSS_KINDS, "gen_loss", f"one of {obj.GEN_LOSS_KINDS}")
        need(self.t_embedding in ("scalar", "sinusoidal"), "t_embedding", "'scalar' or 'sinusoidal'")
        for name in ("lr_d", "lr_g", "adam_eps"):
            need(getattr(self, name) > 0, name, "must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            need(0 <= getattr(self, name) < 1, name, "must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return {_REVERSE_ALIASES.get(k, k): v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in d.items():
            attr = _ALIASES.get(key, key)
            if attr not in known:
                raise ConfigError(key, "unknown config field")
            kwargs[attr] = _coerce(known[attr], key, value)
        return cls(**kwargs).validate()

    def with_overrides(self, overrides: dict) -> "RunConfig":
        d = self.to_dict()
        d.update(overrides)
        return RunConfig.from_dict(d)


def _coerce(f: dataclasses.Field, key: str, value):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        if "Optional" in kind:
            return None
        raise ConfigError(key, "may not be null")
    try:
        if "int" in kind:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if "float" in kind:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if "bool" in kind:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if "str" in kind:
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(key, f"bad value {value!r} for a {kind} field") from None
    return value


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


# -- presets ----------------------------------------------------------------

def _scalegan(**kw):
    return {"transform": "scale_only", "strategy": "adaptive", "lambda": 0.1,
            "reg_kind": "variance", **kw}


def _plain(**kw):
    # t is always 0: no intensity conditioning signal and no strategy updates
    return {"transform": "identity", "mix_weight": 1.0, "strategy": "fix", "T_max": 1,
            "lambda": 0.0, "reg_kind": "none", **kw}


PRESETS: dict[str, dict] = {
    "toy-scalegan": _scalegan(reg_max_t=8),
    "toy-vanilla": _plain(),
}
for _s in (0.25, 0.5, 1.0, 1.5):
    PRESETS[f"fixed-scale-{_s:g}"] = _plain(data_scale=_s)
for _k in STRATEGY_KINDS:
    PRESETS[f"strategy-{_k}"] = {"transform": "scale_only", "strategy": _k, "lambda": 0.0,
                                 "reg_kind": "none"}
for _sig in (0.0, 0.05, 0.1, 0.15, 0.2):
    PRESETS[f"noise-{_sig:g}"] = _plain(transform="noise_only", sigma_noise=_sig)
    PRESETS[f"diffusion-{_sig:g}"] = {"transform": "diffusion", "sigma_noise": _sig,
                                      "strategy": "adaptive", "lambda": 0.0, "reg_kind": "none"}
for _lam in (0.0, 0.1, 0.5, 1.0, 5.0, 10.0):
    PRESETS[f"lambda-{_lam:g}"] = _scalegan(**{"lambda": _lam, "reg_max_t": 8})

SWEEPS: dict[str, list[str]] = {
    "fixed-scales": [f"fixed-scale-{s:g}" for s in (0.25, 0.5, 1.0, 1.5)],
    "strategies": [f"strategy-{k}" for k in STRATEGY_KINDS],
    "lambda": [f"lambda-{x:g}" for x in (0.0, 0.1, 0.5, 1.0, 5.0, 10.0)],
    "noise": [f"noise-{s:g}" for s in (0.0, 0.05, 0.1, 0.15, 0.2)],
    "diffusion": [f"diffusion-{s:g}" for s in (0.0, 0.05, 0.1, 0.15, 0.2)],
}


def preset_config(preset: str, **overrides) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    d = {"name": preset, **PRESETS[preset]}
    d.update(overrides)
    return RunConfig.from_dict(d)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path}: top level must be an object")
    if "preset" in raw:
        name = raw.pop("preset")
        return preset_config(name, **raw)
    return RunConfig.from_dict(raw)


# -- state ------------------------------------------------------------------

@dataclass
class TrainState:
    config: RunConfig
    gen: Generator
    disc: Discriminator
    opt_g: Adam
    opt_d: Adam
    strategy: StrategyState
    schedule: aug.ScalingSchedule
    transform: aug.Transform
    data: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    last_rd: float = 0.0
    last_reg: float = 0.0
    _schedules: dict = field(default_factory=dict, repr=False)

    @property
    def spec(self) -> gmm.GmmSpec:
        return gmm.GmmSpec(self.config.n_modes, self.config.gmm_var, self.config.n_data)

    def distribution(self) -> IntensityDistribution:
        return IntensityDistribution(self.config.pi0, self.strategy.current_T, self.config.mix_weight)

    def active_schedule(self) -> aug.ScalingSchedule:
        if not self.config.recompute_schedule:
            return self.schedule
        T = max(self.strategy.current_T, 1)
        if T not in self._schedules:
            self._schedules[T] = aug.build_schedule(self.config.beta0, self.config.betaT, T)
        return self._schedules[T]


def init_state(config: RunConfig) -> TrainState:
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    data_ss, g_ss, d_ss, train_ss = ss.spawn(4)
    spec = gmm.GmmSpec(config.n_modes, config.gmm_var, config.n_data)
    data = gmm.sample(spec, config.n_data, np.random.default_rng(data_ss))
    gen = Generator(config.latent_dim, 2, config.width, config.slope,
                    np.random.default_rng(g_ss), config.final_scale)
    disc = Discriminator(2, config.width, config.slope, np.random.default_rng(d_ss),
                         config.final_scale, config.t_embedding)
    T0 = config.T_min if config.T_init is None else config.T_init
    strategy = StrategyState(config.strategy, config.T_min, config.T_max, config.iterations,
                             config.d_target, T0)
    return TrainState(
        config=config, gen=gen, disc=disc,
        opt_g=Adam(gen.params, config.lr_g, config.adam_beta1, config.adam_beta2, config.adam_eps),
        opt_d=Adam(disc.params, config.lr_d, config.adam_beta1, config.adam_beta2, config.adam_eps),
        strategy=strategy,
        schedule=aug.build_schedule(config.beta0, config.betaT, config.T_max),
        transform=aug.Transform(config.transform, config.sigma_noise, config.rotate_k),
        data=data, rng=np.random.default_rng(train_ss),
    )


# -- one iteration ----------------------------------------------------------

def _disc_step(state: TrainState) -> tuple[float, float, float]:
    cfg, rng = state.config, state.rng
    m = cfg.batch_size
    dist = state.distribution()
    schedule = state.active_schedule()
    z = rng.standard_normal((m, cfg.latent_dim))
    idx = rng.integers(0, state.data.shape[0], size=m)
    t_real = sample_t(dist, rng, m)
    t_fake = t_real if cfg.pair_t else sample_t(dist, rng, m)
    x = state.data[idx]
    if cfg.data_scale != 1.0:
        x = cfg.data_scale * x
    g0 = Graph()
    fake = state.gen.forward(g0, g0.input(z)).value
    if cfg.data_scale != 1.0:
        fake = cfg.data_scale * fake
    x_tilde = aug.apply(state.transform, schedule, x, t_real, rng)
    f_tilde = aug.apply(state.transform, schedule, fake, t_fake, rng)

    g = Graph()
    nodes = state.disc.bind(g)
    both = g.input(np.concatenate([x_tilde, f_tilde], axis=0))
    feats = state.disc.t_features(np.concatenate([t_real, t_fake]), cfg.T_max)
    d_all = state.disc.prob(g, both, feats, nodes)
    d_real = g.slice_rows(d_all, 0, m)
    d_fake = g.slice_rows(d_all, m, 2 * m)
    reg = g.const(0.0)
    if cfg.reg_kind == "variance":
        reg = obj.variance_reg(state.disc, schedule, x, t_real, cfg.T_max, graph=g, nodes=nodes,
                               max_distinct=cfg.reg_max_t, rng=rng)
    elif cfg.reg_kind == "modified":
        reg = obj.modified_reg(d_real)
    value = obj.disc_loss(d_real, d_fake, reg, cfg.lam)
    loss = g.scale(value, -1.0)
    grads = g.backward(loss)
    state.opt_d.step(state.disc.params, [grads[n.id] for n in nodes])

    real_out = d_real.value.reshape(-1)
    if cfg.rd_source == "real":
        rd = estimate_rd(real_out)
    else:
        rd = float(np.mean(np.concatenate([np.sign(real_out - 0.5),
                                           -np.sign(d_fake.value.reshape(-1) - 0.5)])))
    return loss.item(), reg.item(), rd


def _gen_step(state: TrainState) -> float:
    cfg, rng = state.config, state.rng
    m = cfg.batch_size
    z = rng.standard_normal((m, cfg.latent_dim))
    t = sample_t(state.distribution(), rng, m)
    g = Graph()
    nodes = state.gen.bind(g)
    fake = state.gen.forward(g, g.input(z), nodes)
    if cfg.data_scale != 1.0:
        fake = g.scale(fake, cfg.data_scale)
    y = aug.apply_node(g, state.transform, state.active_schedule(), fake, t, rng)
    d_fake = state.disc.prob(g, y, state.disc.t_features(t, cfg.T_max))
    loss = obj.gen_loss(d_fake, cfg.gen_loss)
    grads = g.backward(loss)
    state.opt_g.step(state.gen.params, [grads[n.id] for n in nodes])
    return loss.item()


def train_step(state: TrainState) -> dict:
    """Advance ``state`` by one iteration and return the step record."""
    try:
        loss_d, reg, rd = _disc_step(state)
        loss_g = _gen_step(state)
    except NonFiniteError as exc:
        raise TrainingDiverged(
            f"non-finite value at iteration {state.iteration + 1}: {exc}",
            {"iteration": state.iteration + 1, "T": state.strategy.current_T,
             "last_rd": state.last_rd, "last_reg": state.last_reg, "error": str(exc)},
        ) from exc
    if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
        raise TrainingDiverged(f"non-finite loss at iteration {state.iteration + 1}",
                               {"iteration": state.iteration + 1, "loss_d": loss_d, "loss_g": loss_g})
    state.iteration += 1
    state.last_rd, state.last_reg = rd, reg
    if state.iteration % state.config.strategy_every == 0:
        update_T(state.strategy, r_d=rd, iteration=state.iteration)
    return {"iter": state.iteration, "loss_d": loss_d, "loss_g": loss_g, "T": state.strategy.current_T,
            "r_d": rd, "reg_value": reg}


# -- evaluation -------------------------------------------------------------

def evaluate(state: TrainState, n_samples: Optional[int] = None) -> dict:
    """Precision/recall of G against the mixture plus discriminator diagnostics.

    Uses its own rng keyed on (seed, iteration), so evaluating never shifts
    the training trajectory.
    """
    cfg = state.config
    rng = np.random.default_rng([cfg.seed, 7, state.iteration])
    n = cfg.eval_samples if n_samples is None else n_samples
    z = rng.standard_normal((n, cfg.latent_dim))
    g = Graph()
    samples = state.gen.forward(g, g.input(z)).value
    spec = state.spec
    prec, rec = metrics.precision_recall(samples, spec.means, spec.sigma, cfg.pr_threshold)
    k = min(n, 256)
    seen = cfg.data_scale * samples[:k]
    grad_norm = metrics.disc_grad_norm(state.disc, seen, np.zeros(k, dtype=np.int64), cfg.T_max)
    cos = float("nan")
    T = state.strategy.current_T
    if T >= 1 and state.transform.kind != "identity":
        x = cfg.data_scale * state.data[rng.integers(0, state.data.shape[0], size=64)]
        t = rng.integers(1, T + 1, size=64)
        cos = metrics.cosine_similarity_diag(state.disc, state.active_schedule(), x, t, cfg.T_max,
                                             state.transform, rng)
    return {"precision": prec, "recall": rec, "grad_norm": grad_norm, "cos_sim": cos}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    header = {
        "architecture": {"generator": state.gen.architecture(),
                         "discriminator": state.disc.architecture()},
        "seed": state.config.seed,
        "iteration": state.iteration,
        "config": state.config.to_dict(),
        "strategy": state.strategy.to_dict(),
        "rng": state.rng.bit_generator.state,
        "adam_steps": {"g": state.opt_g.t, "d": state.opt_d.t},
        "last_rd": state.last_rd,
        "last_reg": state.last_reg,
    }
    blocks = []
    for who, model, opt in (("gen", state.gen, state.opt_g), ("disc", state.disc, state.opt_d)):
        blocks += [(f"{who}.param.{i}", p) for i, p in enumerate(model.params)]
        blocks += [(f"{who}.adam_m.{i}", a) for i, a in enumerate(opt.m)]
        blocks += [(f"{who}.adam_v.{i}", a) for i, a in enumerate(opt.v)]
    blocks.append(("data", state.data))
    write_checkpoint(path, header, blocks)


def resume(path, config: Optional[RunConfig] = None) -> TrainState:
    """Rebuild a :class:`TrainState` from a checkpoint written by this module."""
    header, arrays = read_checkpoint(path)
    try:
        ck_config = RunConfig.from_dict(header["config"])
        if config is None:
            config = ck_config
        state = init_state(config)
        check_architecture(state.gen.architecture(), header["architecture"]["generator"], "generator")
        check_architecture(state.disc.architecture(), header["architecture"]["discriminator"],
                           "discriminator")
        for who, model, opt in (("gen", state.gen, state.opt_g), ("disc", state.disc, state.opt_d)):
            k = len(model.params)
            model.set_params([arrays[f"{who}.param.{i}"] for i in range(k)])
            opt.m = [arrays[f"{who}.adam_m.{i}"].copy() for i in range(k)]
            opt.v = [arrays[f"{who}.adam_v.{i}"].copy() for i in range(k)]
        state.opt_g.t = int(header["adam_steps"]["g"])
        state.opt_d.t = int(header["adam_steps"]["d"])
        state.data = arrays["data"].copy()
        state.strategy = StrategyState(**header["strategy"])
        state.rng.bit_generator.state = header["rng"]
        state.iteration = int(header["iteration"])
        state.last_rd = float(header["last_rd"])
        state.last_reg = float(header["last_reg"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: {exc}") from None
    return state


# -- full runs ---------------------------------------------------------------

def _write_dump(run_dir: Path, exc: TrainingDiverged) -> None:
    (run_dir / "divergence.json").write_text(json.dumps(exc.dump, indent=2, default=str))


def train_loop(state: TrainState, run_dir: Path, until: Optional[int] = None) -> TrainState:
    """Run iterations up to ``until`` (default: config.iterations), appending
    metrics rows and writing checkpoints into ``run_dir``."""
    cfg = state.config
    until = cfg.iterations if until is None else until
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    metrics_path = run_dir / "metrics.csv"
    _truncate_metrics(metrics_path, state.iteration)
    with open(metrics_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        while state.iteration < until:
            try:
                rec = train_step(state)
            except TrainingDiverged as exc:
                _write_dump(run_dir, exc)
                raise
            i = state.iteration
            if i % cfg.eval_every == 0 or i == until:
                rec.update(evaluate(state))
                writer.writerow([_fmt(rec[k]) for k in METRICS_HEADER])
                fh.flush()
                log.info("iter %d precision %.3f recall %.3f T %d", i, rec["precision"],
                         rec["recall"], rec["T"])
            if i % cfg.ckpt_every == 0 or i == until:
                save_checkpoint(state, ckpt_dir / f"ckpt_{i}.bin")
    return state


def _truncate_metrics(path: Path, iteration: int) -> None:
    if not path.exists():
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRICS_HEADER)
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= iteration]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(keep)


def run(config: RunConfig, run_dir) -> Path:
    """Train from scratch; the run directory gets config.json, data.csv,
    metrics.csv and checkpoints/ckpt_{iter}.bin."""
    config.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()
    state = init_state(config)
    gmm.save_csv(run_dir / "data.csv", state.data)
    train_loop(state, run_dir)
    return run_dir


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in METRICS_HEADER}


def summarize(metrics_path) -> dict:
    """Final precision/recall, min recall after half the run, max grad norm."""
    m = read_metrics(metrics_path)
    if m["iter"].size == 0:
        raise ValueError(f"{metrics_path}: no rows")
    half = m["iter"] >= 0.5 * m["iter"][-1]
    return {
        "final_precision": float(m["precision"][-1]),
        "final_recall": float(m["recall"][-1]),
        "min_recall_after_half": float(m["recall"][half].min()),
        "max_grad_norm": float(np.max(m["grad_norm"])),
        "max_recall_drop": float(np.max(np.maximum.accumulate(m["recall"]) - m["recall"])),
    }
