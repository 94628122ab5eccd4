"""Alternating generator/discriminator optimization, loss logging and
checkpoints.

One iteration updates both generators on the full generator objective, then
both discriminators on their least-squares objective using the (detached)
fakes from the same iteration.  No image replay buffer is used.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor, backward
from .errors import CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError
from .gradient_adjustment import gradient_adjustment_loss
from .losses import (
    LossReport,
    LossWeights,
    adv_loss_discriminator,
    adv_loss_generator,
    cycle_consistency_loss,
    total_losses,
)
from .networks import (
    DiscriminatorConfig,
    DiscriminatorParams,
    GeneratorConfig,
    GeneratorParams,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GAIT"
CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ["step"] + LossReport.columns()
NETWORKS = ("g_st", "g_ts", "d_s", "d_t")


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "AdamState":
        return cls(m={k: np.zeros(p.shape) for k, p in params.items()},
                   v={k: np.zeros(p.shape) for k, p in params.items()}, **hyper)

    def hyper(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def equal(self, other: "AdamState") -> bool:
        return (self.hyper() == other.hyper() and list(self.m) == list(other.m)
                and all(np.array_equal(self.m[k], other.m[k]) and np.array_equal(self.v[k], other.v[k])
                        for k in self.m))


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update.  Returns new params (same mapping type)
    and the advanced state; inputs are not modified."""
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError(f"adam_step: '{k}' param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"adam_step: non-finite gradient for '{k}'")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_state = replace(state, m={}, v={}, t=t)
    out = type(params)()
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_state.m[k], new_state.v[k] = m, v
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        out[k] = Tensor._wrap(p.data - step)
    return out, new_state


# -------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 4
    steps: int = 2000
    image_size: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 500
    lr: float = 1e-4
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        self.generator = replace(self.generator, image_size=self.image_size)
        self.discriminator = replace(self.discriminator, image_size=self.image_size,
                                     in_channels=self.generator.in_channels)
        self.generator.validate()
        self.discriminator.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["generator"] = GeneratorConfig(**d.get("generator", {}))
        d["discriminator"] = DiscriminatorConfig(**d.get("discriminator", {}))
        return cls(**d)


# --------------------------------------------------------------------- state

@dataclass
class TrainState:
    """Everything that evolves during training."""

    g_st: GeneratorParams
    g_ts: GeneratorParams
    d_s: DiscriminatorParams
    d_t: DiscriminatorParams
    adam_g: AdamState
    adam_d: AdamState
    step: int = 0

    @classmethod
    def initial(cls, config: TrainConfig) -> "TrainState":
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(4)]
        g_st = init_generator(config.generator, seeds[0])
        g_ts = init_generator(config.generator, seeds[1])
        d_s = init_discriminator(config.discriminator, seeds[2])
        d_t = init_discriminator(config.discriminator, seeds[3])
        return cls(g_st, g_ts, d_s, d_t,
                   AdamState.for_params(_join(g_st=g_st, g_ts=g_ts), lr=config.lr),
                   AdamState.for_params(_join(d_s=d_s, d_t=d_t), lr=config.lr))


def _join(**nets) -> dict:
    return {f"{net}/{k}": v for net, params in nets.items() for k, v in params.items()}


def _split(flat: dict, names, types) -> list:
    out = [t() for t in types]
    for key, v in flat.items():
        net, name = key.split("/", 1)
        out[names.index(net)][name] = v
    return out


def _as_batch(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def train_step(batch_s, batch_t, state: TrainState, w: LossWeights, config: TrainConfig,
               update_discriminators: bool = True) -> LossReport:
    """Run one generator update and one discriminator update in place on
    ``state`` and return the per-term losses."""
    x, y = _as_batch(batch_s), _as_batch(batch_t)
    gcfg, dcfg = config.generator, config.discriminator

    # generators; discriminators enter as constants
    g_st, g_ts = state.g_st.trainable(), state.g_ts.trainable()
    d_s, d_t = state.d_s.frozen(), state.d_t.frozen()
    with GradientTape() as tape:
        fake_t = generator_forward(g_st, x, gcfg)
        rec_x = generator_forward(g_ts, fake_t, gcfg)
        fake_s = generator_forward(g_ts, y, gcfg)
        rec_y = generator_forward(g_st, fake_s, gcfg)
        parts = {
            "adv_f_s": adv_loss_generator(discriminator_forward(d_t, fake_t, dcfg)),
            "adv_f_t": adv_loss_generator(discriminator_forward(d_s, fake_s, dcfg)),
            "cyc": cycle_consistency_loss(x, rec_x, y, rec_y),
            "grad": gradient_adjustment_loss(x, fake_t, y, fake_s, w.c_ga),
        }
        total_f, _ = total_losses(parts, w)
    _finite("total_f", total_f)
    grads = backward(total_f, tape)
    flat = _join(g_st=g_st, g_ts=g_ts)
    new_g, state.adam_g = adam_step(flat, {k: grads[p] for k, p in flat.items()}, state.adam_g)
    state.g_st, state.g_ts = _split(new_g, ["g_st", "g_ts"], [GeneratorParams, GeneratorParams])

    # discriminators on detached fakes from this iteration
    fake_t, fake_s = fake_t.detach(), fake_s.detach()
    if update_discriminators:
        d_s, d_t = state.d_s.trainable(), state.d_t.trainable()
    with GradientTape() as tape:
        d_parts = {
            "adv_d_s": adv_loss_discriminator(discriminator_forward(d_t, y, dcfg),
                                              discriminator_forward(d_t, fake_t, dcfg)),
            "adv_d_t": adv_loss_discriminator(discriminator_forward(d_s, x, dcfg),
                                              discriminator_forward(d_s, fake_s, dcfg)),
        }
        _, total_d = total_losses(d_parts, w)
    _finite("total_d", total_d)
    if update_discriminators:
        grads = backward(total_d, tape)
        flat = _join(d_s=d_s, d_t=d_t)
        new_d, state.adam_d = adam_step(flat, {k: grads[p] for k, p in flat.items()}, state.adam_d)
        state.d_s, state.d_t = _split(new_d, ["d_s", "d_t"], [DiscriminatorParams, DiscriminatorParams])
    state.step += 1
    vals = {k: v.item() for k, v in {**parts, **d_parts}.items()}
    return LossReport(total_f=total_f.item(), total_d=total_d.item(), **vals)


def _finite(name: str, t: Tensor):
    if not math.isfinite(t.item()):
        raise NumericalError(f"loss term '{name}' is not finite")


# ------------------------------------------------------------------- sampler

class UnpairedSampler:
    """Independent shuffled streams over two datasets, reshuffled per epoch."""

    def __init__(self, n_s: int, n_t: int, batch_size: int, seed: int):
        if n_s < 1 or n_t < 1:
            raise DatasetError("both domains need at least one image")
        ss_s, ss_t = np.random.SeedSequence([seed, 0x5A3]).spawn(2)
        self.batch_size = batch_size
        self._streams = [self._new_stream(n_s, np.random.default_rng(ss_s)),
                         self._new_stream(n_t, np.random.default_rng(ss_t))]

    @staticmethod
    def _new_stream(n, rng):
        return {"n": n, "rng": rng, "perm": rng.permutation(n), "pos": 0}

    def _take(self, s) -> np.ndarray:
        idx = np.empty(self.batch_size, dtype=np.int64)
        for i in range(self.batch_size):
            if s["pos"] == s["n"]:
                s["perm"], s["pos"] = s["rng"].permutation(s["n"]), 0
            idx[i] = s["perm"][s["pos"]]
            s["pos"] += 1
        return idx

    def next_indices(self) -> tuple[np.ndarray, np.ndarray]:
        return self._take(self._streams[0]), self._take(self._streams[1])

    def state_dict(self) -> dict:
        return {"batch_size": self.batch_size, "streams": [
            {"n": s["n"], "pos": s["pos"], "perm": [int(i) for i in s["perm"]],
             "rng": s["rng"].bit_generator.state} for s in self._streams]}

    @classmethod
    def from_state(cls, d: dict) -> "UnpairedSampler":
        obj = cls.__new__(cls)
        obj.batch_size = d["batch_size"]
        obj._streams = []
        for s in d["streams"]:
            rng = np.random.default_rng()
            rng.bit_generator.state = s["rng"]
            obj._streams.append({"n": s["n"], "rng": rng, "pos": s["pos"],
                                 "perm": np.array(s["perm"], dtype=np.int64)})
        return obj


# ---------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    manifest: dict
    state: TrainState

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        a, b = self.state, other.state
        return (self.manifest == other.manifest and a.step == b.step
                and all(getattr(a, n).equal(getattr(b, n)) for n in NETWORKS)
                and a.adam_g.equal(b.adam_g) and a.adam_d.equal(b.adam_d))

    @property
    def step(self) -> int:
        return self.state.step

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.manifest["config"])


def make_checkpoint(config: TrainConfig, state: TrainState, sampler: UnpairedSampler | None = None) -> Checkpoint:
    manifest = {
        "format": "gait-checkpoint",
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "seed": config.seed,
        "config": config.to_dict(),
        "adam_g": state.adam_g.hyper(),
        "adam_d": state.adam_d.hyper(),
        "sampler": sampler.state_dict() if sampler is not None else None,
    }
    return Checkpoint(manifest, state)


def _records(state: TrainState):
    for net in NETWORKS:
        for k, t in getattr(state, net).items():
            yield f"{net}/{k}", t.data
    for opt in ("adam_g", "adam_d"):
        a = getattr(state, opt)
        for k in a.m:
            yield f"{opt}/m/{k}", a.m[k]
            yield f"{opt}/v/{k}", a.v[k]


def save_checkpoint(c: Checkpoint, path) -> None:
    """Binary layout, all integers little-endian u32:
    ``GAIT | version | len + manifest JSON | count | records``; each record is
    ``len + name | ndim | dims... | float64 payload``."""
    if c.manifest.get("step") != c.state.step:
        raise CheckpointError("manifest step disagrees with state step")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    man = json.dumps(c.manifest, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(man)))
    buf.write(man)
    recs = list(_records(c.state))
    buf.write(struct.pack("<I", len(recs)))
    for name, arr in recs:
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a GAIT checkpoint (or unsupported version)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    manifest = json.loads(r.take(r.u32()).decode())
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = tuple(r.u32(ndim)) if ndim > 1 else ((r.u32(),) if ndim == 1 else ())
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: trailing bytes after last record")

    nets = {n: {} for n in NETWORKS}
    moments = {"adam_g": ({}, {}), "adam_d": ({}, {})}
    for name, arr in arrays.items():
        head, rest = name.split("/", 1)
        if head in nets:
            nets[head][rest] = Tensor(arr)
        elif head in moments:
            kind, key = rest.split("/", 1)
            moments[head][0 if kind == "m" else 1][key] = arr
        else:
            raise CheckpointError(f"{path}: unknown record '{name}'")
    state = TrainState(
        GeneratorParams(nets["g_st"]), GeneratorParams(nets["g_ts"]),
        DiscriminatorParams(nets["d_s"]), DiscriminatorParams(nets["d_t"]),
        AdamState(*moments["adam_g"], **manifest["adam_g"]),
        AdamState(*moments["adam_d"], **manifest["adam_d"]),
        step=manifest["step"],
    )
    return Checkpoint(manifest, state)


# ---------------------------------------------------------------------- loop

def _stack(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        arr = dataset
    else:
        arr = np.stack([getattr(r, "pixels", r) for r in dataset]) if len(dataset) else np.empty(0)
    if arr.size == 0:
        raise DatasetError("empty dataset")
    if arr.ndim == 3:
        arr = arr[:, None]
    return np.asarray(arr, dtype=np.float64)


def _fmt(v) -> str:
    return repr(float(v)) if not isinstance(v, int) else str(v)


def train_loop(config: TrainConfig, dataset_s, dataset_t, output_dir, resume_from=None,
               progress_every: int = 0) -> Checkpoint:
    """Train for ``config.steps`` iterations, writing ``loss.csv``,
    ``checkpoints/step_XXXXXX.gait`` every ``checkpoint_every`` steps and
    ``final.gait``.

    With ``resume_from`` the run continues from that checkpoint's step; loss
    rows already in ``output_dir/loss.csv`` up to that step are kept.
    """
    xs, xt = _stack(dataset_s), _stack(dataset_t)
    out = Path(output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    rows = []
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config != config:
            ckpt_cfg = ckpt.config
            if replace(ckpt_cfg, steps=config.steps) != config:
                raise ConfigError("resume: checkpoint config differs from the requested config")
        state = ckpt.state
        if ckpt.manifest.get("sampler") is None:
            raise CheckpointError("resume: checkpoint carries no sampler state")
        sampler = UnpairedSampler.from_state(ckpt.manifest["sampler"])
        log_path = out / "loss.csv"
        if log_path.exists():
            with open(log_path, newline="") as f:
                rows = [r for r in csv.reader(f)][1:1 + state.step]
        if len(rows) != state.step:
            log.warning("resume: loss log holds %d of %d earlier rows", len(rows), state.step)
    else:
        state = TrainState.initial(config)
        sampler = UnpairedSampler(len(xs), len(xt), config.batch_size, config.seed)
    if state.step >= config.steps:
        raise ConfigError(f"nothing to do: checkpoint step {state.step} >= steps {config.steps}")

    with open(out / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        writer.writerows(rows)
        while state.step < config.steps:
            i_s, i_t = sampler.next_indices()
            report = train_step(xs[i_s], xt[i_t], state, config.weights, config)
            writer.writerow([str(state.step)] + [_fmt(v) for v in report.values()])
            if progress_every and state.step % progress_every == 0:
                f.flush()
                log.info("step %d total_f %.4f total_d %.4f", state.step, report.total_f, report.total_d)
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(make_checkpoint(config, state, sampler),
                                out / "checkpoints" / f"step_{state.step:06d}.gait")
    final = make_checkpoint(config, state, sampler)
    save_checkpoint(final, out / "final.gait")
    return final


def translate(params: GeneratorParams, images: np.ndarray, config: GeneratorConfig,
              batch_size: int = 16) -> np.ndarray:
    """Run a generator without gradient tracking over ``images[N,C,H,W]``."""
    images = _stack(images)
    outs = [generator_forward(params, Tensor(images[i:i + batch_size]), config).data
            for i in range(0, len(images), batch_size)]
    return np.concatenate(outs)


def clone_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
