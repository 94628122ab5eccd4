"""Command-line entry point: ``gait <command> [flags]``.

Commands: make-dataset, train, translate, eval-kid, gradcheck.  Settings come
from an optional JSON config (``--config``) overridden by flags; every command
that writes outputs also writes the resolved config next to them.

Exit codes: 0 success, 1 user error (config, paths, data), 2 numerical
failure (non-finite loss, failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from . import dataset as ds
from . import gradcheck, kid
from .errors import ConfigError, GaitError, NumericalError
from .losses import LossWeights
from .networks import DiscriminatorConfig, GeneratorConfig
from .training import TrainConfig, load_checkpoint, train_loop, translate

log = logging.getLogger("gait")

RESOLVED_CONFIG = "config.resolved.json"


@dataclass
class PathsSection:
    data_dir: str = "data"
    run_dir: str = "runs/gait"


@dataclass
class DatasetSection:
    n_images: int = 400
    b_lo: float = -0.6
    b_hi: float = 0.2
    min_shapes: int = 1
    max_shapes: int = 3
    axis_lo: float = 0.1
    axis_hi: float = 0.22
    target_background: float = 0.85
    noise_sigma: float = 0.05
    outline_value: float = -0.8
    outline_width: float = 1.5


@dataclass
class TrainSection:
    steps: int = 2000
    batch_size: int = 4
    checkpoint_every: int = 500
    lr: float = 1e-4


@dataclass
class LossSection:
    lambda_cyc: float = 10.0
    lambda_grad: float = 630.0
    c_ga: float = 1.0


@dataclass
class GeneratorSection:
    in_channels: int = 1
    base_channels: int = 16
    n_res_blocks: int = 2
    n_downsample: int = 2
    up_kernel: int = 4


@dataclass
class DiscriminatorSection:
    base_channels: int = 16
    n_layers: int = 2


@dataclass
class KidSection:
    block_size: int = 50
    n_blocks: int = 100
    extractor: str = "random_conv"
    out_dim: int = 64


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 32
    paths: PathsSection = field(default_factory=PathsSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    discriminator: DiscriminatorSection = field(default_factory=DiscriminatorSection)
    kid: KidSection = field(default_factory=KidSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            factory = known[key].default_factory
            if factory is MISSING:
                kwargs[key] = _typed(key, value, known[key].default)
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{key}' must be an object")
            defaults = factory()
            sub = {}
            for k, v in value.items():
                if not hasattr(defaults, k):
                    raise ConfigError(f"unknown config key '{key}.{k}'")
                sub[k] = _typed(f"{key}.{k}", v, getattr(defaults, k))
            kwargs[key] = factory(**sub)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, directory) -> Path:
        out = Path(directory) / RESOLVED_CONFIG
        out.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return out

    def dataset_spec(self) -> ds.DatasetSpec:
        return ds.DatasetSpec(seed=self.seed, image_size=self.image_size, **asdict(self.dataset))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            image_size=self.image_size,
            weights=LossWeights(**asdict(self.loss)),
            generator=GeneratorConfig(image_size=self.image_size, **asdict(self.generator)),
            discriminator=DiscriminatorConfig(image_size=self.image_size,
                                              in_channels=self.generator.in_channels,
                                              **asdict(self.discriminator)),
            **asdict(self.train),
        )


def _typed(name, value, default):
    expected = type(default)
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, expected) or isinstance(value, bool) != isinstance(default, bool):
        raise ConfigError(f"config key '{name}' must be {expected.__name__}, got {value!r}")
    return value


# flag dest -> (section, key); section None means top level
OVERRIDES = {
    "seed": (None, "seed"),
    "image_size": (None, "image_size"),
    "steps": ("train", "steps"),
    "batch_size": ("train", "batch_size"),
    "checkpoint_every": ("train", "checkpoint_every"),
    "lr": ("train", "lr"),
    "lambda_cyc": ("loss", "lambda_cyc"),
    "lambda_grad": ("loss", "lambda_grad"),
    "cga": ("loss", "c_ga"),
    "n_images": ("dataset", "n_images"),
    "block_size": ("kid", "block_size"),
    "n_blocks": ("kid", "n_blocks"),
    "extractor": ("kid", "extractor"),
    "out_dim": ("kid", "out_dim"),
    "data_dir": ("paths", "data_dir"),
    "run_dir": ("paths", "run_dir"),
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            setattr(cfg, key, value)
        else:
            setattr(cfg, section, replace(getattr(cfg, section), **{key: value}))
    return cfg


# ------------------------------------------------------------------ commands

def cmd_make_dataset(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or cfg.paths.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = ds.generate(cfg.dataset_spec(), out)
    cfg.paths.data_dir = str(out)
    cfg.dump(out)
    print(f"wrote {counts['S']} images to {out / 'S'} and {counts['T']} images to {out / 'T'}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    tcfg = cfg.train_config()
    data = Path(cfg.paths.data_dir)
    run = Path(cfg.paths.run_dir)
    src = ds.stack(ds.load_folder(data / "S", cfg.image_size))
    tgt = ds.stack(ds.load_folder(data / "T", cfg.image_size))
    run.mkdir(parents=True, exist_ok=True)
    cfg.dump(run)
    final = train_loop(tcfg, src, tgt, run, resume_from=args.resume, progress_every=args.log_every)
    print(f"trained {final.step} steps; loss log {run / 'loss.csv'}; checkpoint {run / 'final.gait'}")
    return 0


def cmd_translate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    tcfg = ckpt.config
    params = ckpt.state.g_st if args.direction == "s2t" else ckpt.state.g_ts
    records = ds.load_folder(args.input_dir)
    gcfg = tcfg.generator
    for r in records:
        if r.pixels.shape != (gcfg.in_channels, gcfg.image_size, gcfg.image_size):
            raise ConfigError(
                f"{r.id}: image shape {r.pixels.shape} does not match checkpoint generator "
                f"({gcfg.in_channels}, {gcfg.image_size}, {gcfg.image_size})")
    out = translate(params, ds.stack(records), gcfg)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r, img in zip(records, out):
        ds.save_png(img, out_dir / f"{r.id}.png")
    print(f"translated {len(records)} images ({args.direction}) into {out_dir}")
    return 0


def cmd_eval_kid(args) -> int:
    cfg = resolve_config(args)
    spec = kid.FeatureExtractorSpec(cfg.kid.extractor, cfg.kid.out_dim, cfg.seed)
    real = ds.stack(ds.load_folder(args.real_dir))
    fake = ds.stack(ds.load_folder(args.fake_dir))
    est = kid.kid_score(kid.extract_features(spec, real), kid.extract_features(spec, fake),
                        cfg.kid.block_size, cfg.kid.n_blocks, cfg.seed)
    print(est.format())
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(instances=args.instances, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED for: {', '.join(failed)}")
        return 2
    print(f"gradcheck passed: {len(results)} ops")
    return 0


# -------------------------------------------------------------------- parser

def _common(p, *names):
    adders = {
        "config": lambda: p.add_argument("--config", help="JSON run config"),
        "seed": lambda: p.add_argument("--seed", type=int),
        "image_size": lambda: p.add_argument("--image-size", type=int, dest="image_size"),
    }
    for n in names:
        adders[n]()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gait", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="render the synthetic S/T dataset")
    _common(p, "config", "seed", "image_size")
    p.add_argument("--out", help="output folder (default: paths.data_dir)")
    p.add_argument("--n-images", type=int, dest="n_images")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train both generators and discriminators")
    _common(p, "config", "seed", "image_size")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out", dest="run_dir", help="run folder (default: paths.run_dir)")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-cyc", type=float, dest="lambda_cyc")
    p.add_argument("--lambda-grad", type=float, dest="lambda_grad")
    p.add_argument("--cga", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100, dest="log_every")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="run a trained generator over a folder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--direction", choices=["s2t", "t2s"], default="s2t")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval-kid", help="KID between two image folders")
    _common(p, "config", "seed")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--fake-dir", required=True)
    p.add_argument("--block-size", type=int, dest="block_size")
    p.add_argument("--n-blocks", type=int, dest="n_blocks")
    p.add_argument("--extractor", choices=list(kid.EXTRACTORS))
    p.add_argument("--out-dim", type=int, dest="out_dim")
    p.set_defaults(func=cmd_eval_kid)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GaitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
