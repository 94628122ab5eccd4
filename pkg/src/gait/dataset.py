"""Synthetic two-domain dataset with mismatched background statistics.

Domain S: a flat background of random gray level carrying 1-3 filled,
anti-aliased ellipses.  Domain T: near-white background with per-pixel
noise carrying dark ellipse outlines (sketch style).  Both domains draw
shapes from the same family, so they differ mainly in background and edge
statistics.

Files on disk: ``S/*.png``, ``T/*.png`` (8-bit grayscale) and
``manifest.jsonl`` with one JSON record per image.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DatasetError

SUPERSAMPLE = 4
MASK_MARGIN = 2
MANIFEST = "manifest.jsonl"


@dataclass(frozen=True)
class DatasetSpec:
    n_images: int = 400
    image_size: int = 32
    seed: int = 0
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

    def validate(self):
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if not -1.0 <= self.b_lo <= self.b_hi <= 1.0:
            raise ConfigError("need -1 <= b_lo <= b_hi <= 1")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ConfigError("need 1 <= min_shapes <= max_shapes")
        if not 0 < self.axis_lo <= self.axis_hi < 0.5:
            raise ConfigError("need 0 < axis_lo <= axis_hi < 0.5")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # [C, H, W] in [-1, 1]
    domain: str | None = None
    background: float | None = None
    ellipses: list | None = None  # [cx, cy, a, b, theta, intensity] in pixel units


# ------------------------------------------------------------------ geometry

def _subpixel_grid(size: int):
    offs = (np.arange(size * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    return np.meshgrid(offs, offs, indexing="xy")  # px (column), py (row)


def _ellipse_level(px, py, cx, cy, a, b, theta):
    dx, dy = px - cx, py - cy
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v


def _coverage(inside: np.ndarray, size: int) -> np.ndarray:
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _filled(size, e):
    px, py = _subpixel_grid(size)
    return _coverage(_ellipse_level(px, py, *e[:5]) <= 1.0, size)


def _outline(size, e, width):
    px, py = _subpixel_grid(size)
    cx, cy, a, b, theta = e[:5]
    h = width / 2
    outer = _ellipse_level(px, py, cx, cy, a + h, b + h, theta) <= 1.0
    inner = _ellipse_level(px, py, cx, cy, max(a - h, 1e-3), max(b - h, 1e-3), theta) <= 1.0
    return _coverage(outer & ~inner, size)


def _sample_ellipses(rng, spec: DatasetSpec, source: bool, background: float):
    size = spec.image_size
    out = []
    for _ in range(rng.integers(spec.min_shapes, spec.max_shapes + 1)):
        cx, cy = rng.uniform(0.25 * size, 0.75 * size, size=2)
        a, b = rng.uniform(spec.axis_lo * size, spec.axis_hi * size, size=2)
        theta = rng.uniform(0.0, np.pi)
        if source:
            # keep shapes visibly distinct from the flat background
            intensity = rng.uniform(-1.0, 1.0)
            while abs(intensity - background) < 0.3:
                intensity = rng.uniform(-1.0, 1.0)
        else:
            intensity = spec.outline_value
        out.append([float(v) for v in (cx, cy, a, b, theta, intensity)])
    return out


def render_source(spec: DatasetSpec, index: int) -> ImageRecord:
    rng = np.random.default_rng([spec.seed, 0, index])
    bg = float(rng.uniform(spec.b_lo, spec.b_hi))
    ellipses = _sample_ellipses(rng, spec, True, bg)
    img = np.full((spec.image_size, spec.image_size), bg)
    for e in ellipses:
        cov = _filled(spec.image_size, e)
        img = img * (1.0 - cov) + e[5] * cov
    return ImageRecord(f"s_{index:05d}", np.clip(img, -1, 1)[None], "S", bg, ellipses)


def render_target(spec: DatasetSpec, index: int) -> ImageRecord:
    rng = np.random.default_rng([spec.seed, 1, index])
    ellipses = _sample_ellipses(rng, spec, False, spec.target_background)
    size = spec.image_size
    img = spec.target_background + spec.noise_sigma * rng.standard_normal((size, size))
    for e in ellipses:
        cov = _outline(size, e, spec.outline_width)
        img = img * (1.0 - cov) + e[5] * cov
    return ImageRecord(f"t_{index:05d}", np.clip(img, -1, 1)[None], "T", spec.target_background, ellipses)


def render(spec: DatasetSpec) -> tuple[list, list]:
    """In-memory, pre-quantization images for both domains."""
    spec.validate()
    return ([render_source(spec, i) for i in range(spec.n_images)],
            [render_target(spec, i) for i in range(spec.n_images)])


# ----------------------------------------------------------------------- I/O

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(pixels) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_png(pixels: np.ndarray, path) -> None:
    """Write ``[C,H,W]`` or ``[H,W]`` pixels in [-1, 1] as an 8-bit PNG."""
    arr = to_uint8(pixels)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)
    Image.fromarray(arr).save(path, format="PNG")


def generate(spec: DatasetSpec, out_dir) -> dict:
    """Render both domains to ``out_dir/{S,T}`` plus ``manifest.jsonl``.

    Returns ``{"S": n, "T": n}``.
    """
    src, tgt = render(spec)
    out = Path(out_dir)
    lines = []
    for domain, records in (("S", src), ("T", tgt)):
        folder = out / domain
        folder.mkdir(parents=True, exist_ok=True)
        for r in records:
            save_png(r.pixels, folder / f"{r.id}.png")
            lines.append(json.dumps({"id": r.id, "domain": domain, "file": f"{domain}/{r.id}.png",
                                     "background": r.background, "ellipses": r.ellipses}))
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    (out / "dataset_spec.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return {"S": len(src), "T": len(tgt)}


def _manifest_for(folder: Path) -> dict:
    for cand in (folder / MANIFEST, folder.parent / MANIFEST):
        if cand.exists():
            entries = {}
            for line in cand.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    entries[rec["id"]] = rec
            return entries
    return {}


def load_folder(path, image_size: int | None = None) -> list[ImageRecord]:
    """Load every PNG in ``path`` (sorted by filename) as pixels in [-1, 1].

    Geometry is attached when a ``manifest.jsonl`` sits in the folder or its
    parent.  Images whose size differs from ``image_size`` are rejected.
    """
    folder = Path(path)
    if not folder.is_dir():
        raise DatasetError(f"{folder}: not a directory")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DatasetError(f"{folder}: empty dataset (no .png files)")
    manifest = _manifest_for(folder)
    records = []
    for f in files:
        try:
            with Image.open(f) as im:
                im.load()
                if im.mode not in ("L", "RGB"):
                    im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"{f}: cannot decode image ({exc})") from exc
        arr = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
        if image_size is not None and arr.shape[1:] != (image_size, image_size):
            raise DatasetError(
                f"{f}: size {arr.shape[2]}x{arr.shape[1]} does not match image_size {image_size}; "
                "resizing is not supported")
        meta = manifest.get(f.stem, {})
        records.append(ImageRecord(
            f.stem, arr / 127.5 - 1.0,
            meta.get("domain", folder.name if folder.name in ("S", "T") else None),
            meta.get("background"), meta.get("ellipses")))
    return records


def stack(records) -> np.ndarray:
    return np.stack([r.pixels for r in records])


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def shape_footprint(record: ImageRecord, outline_width: float = 1.5) -> np.ndarray:
    """Pixels touched by any shape (filled ellipse, or outer ellipse of an outline)."""
    if record.ellipses is None:
        raise DatasetError(f"record {record.id} carries no manifest geometry")
    size = record.pixels.shape[-1]
    px, py = _subpixel_grid(size)
    grow = outline_width / 2 if record.domain == "T" else 0.0
    inside = np.zeros(px.shape, dtype=bool)
    for cx, cy, a, b, theta, _ in record.ellipses:
        inside |= _ellipse_level(px, py, cx, cy, a + grow, b + grow, theta) <= 1.0
    return _coverage(inside, size) > 0


def background_mask(record: ImageRecord, margin: int = MASK_MARGIN) -> np.ndarray:
    """True on pixels outside every shape, with a ``margin``-pixel guard band."""
    grown = ndimage.binary_dilation(shape_footprint(record), structure=_disk(margin))
    return ~grown
