"""Kernel Inception Distance with pluggable feature extractors.

KID is the unbiased squared MMD under the cubic polynomial kernel
``k(a, b) = (a.b / d + 1) ** 3``, averaged over random blocks.  The
Inception network is replaced by either raw pixels or a fixed random
convnet.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DatasetError, ShapeError

EXTRACTORS = ("flatten_pixels", "random_conv")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    kind: str = "random_conv"
    out_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXTRACTORS:
            raise ConfigError(f"unknown extractor {self.kind!r}; choose from {EXTRACTORS}")
        if self.out_dim < 2 or self.out_dim % 2:
            raise ConfigError(f"out_dim must be an even integer >= 2, got {self.out_dim}")


@dataclass(frozen=True)
class KidEstimate:
    mean: float
    std: float
    n_blocks: int
    block_size: int

    def format(self) -> str:
        return f"KID x100: {self.mean * 100:.4f} +/- {self.std * 100:.4f}"


def _random_conv_features(images: np.ndarray, spec: FeatureExtractorSpec) -> np.ndarray:
    # two stride-2 random conv layers, then per-channel spatial mean and std
    rng = np.random.default_rng(spec.seed)
    c = images.shape[1]
    mid = 16
    k1 = rng.normal(0.0, 1.0 / np.sqrt(c * 9), size=(mid, c, 3, 3))
    k2 = rng.normal(0.0, 1.0 / np.sqrt(mid * 9), size=(spec.out_dim // 2, mid, 3, 3))
    b1 = rng.normal(0.0, 0.1, size=mid)
    feats = []
    for i in range(0, len(images), 64):
        x = Tensor(images[i:i + 64])
        h = ad.relu(ad.add_channel_bias(ad.conv2d(x, Tensor(k1), 2, 1, "reflect"), Tensor(b1)))
        h = ad.relu(ad.conv2d(h, Tensor(k2), 2, 1, "reflect")).data
        feats.append(np.concatenate([h.mean(axis=(2, 3)), h.std(axis=(2, 3))], axis=1))
    return np.concatenate(feats)


def extract_features(spec: FeatureExtractorSpec, images) -> np.ndarray:
    """Map ``images[N,C,H,W]`` (or ``[N,H,W]``) to a feature matrix ``[N,d]``."""
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0 or len(images) == 0:
        raise DatasetError("extract_features: empty image set")
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4:
        raise ShapeError(f"extract_features: expected [N,C,H,W], got {images.shape}")
    if spec.kind == "flatten_pixels":
        return images.reshape(len(images), -1).copy()
    return _random_conv_features(images, spec)


def poly_kernel(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"poly_kernel: dimension mismatch {a.shape} vs {b.shape}")
    return float((a @ b / a.shape[0] + 1.0) ** 3)


def _gram(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"mmd2_unbiased: incompatible feature matrices {x.shape}, {y.shape}")
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise DatasetError(f"mmd2_unbiased needs at least 2 rows per set, got {m} and {n}")
    kxx, kyy, kxy = _gram(x, x), _gram(y, y), _gram(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.sum() / (m * n))


def kid_score(features_real, features_fake, block_size: int = 50, n_blocks: int = 100,
              seed: int = 0) -> KidEstimate:
    """Mean and (population) std of ``mmd2_unbiased`` over ``n_blocks``
    seeded subsets of ``block_size`` rows drawn without replacement from each
    set.  Values are raw, not multiplied by 100."""
    fr, ff = np.asarray(features_real), np.asarray(features_fake)
    if n_blocks < 1:
        raise ConfigError(f"n_blocks must be >= 1, got {n_blocks}")
    if block_size < 2:
        raise ConfigError(f"block_size must be >= 2, got {block_size}")
    if block_size > len(fr) or block_size > len(ff):
        raise DatasetError(
            f"block_size {block_size} exceeds set sizes (real {len(fr)}, fake {len(ff)})")
    rng = np.random.default_rng(seed)
    vals = np.empty(n_blocks)
    for b in range(n_blocks):
        ir = rng.choice(len(fr), block_size, replace=False)
        jf = rng.choice(len(ff), block_size, replace=False)
        vals[b] = mmd2_unbiased(fr[ir], ff[jf])
    return KidEstimate(float(vals.mean()), float(vals.std()), n_blocks, block_size)
