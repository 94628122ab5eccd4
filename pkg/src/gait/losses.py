"""Least-squares adversarial losses, L1 cycle consistency and the
generator/discriminator total objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_grad: float = 630.0
    c_ga: float = 1.0

    def __post_init__(self):
        if not self.c_ga > 0:
            raise ConfigError(f"c_ga must be positive, got {self.c_ga}")
        if self.lambda_cyc < 0 or self.lambda_grad < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class LossReport:
    adv_f_s: float
    adv_f_t: float
    adv_d_s: float
    adv_d_t: float
    cyc: float
    grad: float
    total_f: float
    total_d: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def values(self):
        return [getattr(self, c) for c in self.columns()]


def _nonempty(t: Tensor, name: str):
    if t.size == 0:
        raise ShapeError(f"{name}: empty score tensor")


def adv_loss_generator(d_scores_on_fake: Tensor) -> Tensor:
    """mean((D(fake) - 1)^2)."""
    _nonempty(d_scores_on_fake, "adv_loss_generator")
    return ad.mean(ad.square(ad.sub(d_scores_on_fake, 1.0)))


def adv_loss_discriminator(d_scores_on_real: Tensor, d_scores_on_fake: Tensor) -> Tensor:
    """0.5 * mean((D(real) - 1)^2) + 0.5 * mean(D(fake)^2)."""
    _nonempty(d_scores_on_real, "adv_loss_discriminator")
    _nonempty(d_scores_on_fake, "adv_loss_discriminator")
    real = ad.mean(ad.square(ad.sub(d_scores_on_real, 1.0)))
    fake = ad.mean(ad.square(d_scores_on_fake))
    return ad.scale(ad.add(real, fake), 0.5)


def cycle_consistency_loss(x: Tensor, x_reconstructed: Tensor, y: Tensor, y_reconstructed: Tensor) -> Tensor:
    return ad.add(ad.mean(ad.abs(ad.sub(x, x_reconstructed))),
                  ad.mean(ad.abs(ad.sub(y, y_reconstructed))))


def _finite(name, value):
    v = value.item() if isinstance(value, Tensor) else float(value)
    if not math.isfinite(v):
        raise NumericalError(f"loss term '{name}' is not finite ({v})")


def total_losses(parts: dict, w: LossWeights):
    """Combine per-term losses into ``(total_f, total_d)``.

    ``parts`` holds adv_f_s, adv_f_t, cyc, grad, adv_d_s, adv_d_t as floats
    or scalar tensors; either total is None when its terms are absent.
    """
    for name, value in parts.items():
        _finite(name, value)
    total_f = total_d = None
    if all(k in parts for k in ("adv_f_s", "adv_f_t", "cyc", "grad")):
        total_f = (parts["adv_f_s"] + parts["adv_f_t"]
                   + parts["cyc"] * w.lambda_cyc + parts["grad"] * w.lambda_grad)
    if "adv_d_s" in parts and "adv_d_t" in parts:
        total_d = parts["adv_d_s"] + parts["adv_d_t"]
    return total_f, total_d
