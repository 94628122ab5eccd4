"""Sobel edge responses and the gradient adjustment loss.

The loss ties the Sobel response of a translated image to the (scaled)
Sobel response of its source.  The forward translation target is
``c_ga * Sobel(x)``; the inverse direction uses ``Sobel(y) / c_ga``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DegenerateInputError, ShapeError

SOBEL_H = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()


@dataclass(frozen=True)
class SobelResponse:
    horizontal: Tensor
    vertical: Tensor


def _sobel(x: Tensor, axis: int) -> Tensor:
    """Separable Sobel along ``axis`` (3 = horizontal, 2 = vertical): a central
    difference along ``axis`` then [1, 2, 1] smoothing across it.  Written as
    differences so constant regions give exact zeros."""
    xp = ad._pad(x.data, 1, "reflect")
    other = 5 - axis

    def sl(ax, start, stop):
        idx = [slice(None)] * 4
        idx[ax] = slice(start, stop)
        return tuple(idx)

    d = xp[sl(axis, 2, None)] - xp[sl(axis, 0, -2)]
    out = d[sl(other, 0, -2)] + 2.0 * d[sl(other, 1, -1)] + d[sl(other, 2, None)]

    def bw(g):
        gd = np.zeros(d.shape)
        gd[sl(other, 0, -2)] += g
        gd[sl(other, 1, -1)] += 2.0 * g
        gd[sl(other, 2, None)] += g
        gp = np.zeros(xp.shape)
        gp[sl(axis, 2, None)] += gd
        gp[sl(axis, 0, -2)] -= gd
        return (ad._unpad(gp, 1, "reflect"),)

    return ad._record("sobel_response", out, (x,), bw)


def sobel_response(image: Tensor) -> SobelResponse:
    """Per-channel cross-correlation with SOBEL_H and SOBEL_V, reflect-padded
    so the output matches the input shape."""
    if len(image.shape) != 4:
        raise ShapeError(f"sobel_response expects [N,C,H,W], got {image.shape}")
    if image.shape[2] < 3 or image.shape[3] < 3:
        raise ShapeError(f"sobel_response needs at least 3x3 images, got {image.shape[2:]}")
    return SobelResponse(_sobel(image, 3), _sobel(image, 2))


def direction_loss(source: Tensor, translated: Tensor, c: float) -> Tensor:
    """mean((c*Sh(src) - Sh(out))^2) + mean((c*Sv(src) - Sv(out))^2)."""
    if source.shape != translated.shape:
        raise ShapeError(f"gradient adjustment: {source.shape} vs {translated.shape}")
    s = sobel_response(source)
    t = sobel_response(translated)
    h = ad.mean(ad.square(ad.sub(ad.scale(s.horizontal, c), t.horizontal)))
    v = ad.mean(ad.square(ad.sub(ad.scale(s.vertical, c), t.vertical)))
    return ad.add(h, v)


def gradient_adjustment_loss(x: Tensor, fx: Tensor, y: Tensor, fy_inv: Tensor, c_ga: float) -> Tensor:
    """Forward pair (x -> fx) is matched against ``c_ga * Sobel(x)``, the
    inverse pair (y -> fy_inv) against ``Sobel(y) / c_ga``."""
    if not c_ga > 0:
        raise ConfigError(f"c_ga must be positive, got {c_ga}")
    return ad.add(direction_loss(x, fx, c_ga), direction_loss(y, fy_inv, 1.0 / c_ga))


def optimal_cga(x: Tensor, fx: Tensor) -> float:
    """Closed-form c minimizing ||c*Sobel(x) - Sobel(fx)||^2 over both
    directions jointly."""
    sx, sf = sobel_response(x.detach()), sobel_response(fx.detach())
    a = np.concatenate([sx.horizontal.data.ravel(), sx.vertical.data.ravel()])
    b = np.concatenate([sf.horizontal.data.ravel(), sf.vertical.data.ravel()])
    denom = float(a @ a)
    if denom == 0.0:
        raise DegenerateInputError("optimal_cga undefined for a constant source image")
    return float(a @ b) / denom
