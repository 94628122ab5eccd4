"""Residual encoder/decoder generator and PatchGAN discriminator.

Both are scaled-down versions of the usual CycleGAN architectures:

* generator: c7s1-k, ``n_downsample`` stride-2 convs, ``n_res_blocks``
  residual blocks, matching transposed convs, c7s1-C + tanh.  Reflection
  padding, instance norm, ReLU.
* discriminator: ``n_layers`` 4x4 stride-2 convs (no norm on the first),
  LeakyReLU(0.2), then a 4x4 stride-1 scoring conv with no output
  nonlinearity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

INIT_STD = 0.02
NORM_EPS = 1e-5


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    base_channels: int = 16
    n_res_blocks: int = 2
    n_downsample: int = 2
    image_size: int = 32
    up_kernel: int = 4

    def validate(self):
        for name in ("in_channels", "base_channels", "image_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"GeneratorConfig.{name} must be positive")
        if self.n_res_blocks < 0 or self.n_downsample < 0:
            raise ConfigError("GeneratorConfig block counts must be non-negative")
        if self.image_size % (2 ** self.n_downsample):
            raise ConfigError(
                f"image_size {self.image_size} not divisible by 2**n_downsample={2 ** self.n_downsample}")
        if self.image_size // 2 ** self.n_downsample < 2 and self.n_res_blocks:
            raise ConfigError("bottleneck too small for reflection-padded residual blocks")
        if self.image_size < 4:
            raise ConfigError("image_size must be at least 4 for 7x7 reflection padding")
        if self.up_kernel not in (3, 4):
            raise ConfigError(f"GeneratorConfig.up_kernel must be 3 or 4, got {self.up_kernel}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    base_channels: int = 16
    n_layers: int = 2
    image_size: int = 32

    def validate(self):
        for name in ("in_channels", "base_channels", "n_layers", "image_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"DiscriminatorConfig.{name} must be positive")
        if discriminator_output_size(self) < 1:
            raise ConfigError(
                f"discriminator with {self.n_layers} layers leaves no output for {self.image_size}px input")


def discriminator_output_size(config: DiscriminatorConfig) -> int:
    s = config.image_size
    for _ in range(config.n_layers):
        s = ad.conv_output_size(s, 4, 2, 1)
    return ad.conv_output_size(s, 4, 1, 1)


class Params(dict):
    """Ordered name -> Tensor map holding one network's parameters."""

    def frozen(self) -> "Params":
        """Same values, no gradient tracking."""
        return type(self)((k, v.detach()) for k, v in self.items())

    def trainable(self) -> "Params":
        return type(self)((k, Tensor._wrap(v.data, requires_grad=True)) for k, v in self.items())

    def count(self) -> int:
        return int(np.sum([v.size for v in self.values()]))

    def equal(self, other: "Params") -> bool:
        return list(self) == list(other) and all(
            self[k].shape == other[k].shape and np.array_equal(self[k].data, other[k].data) for k in self)


class GeneratorParams(Params):
    pass


class DiscriminatorParams(Params):
    pass


def _generator_layout(cfg: GeneratorConfig):
    """(name, shape, kind) for every generator parameter in forward order."""
    c, b = cfg.in_channels, cfg.base_channels
    layout = [("in.conv", (b, c, 7, 7), "conv"), ("in.norm.scale", (b,), "one"), ("in.norm.shift", (b,), "zero")]
    ch = b
    for i in range(cfg.n_downsample):
        layout += [(f"down{i}.conv", (2 * ch, ch, 3, 3), "conv"),
                   (f"down{i}.norm.scale", (2 * ch,), "one"), (f"down{i}.norm.shift", (2 * ch,), "zero")]
        ch *= 2
    for i in range(cfg.n_res_blocks):
        for j in (1, 2):
            layout += [(f"res{i}.conv{j}", (ch, ch, 3, 3), "conv"),
                       (f"res{i}.norm{j}.scale", (ch,), "one"), (f"res{i}.norm{j}.shift", (ch,), "zero")]
    for i in range(cfg.n_downsample):
        # transposed conv kernel is [C_in_of_layer, C_out_of_layer, k, k]
        k = cfg.up_kernel
        layout += [(f"up{i}.convt", (ch, ch // 2, k, k), "conv"),
                   (f"up{i}.norm.scale", (ch // 2,), "one"), (f"up{i}.norm.shift", (ch // 2,), "zero")]
        ch //= 2
    layout += [("out.conv", (c, b, 7, 7), "conv"), ("out.bias", (c,), "zero")]
    return layout


def _discriminator_layout(cfg: DiscriminatorConfig):
    ch_in, ch = cfg.in_channels, cfg.base_channels
    layout = [("layer0.conv", (ch, ch_in, 4, 4), "conv"), ("layer0.bias", (ch,), "zero")]
    for i in range(1, cfg.n_layers):
        layout += [(f"layer{i}.conv", (2 * ch, ch, 4, 4), "conv"),
                   (f"layer{i}.norm.scale", (2 * ch,), "one"), (f"layer{i}.norm.shift", (2 * ch,), "zero")]
        ch *= 2
    layout += [("score.conv", (1, ch, 4, 4), "conv"), ("score.bias", (1,), "zero")]
    return layout


def _init(layout, seed: int, cls):
    rng = np.random.default_rng(seed)
    params = cls()
    for name, shape, kind in layout:
        if kind == "conv":
            arr = rng.normal(0.0, INIT_STD, size=shape)
        elif kind == "one":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr)
    return params


def init_generator(config: GeneratorConfig, seed: int) -> GeneratorParams:
    config.validate()
    return _init(_generator_layout(config), seed, GeneratorParams)


def init_discriminator(config: DiscriminatorConfig, seed: int) -> DiscriminatorParams:
    config.validate()
    return _init(_discriminator_layout(config), seed, DiscriminatorParams)


def instance_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize each (sample, channel) plane over its spatial extent, then
    apply a per-channel affine map."""
    if len(x.shape) != 4:
        raise ShapeError(f"instance_norm expects [N,C,H,W], got {x.shape}")
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"instance_norm: scale/shift must have shape ({c},), got {scale.shape}, {shift.shape}")
    xd = x.data
    m = xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gamma = scale.data[None, :, None, None]
    out = xhat * gamma + shift.data[None, :, None, None]

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma
            gx = inv * (gh - gh.sum(axis=(2, 3), keepdims=True) / m
                        - xhat * (gh * xhat).sum(axis=(2, 3), keepdims=True) / m)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return ad._record("instance_norm", out, (x, scale, shift), bw)


def _norm(x, p, prefix):
    return instance_norm(x, p[prefix + ".scale"], p[prefix + ".shift"])


def _check_input(x: Tensor, channels: int, size: int, who: str):
    if len(x.shape) != 4 or x.shape[1] != channels or x.shape[2] != size or x.shape[3] != size:
        raise ShapeError(f"{who}: expected [N,{channels},{size},{size}], got {x.shape}")


def generator_forward(params: GeneratorParams, x: Tensor, config: GeneratorConfig) -> Tensor:
    _check_input(x, config.in_channels, config.image_size, "generator")
    h = ad.relu(_norm(ad.conv2d(x, params["in.conv"], 1, 3, "reflect"), params, "in.norm"))
    for i in range(config.n_downsample):
        h = ad.conv2d(h, params[f"down{i}.conv"], 2, 1, "reflect")
        h = ad.relu(_norm(h, params, f"down{i}.norm"))
    for i in range(config.n_res_blocks):
        r = ad.conv2d(h, params[f"res{i}.conv1"], 1, 1, "reflect")
        r = ad.relu(_norm(r, params, f"res{i}.norm1"))
        r = ad.conv2d(r, params[f"res{i}.conv2"], 1, 1, "reflect")
        h = ad.add(h, _norm(r, params, f"res{i}.norm2"))
    for i in range(config.n_downsample):
        # stride 2, pad 1: a 3x3 kernel needs output_padding 1 to double the size, 4x4 needs none
        h = ad.conv2d_transpose(h, params[f"up{i}.convt"], 2, 1, "zero", output_padding=4 - config.up_kernel)
        h = ad.relu(_norm(h, params, f"up{i}.norm"))
    h = ad.conv2d(h, params["out.conv"], 1, 3, "reflect")
    return ad.tanh(ad.add_channel_bias(h, params["out.bias"]))


def discriminator_forward(params: DiscriminatorParams, x: Tensor, config: DiscriminatorConfig) -> Tensor:
    _check_input(x, config.in_channels, config.image_size, "discriminator")
    h = ad.conv2d(x, params["layer0.conv"], 2, 1, "zero")
    h = ad.leaky_relu(ad.add_channel_bias(h, params["layer0.bias"]), 0.2)
    for i in range(1, config.n_layers):
        h = ad.conv2d(h, params[f"layer{i}.conv"], 2, 1, "zero")
        h = ad.leaky_relu(_norm(h, params, f"layer{i}.norm"), 0.2)
    h = ad.conv2d(h, params["score.conv"], 1, 1, "zero")
    return ad.add_channel_bias(h, params["score.bias"])
