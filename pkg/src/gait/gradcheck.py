"""Central finite-difference checks for every differentiable op.

Each registered check draws a random instance, builds a scalar loss from the
op (non-scalar outputs are contracted with a fixed random weight) and
compares reverse-mode gradients against central differences with
``h = 1e-5``.  The error measure is ``|ad - fd| / max(1, |fd|)``.

Small ops are checked coordinate by coordinate.  The two network forwards
are checked along one random direction per parameter tensor, which keeps a
20-instance sweep within seconds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import gradient_adjustment as ga
from . import losses, networks
from .autodiff import GradientTape, Tensor, backward

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    op: str
    instances: int
    max_error: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.op:<28} instances={self.instances:<3d} max_rel_err={self.max_error:.2e}"


@dataclass
class _Check:
    name: str
    build: Callable  # rng -> (fn(*Tensors) -> Tensor, [arrays])
    directional: bool = False


REGISTRY: dict[str, _Check] = {}


def register(name: str, directional: bool = False):
    def deco(build):
        if name in REGISTRY:
            raise ValueError(f"duplicate gradcheck registration: {name}")
        REGISTRY[name] = _Check(name, build, directional)
        return build
    return deco


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.uniform(-1, 1, size=shape)
    bad = np.abs(x) < margin
    x[bad] = np.where(x[bad] < 0, -1.0, 1.0) * (margin + rng.uniform(0, 0.5, size=bad.sum()))
    return x


def _scalarize(out: Tensor, weight: np.ndarray | None) -> Tensor:
    if out.size == 1 and weight is None:
        return ad.reshape(out, ()) if out.shape != () else out
    return ad.sum(ad.mul(out, Tensor(weight)))


def _evaluate(fn, arrays, weight) -> float:
    return _scalarize(fn(*[Tensor(a) for a in arrays]), weight).item()


def _analytic(fn, arrays, weight):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with GradientTape() as tape:
        loss = _scalarize(fn(*ts), weight)
    grads = backward(loss, tape)
    return [grads[t] for t in ts]


def _err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(n))


_KINK_OPS = ("relu", "leaky_relu", "abs")
MAX_REDRAWS = 20


class AtKink(RuntimeError):
    """Every probe direction straddles a kink; the point has no usable derivative."""


def _kink_signs(fn, arrays) -> list:
    """Sign pattern of every relu/leaky_relu/abs input while evaluating ``fn``."""
    signs = []
    real = ad._record

    def spy(op, out, inputs, backward_fn):
        if op in _KINK_OPS:
            signs.append(inputs[0].data > 0)
        return real(op, out, inputs, backward_fn)

    ad._record = spy
    try:
        fn(*[Tensor(a) for a in arrays])
    finally:
        ad._record = real
    return signs


def _same_piece(fn, *points) -> bool:
    first, *rest = (_kink_signs(fn, p) for p in points)
    return all(len(first) == len(o) and all(np.array_equal(a, b) for a, b in zip(first, o)) for o in rest)


def check_instance(fn, arrays, rng, directional=False) -> float:
    """Max relative error between autodiff and central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    weight = None if probe.size == 1 else rng.uniform(-1, 1, size=probe.shape)
    grads = _analytic(fn, arrays, weight)
    worst = 0.0
    for i, a in enumerate(arrays):
        if directional:
            # a central difference across a kink measures no derivative; redraw the direction
            for _ in range(MAX_REDRAWS):
                v = rng.standard_normal(a.shape)
                plus = [b if j != i else a + STEP * v for j, b in enumerate(arrays)]
                minus = [b if j != i else a - STEP * v for j, b in enumerate(arrays)]
                if _same_piece(fn, minus, arrays, plus):
                    break
            else:
                raise AtKink(f"no kink-free direction in {MAX_REDRAWS} draws")
            num = (_evaluate(fn, plus, weight) - _evaluate(fn, minus, weight)) / (2 * STEP)
            worst = max(worst, _err(float(np.sum(grads[i] * v)), num))
            continue
        flat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + STEP
            fp = _evaluate(fn, arrays, weight)
            flat[k] = orig - STEP
            fm = _evaluate(fn, arrays, weight)
            flat[k] = orig
            worst = max(worst, _err(float(grads[i].reshape(-1)[k]), (fp - fm) / (2 * STEP)))
    return worst


def run_check(name: str, instances: int = 20, seed: int = 0) -> CheckResult:
    chk = REGISTRY[name]
    rng = np.random.default_rng([seed, sorted(REGISTRY).index(name)])
    worst, done, skipped = 0.0, 0, 0
    while done < instances:
        fn, arrays = chk.build(rng)
        try:
            worst = max(worst, check_instance(fn, arrays, rng, chk.directional))
        except AtKink:
            skipped += 1
            if skipped > instances:
                raise
            continue
        done += 1
    return CheckResult(name, instances, worst, bool(worst < TOLERANCE))


def run_all(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    return [run_check(name, instances, seed) for name in REGISTRY]


# ------------------------------------------------------------------- registry

def _u(rng, *shape):
    return rng.uniform(-1, 1, size=shape)


def _shape(rng):
    return tuple(int(s) for s in rng.integers(1, 4, size=int(rng.integers(1, 5))))


@register("add")
def _(rng):
    s = _shape(rng)
    return ad.add, [_u(rng, *s), _u(rng, *s)]


@register("add_scalar")
def _(rng):
    c = float(rng.uniform(-2, 2))
    return (lambda a: ad.add(a, c)), [_u(rng, *_shape(rng))]


@register("sub")
def _(rng):
    s = _shape(rng)
    return ad.sub, [_u(rng, *s), _u(rng, *s)]


@register("mul")
def _(rng):
    s = _shape(rng)
    return ad.mul, [_u(rng, *s), _u(rng, *s)]


@register("scale")
def _(rng):
    c = float(rng.uniform(-3, 3))
    return (lambda a: ad.scale(a, c)), [_u(rng, *_shape(rng))]


@register("square")
def _(rng):
    return ad.square, [_u(rng, *_shape(rng))]


@register("abs")
def _(rng):
    return ad.abs, [_away_from_zero(rng, _shape(rng))]


@register("relu")
def _(rng):
    return ad.relu, [_away_from_zero(rng, _shape(rng))]


@register("leaky_relu")
def _(rng):
    return (lambda a: ad.leaky_relu(a, 0.2)), [_away_from_zero(rng, _shape(rng))]


@register("tanh")
def _(rng):
    return ad.tanh, [2 * _u(rng, *_shape(rng))]


@register("reshape")
def _(rng):
    return (lambda a: ad.reshape(a, (-1,))), [_u(rng, 2, 3, 2)]


@register("add_channel_bias")
def _(rng):
    c = int(rng.integers(1, 4))
    return ad.add_channel_bias, [_u(rng, 2, c, 3, 3), _u(rng, c)]


@register("sum")
def _(rng):
    return ad.sum, [_u(rng, *_shape(rng))]


@register("mean")
def _(rng):
    return ad.mean, [_u(rng, *_shape(rng))]


@register("conv2d")
def _(rng):
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    mode = str(rng.choice(["zero", "reflect"]))
    size = int(rng.integers(max(3, k), 6))
    fn = lambda x, w: ad.conv2d(x, w, stride, pad, mode)  # noqa: E731
    return fn, [_u(rng, n, cin, size, size), _u(rng, cout, cin, k, k)]


@register("conv2d_transpose")
def _(rng):
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.choice([2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    outpad = int(rng.integers(0, stride))
    size = int(rng.integers(2, 5))
    fn = lambda x, w: ad.conv2d_transpose(x, w, stride, pad, "zero", outpad)  # noqa: E731
    return fn, [_u(rng, n, cout, size, size), _u(rng, cout, cin, k, k)]


@register("instance_norm")
def _(rng):
    c = int(rng.integers(1, 4))
    h = int(rng.integers(2, 5))
    return networks.instance_norm, [_u(rng, 2, c, h, h + 1), 1 + 0.5 * _u(rng, c), _u(rng, c)]


@register("adv_loss_generator")
def _(rng):
    return losses.adv_loss_generator, [2 * _u(rng, 2, 1, 3, 3)]


@register("adv_loss_discriminator")
def _(rng):
    return losses.adv_loss_discriminator, [2 * _u(rng, 2, 1, 3, 3), 2 * _u(rng, 2, 1, 3, 3)]


@register("cycle_consistency_loss")
def _(rng):
    return losses.cycle_consistency_loss, [_u(rng, 2, 1, 4, 4), _away_from_zero(rng, (2, 1, 4, 4)),
                                           _u(rng, 2, 1, 4, 4), _away_from_zero(rng, (2, 1, 4, 4))]


@register("sobel_response")
def _(rng):
    def fn(x):
        r = ga.sobel_response(x)
        return ad.add(r.horizontal, ad.scale(r.vertical, 0.5))
    return fn, [_u(rng, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 4, 5)]


@register("gradient_adjustment_loss")
def _(rng):
    c = float(rng.uniform(0.5, 2.5))
    fn = lambda x, fx, y, fy: ga.gradient_adjustment_loss(x, fx, y, fy, c)  # noqa: E731
    return fn, [_u(rng, 2, 1, 5, 5) for _ in range(4)]


GRADCHECK_GENERATOR = networks.GeneratorConfig(in_channels=1, base_channels=2, n_res_blocks=1,
                                               n_downsample=2, image_size=8)
GRADCHECK_DISCRIMINATOR = networks.DiscriminatorConfig(in_channels=1, base_channels=2, n_layers=2,
                                                       image_size=8)


def _network_check(rng, layout, forward, cfg):
    # perturb initial values so norms and biases are not at their special points
    names = [name for name, _, _ in layout]
    arrays = []
    for _, shape, kind in layout:
        base = {"conv": 0.0, "one": 1.0, "zero": 0.0}[kind]
        spread = 0.5 if kind == "conv" else 0.2
        arrays.append(base + spread * rng.uniform(-1, 1, size=shape))
    x = _u(rng, 2, cfg.in_channels, cfg.image_size, cfg.image_size)

    def fn(x_t, *ps):
        return ad.mean(forward(dict(zip(names, ps)), x_t, cfg))

    return fn, [x] + arrays


@register("generator_forward", directional=True)
def _(rng):
    cfg = GRADCHECK_GENERATOR
    return _network_check(rng, networks._generator_layout(cfg), networks.generator_forward, cfg)


@register("discriminator_forward", directional=True)
def _(rng):
    cfg = GRADCHECK_DISCRIMINATOR
    return _network_check(rng, networks._discriminator_layout(cfg), networks.discriminator_forward, cfg)
