"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the active :class:`GradientTape` whenever any
input requires a gradient; outside a tape every op is a plain numpy
computation.  Tensors are immutable once built.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with GradientTape() as tape:
    ...     loss = mean(square(x))
    >>> backward(loss, tape)[x]
    array([6.])
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .errors import NumericalError, ShapeError, TapeError

_DEBUG = os.environ.get("GAIT_DEBUG", "") not in ("", "0")
_TAPE_STACK: list["GradientTape"] = []


def set_debug(enabled: bool) -> None:
    """Toggle finiteness checks after every recorded op."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    """Immutable float64 array of rank 0-4 with optional gradient tracking."""

    __slots__ = ("_data", "requires_grad", "node_id", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensors have at most 4 dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self._tape: GradientTape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # op outputs skip the construction-time finiteness scan (debug mode re-checks)
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)  # ascontiguousarray would promote rank 0
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        arr.flags.writeable = False
        t._data = arr
        t.requires_grad = requires_grad
        t.node_id = None
        t._tape = None
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self._data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


@dataclass
class _Node:
    op: str
    inputs: tuple
    backward: Callable | None


@dataclass
class GradientTape:
    """Append-only record of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self):
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.remove(self)
        return False

    def _register_leaf(self, t: Tensor) -> int:
        if t._tape is not self:
            t.node_id = len(self.nodes)
            t._tape = self
            self.nodes.append(_Node("leaf", (), None))
        return t.node_id


class Grads(dict):
    """node_id -> gradient array.  Indexing with a Tensor returns its
    gradient, or zeros when the tensor was not reached from the loss."""

    def __init__(self, tape: GradientTape):
        super().__init__()
        self._tape = tape

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            if key._tape is self._tape and key.node_id in self:
                return dict.__getitem__(self, key.node_id)
            return np.zeros(key.shape)
        return dict.__getitem__(self, key)


def _active_tape() -> GradientTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out`` and, if needed, append a node whose ``backward_fn`` maps
    the output gradient to a tuple of input gradients (None = no gradient)."""
    if _DEBUG and not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite output from op '{op}'")
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    res = Tensor._wrap(out, requires_grad=track)
    if track:
        in_ids = tuple(tape._register_leaf(t) if t.requires_grad else None for t in inputs)
        res.node_id = len(tape.nodes)
        res._tape = tape
        tape.nodes.append(_Node(op, in_ids, backward_fn))
    return res


def backward(loss: Tensor, tape: GradientTape) -> Grads:
    """Reverse sweep from a scalar ``loss``; consumes the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape already consumed by backward()")
    if loss._tape is not tape or loss.node_id is None:
        raise TapeError("loss was not recorded on this tape")
    if not np.isfinite(loss.data).all():
        raise NumericalError("loss is not finite")
    grads = Grads(tape)
    grads[loss.node_id] = np.ones(loss.shape)
    for nid in range(loss.node_id, -1, -1):
        g = dict.get(grads, nid)
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        for in_id, gi in zip(node.inputs, node.backward(g)):
            if in_id is None or gi is None:
                continue
            prev = dict.get(grads, in_id)
            grads[in_id] = gi if prev is None else prev + gi
    tape.consumed = True
    for node in tape.nodes:
        node.backward = None
    return grads


# --------------------------------------------------------------- elementwise

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(_as_tensor(a), float(b))
    a = _as_tensor(a)
    _check_same(a, b, "add")
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def _add_scalar(a: Tensor, s: float) -> Tensor:
    return _record("add_scalar", a.data + s, (a,), lambda g: (g,))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(_as_tensor(a), -float(b))
    a = _as_tensor(a)
    _check_same(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    a = _as_tensor(a)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("scale", a.data * s, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ad = a.data
    return _record("abs", np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return _record("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[N,C,H,W] + bias[C] broadcast over batch and space."""
    if x.data.ndim != 4 or bias.shape != (x.shape[1],):
        raise ShapeError(f"add_channel_bias: bias {bias.shape} does not fit input {x.shape}")
    return _record(
        "add_channel_bias",
        x.data + bias.data[None, :, None, None],
        (x, bias),
        lambda g: (g, g.sum(axis=(0, 2, 3))),
    )


# ---------------------------------------------------------------- reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001
    if a.size == 0:
        raise ShapeError("sum of an empty tensor")
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    shape, n = a.shape, a.size
    return _record("mean", np.array(a.data.sum() / n), (a,), lambda g: (np.full(shape, float(g) / n),))


# --------------------------------------------------------------- convolution

def _pad(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    if mode == "reflect":
        if p >= x.shape[2] or p >= x.shape[3]:
            raise ShapeError(f"reflect padding {p} needs spatial extent > {p}, got {x.shape[2:]}")
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _unpad(gp: np.ndarray, p: int, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad`."""
    if p == 0:
        return gp
    if mode == "zero":
        return gp[:, :, p:-p, p:-p].copy()
    # reflect: fold the border strips back onto their mirror sources
    g = gp.copy()
    h = g.shape[2] - 2 * p
    for k in range(p):
        g[:, :, p + 1 + k, :] += g[:, :, p - 1 - k, :]
        g[:, :, p + h - 2 - k, :] += g[:, :, p + h + k, :]
    g = g[:, :, p:p + h, :]
    w = g.shape[3] - 2 * p
    for k in range(p):
        g[:, :, :, p + 1 + k] += g[:, :, :, p - 1 - k]
        g[:, :, :, p + w - 2 - k] += g[:, :, :, p + w + k]
    return np.ascontiguousarray(g[:, :, :, p:p + w])


def _check_conv(x_shape, k_shape, stride, padding, mode, op):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise ShapeError(f"{op}: expected 4-d input and kernel, got {x_shape} and {k_shape}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be positive, got {stride}")
    if mode not in ("zero", "reflect"):
        raise ShapeError(f"{op}: unknown padding mode {mode!r}")
    if x_shape[2] + 2 * padding < k_shape[2] or x_shape[3] + 2 * padding < k_shape[3]:
        raise ShapeError(f"{op}: kernel {k_shape[2:]} larger than padded input {x_shape[2:]} (+{padding})")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


# kernels with at most this many output channels use direct convolution
DIRECT_MAX_COUT = 2


def _direct(w_shape) -> bool:
    return w_shape[0] <= DIRECT_MAX_COUT


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int, mode: str):
    """Return the conv output and what the weight gradient needs later
    (the padded input for direct kernels, the im2col matrix otherwise)."""
    n = x.shape[0]
    cout, _, kh, kw = w.shape
    xp = np.ascontiguousarray(_pad(x, padding, mode))
    if _direct(w.shape):
        return _backend.conv_direct(xp, np.ascontiguousarray(w), stride), xp
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    cols = _backend.im2col(xp, kh, kw, stride)
    out = (w.reshape(cout, -1) @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def _to_rows(g: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> [C, N*H*W], the GEMM layout of im2col columns."""
    return np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(g.shape[1], -1)


def _conv_input_grad(g: np.ndarray, w: np.ndarray, x_shape, stride, padding, mode):
    """Gradient of conv2d w.r.t. its input, i.e. the transposed convolution."""
    n = g.shape[0]
    cout, cin, kh, kw = w.shape
    padded = (n, cin, x_shape[2] + 2 * padding, x_shape[3] + 2 * padding)
    if _direct(w.shape):
        gp = _backend.conv_direct_input_grad(np.ascontiguousarray(g), np.ascontiguousarray(w), padded, stride)
    else:
        gp = _backend.col2im(w.reshape(cout, -1).T @ _to_rows(g), padded, kh, kw, stride)
    return _unpad(gp, padding, mode)


def _conv_weight_grad(g: np.ndarray, saved: np.ndarray, w_shape, stride) -> np.ndarray:
    if _direct(w_shape):
        return _backend.conv_direct_weight_grad(np.ascontiguousarray(g), saved, tuple(w_shape), stride)
    return (_to_rows(g) @ saved.T).reshape(w_shape)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, mode: str = "zero") -> Tensor:
    """Cross-correlation of ``x[N,Cin,H,W]`` with ``kernel[Cout,Cin,kh,kw]``.

    ``mode`` selects zero or reflect padding of width ``padding``.  The kernel
    is applied un-flipped.
    """
    _check_conv(x.shape, kernel.shape, stride, padding, mode, "conv2d")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    out, saved = _conv_forward(x.data, kernel.data, stride, padding, mode)
    w, x_shape, w_shape = kernel.data, x.shape, kernel.shape

    def bw(g):
        gx = _conv_input_grad(g, w, x_shape, stride, padding, mode) if x.requires_grad else None
        gw = _conv_weight_grad(g, saved, w_shape, stride) if kernel.requires_grad else None
        return gx, gw

    return _record("conv2d", out, (x, kernel), bw)


def conv2d_transpose(
    x: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: int = 0,
    mode: str = "zero",
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d` with the same ``kernel[Cout,Cin,kh,kw]``.

    Maps ``x[N,Cout,H',W']`` to ``[N,Cin,H,W]`` with
    ``H = (H'-1)*stride - 2*padding + kh + output_padding``.
    """
    if len(x.shape) != 4 or len(kernel.shape) != 4:
        raise ShapeError(f"conv2d_transpose: expected 4-d tensors, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"conv2d_transpose: input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}")
    if not 0 <= output_padding < stride:
        raise ShapeError(f"conv2d_transpose: output_padding must be in [0, stride), got {output_padding}")
    cout, cin, kh, kw = kernel.shape
    h = (x.shape[2] - 1) * stride - 2 * padding + kh + output_padding
    wd = (x.shape[3] - 1) * stride - 2 * padding + kw + output_padding
    out_shape = (x.shape[0], cin, h, wd)
    _check_conv(out_shape, kernel.shape, stride, padding, mode, "conv2d_transpose")
    if h < 1 or wd < 1:
        raise ShapeError(f"conv2d_transpose: empty output for input {x.shape}")
    w = kernel.data
    xd = x.data
    out = _conv_input_grad(xd, w, out_shape, stride, padding, mode)

    def bw(g):
        res, saved = _conv_forward(g, w, stride, padding, mode)
        gx = res if x.requires_grad else None
        gw = _conv_weight_grad(xd, saved, kernel.shape, stride) if kernel.requires_grad else None
        return gx, gw

    return _record("conv2d_transpose", out, (x, kernel), bw)
