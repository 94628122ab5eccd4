"""Pure numpy reference for the convolution lowering kernels.

Column layout is ``(C*kh*kw, N*Ho*Wo)`` so a convolution is one 2-D GEMM.
Both functions must stay bit-identical to the compiled versions in
``_kernels.pyx``: ``col2im`` accumulates contributions in (ki, kj) order.
"""
import numpy as np


def im2col(xp, kh, kw, stride):
    """Unfold padded input ``(N, C, Hp, Wp)`` into ``(C*kh*kw, N*Ho*Wo)``."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=np.float64)
    xt = xp.transpose(1, 0, 2, 3)
    for ki in range(kh):
        i_end = ki + stride * ho
        for kj in range(kw):
            j_end = kj + stride * wo
            cols[:, ki, kj] = xt[:, :, ki:i_end:stride, kj:j_end:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols, shape, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``shape``."""
    n, c, hp, wp = shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=np.float64)
    for ki in range(kh):
        i_end = ki + stride * ho
        for kj in range(kw):
            j_end = kj + stride * wo
            out[:, :, ki:i_end:stride, kj:j_end:stride] += cols[:, ki, kj]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _window(xp, ki, kj, ho, wo, stride):
    return xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]


def conv_direct(xp, w, stride):
    """Direct cross-correlation, accumulated one kernel offset at a time."""
    n, _, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ki in range(kh):
        for kj in range(kw):
            out += np.einsum("oc,nchw->nohw", w[:, :, ki, kj], _window(xp, ki, kj, ho, wo, stride))
    return out


def conv_direct_input_grad(g, w, padded_shape, stride):
    _, _, ho, wo = g.shape
    _, _, kh, kw = w.shape
    out = np.zeros(padded_shape)
    for ki in range(kh):
        for kj in range(kw):
            _window(out, ki, kj, ho, wo, stride)[...] += np.einsum("oc,nohw->nchw", w[:, :, ki, kj], g)
    return out


def conv_direct_weight_grad(g, xp, w_shape, stride):
    _, _, ho, wo = g.shape
    _, _, kh, kw = w_shape
    out = np.zeros(w_shape)
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki, kj] = np.einsum("nohw,nchw->oc", g, _window(xp, ki, kj, ho, wo, stride))
    return out
