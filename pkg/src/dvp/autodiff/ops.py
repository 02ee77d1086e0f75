"""Differentiable primitives: arithmetic, reductions, relu, per-channel affine
and 2-D convolution with same (reflect or zero) padding."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = as_tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), backward)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._make(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return Tensor._make(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                        lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._make(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                        lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def slice_batch(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[start:stop]`` along the leading axis."""
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[start:stop] = g
        return (out,)

    return Tensor._make(x.data[start:stop], (x,), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    return Tensor._make(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor, layout: str = "NCHW") -> Tensor:
    """``x * scale[c] + shift[c]`` per channel."""
    axis = 1 if layout == "NCHW" else 3
    c = x.shape[axis]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError("channel_affine", "channels", c, (scale.shape, shift.shape))
    bshape = [1, 1, 1, 1]
    bshape[axis] = c
    s = scale.data.reshape(bshape)
    xd = x.data
    red = tuple(a for a in range(4) if a != axis)

    def backward(g):
        gx = g * s if x.requires_grad else None
        gs = (g * xd).sum(axis=red) if scale.requires_grad else None
        gb = g.sum(axis=red) if shift.requires_grad else None
        return gx, gs, gb

    return Tensor._make(xd * s + shift.data.reshape(bshape), (x, scale, shift), backward)


# -- convolution ---------------------------------------------------------------

def pad2d(x: np.ndarray, p: int, mode: str, axes=(2, 3)) -> np.ndarray:
    if p == 0:
        return x
    widths = [(0, 0)] * x.ndim
    for a in axes:
        widths[a] = (p, p)
    if mode == "reflect":
        return np.pad(x, widths, mode="reflect")
    if mode == "zeros":
        return np.pad(x, widths)
    raise ValueError(f"unknown padding mode {mode!r}")


def _fold_axis(g: np.ndarray, p: int, axis: int, mode: str) -> np.ndarray:
    n = g.shape[axis] - 2 * p

    def at(i):
        idx = [slice(None)] * g.ndim
        idx[axis] = i
        return tuple(idx)

    out = g[at(slice(p, p + n))].copy()
    if mode == "reflect":
        for j in range(p):
            out[at(p - j)] += g[at(j)]
            out[at(n - 2 - j)] += g[at(p + n + j)]
    return out


def pad2d_adjoint(g: np.ndarray, p: int, mode: str, axes=(2, 3)) -> np.ndarray:
    """Adjoint of :func:`pad2d`: folds the padded border back onto the interior."""
    if p == 0:
        return g
    if mode not in ("reflect", "zeros"):
        raise ValueError(f"unknown padding mode {mode!r}")
    for a in axes:
        g = _fold_axis(g, p, a, mode)
    return g


def _im2col_nhwc(xp: np.ndarray, h: int, w: int, k: int) -> np.ndarray:
    """(N, h+k-1, w+k-1, C) padded input -> (N*h*w, k*k*C) patch matrix."""
    n, c = xp.shape[0], xp.shape[3]
    s0, s1, s2, s3 = xp.strides
    cols = np.empty((n, h, w, k, k, c), dtype=xp.dtype)
    for i in range(k):
        cols[:, :, :, i] = np.lib.stride_tricks.as_strided(
            xp[:, i:i + h], shape=(n, h, w, k, c), strides=(s0, s1, s2, s2, s3))
    return cols.reshape(n * h * w, k * k * c)


def _conv_nhwc(xd: np.ndarray, kd: np.ndarray, bd: np.ndarray | None, padding: str, need_gx: bool):
    n, h, w, c = xd.shape
    o, _, k, _ = kd.shape
    p = k // 2
    xp = pad2d(xd, p, padding, axes=(1, 2))
    cols = _im2col_nhwc(xp, h, w, k)
    kmat = np.ascontiguousarray(kd.transpose(2, 3, 1, 0)).reshape(k * k * c, o)
    out = cols @ kmat
    if bd is not None:
        out += bd
    out = out.reshape(n, h, w, o)

    def backward(g: np.ndarray, want_k: bool, want_b: bool):
        gmat = g.reshape(n * h * w, o)
        gk = (cols.T @ gmat).reshape(k, k, c, o).transpose(3, 2, 0, 1) if want_k else None
        gb = gmat.sum(axis=0) if want_b else None
        gx = None
        if need_gx:
            # gradient w.r.t. the padded input is a full correlation with the flipped kernel
            gz = pad2d(g, 2 * p, "zeros", axes=(1, 2))
            gcols = _im2col_nhwc(gz, h + 2 * p, w + 2 * p, k)
            kflip = np.ascontiguousarray(kd[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(k * k * o, c)
            gp = (gcols @ kflip).reshape(n, h + 2 * p, w + 2 * p, c)
            gx = pad2d_adjoint(gp, p, padding, axes=(1, 2))
        return gx, gk, gb

    return out, backward


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: str = "reflect",
           layout: str = "NCHW") -> Tensor:
    """Stride-1 convolution (cross-correlation) with same-size output.

    ``x`` is (N, C, H, W) (or (N, H, W, C) with ``layout="NHWC"``), ``kernel``
    is (O, C, k, k) with odd ``k`` and ``bias`` is (O,) or ``None``.
    """
    if layout not in ("NCHW", "NHWC"):
        raise ValueError(f"unknown layout {layout!r}")
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "input rank", 4, x.data.ndim)
    if kernel.data.ndim != 4:
        raise ShapeError("conv2d", "kernel rank", 4, kernel.data.ndim)
    if layout == "NCHW":
        n, c, h, w = x.shape
    else:
        n, h, w, c = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError("conv2d", "input channels", kc, c)
    if kh != kw or kh % 2 == 0:
        raise ShapeError("conv2d", "kernel size (odd square)", "k x k, k odd", (kh, kw))
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d", "bias length", o, bias.shape)
    p = kh // 2
    if padding == "reflect" and (h <= p or w <= p):
        raise ShapeError("conv2d", "spatial size for reflect padding", f"> {p}", (h, w))

    xd = x.data if layout == "NHWC" else x.data.transpose(0, 2, 3, 1)
    out, core_backward = _conv_nhwc(xd, kernel.data, None if bias is None else bias.data,
                                    padding, x.requires_grad)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        if layout == "NCHW":
            g = g.transpose(0, 2, 3, 1)
        gx, gk, gb = core_backward(np.ascontiguousarray(g), kernel.requires_grad,
                                   bias is not None and bias.requires_grad)
        if gx is not None and layout == "NCHW":
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(out, parents, backward)
