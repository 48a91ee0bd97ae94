"""Differentiable primitives.

Shapes must match exactly except for ``add_bias``, which broadcasts a
per-channel (optionally per-sample) vector along one axis.
"""

from __future__ import annotations

import numpy as np

from .core import Node, apply, constant, register  # noqa: F401


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"{op}: invalid axis {axis} for rank {ndim}")
    return axis % ndim


@register("add")
class _Add:
    @staticmethod
    def forward(a, b):
        _check_same(a, b, "add")
        return a + b, None

    @staticmethod
    def backward(g, out, cache, a, b):
        return g, g


@register("sub")
class _Sub:
    @staticmethod
    def forward(a, b):
        _check_same(a, b, "sub")
        return a - b, None

    @staticmethod
    def backward(g, out, cache, a, b):
        return g, -g


@register("mul")
class _Mul:
    @staticmethod
    def forward(a, b):
        _check_same(a, b, "mul")
        return a * b, None

    @staticmethod
    def backward(g, out, cache, a, b):
        return g * b, g * a


@register("scale")
class _Scale:
    @staticmethod
    def forward(a, c):
        return a * c, None

    @staticmethod
    def backward(g, out, cache, a, c):
        return (g * c,)


@register("add_bias")
class _AddBias:
    @staticmethod
    def forward(x, b, axis):
        axis = _norm_axis(axis, x.ndim, "add_bias")
        shape = [1] * x.ndim
        if b.ndim == 1:
            if b.shape[0] != x.shape[axis]:
                raise ValueError(f"add_bias: bias length {b.shape[0]} != channels {x.shape[axis]}")
            shape[axis] = b.shape[0]
        elif b.ndim == 2 and axis != 0:
            if b.shape != (x.shape[0], x.shape[axis]):
                raise ValueError(f"add_bias: bias shape {b.shape} incompatible with {x.shape}")
            shape[0], shape[axis] = b.shape
        else:
            raise ValueError(f"add_bias: unsupported bias rank {b.ndim}")
        return x + b.reshape(shape), shape

    @staticmethod
    def backward(g, out, shape, x, b, axis):
        axis = axis % x.ndim
        keep = {axis} if b.ndim == 1 else {0, axis}
        reduce_axes = tuple(i for i in range(x.ndim) if i not in keep)
        gb = g.sum(axis=reduce_axes).reshape(b.shape)
        return g, gb


@register("abs")
class _Abs:
    @staticmethod
    def forward(a):
        return np.abs(a), None

    @staticmethod
    def backward(g, out, cache, a):
        return (g * np.sign(a),)


@register("square")
class _Square:
    @staticmethod
    def forward(a):
        return a * a, None

    @staticmethod
    def backward(g, out, cache, a):
        return (2.0 * g * a,)


@register("silu")
class _Silu:
    @staticmethod
    def forward(a):
        s = 1.0 / (1.0 + np.exp(-a))
        return a * s, s

    @staticmethod
    def backward(g, out, s, a):
        return (g * (s * (1.0 + a * (1.0 - s))),)


@register("matmul")
class _Matmul:
    """``a @ b`` with ``b`` either batched like ``a`` or a shared 2-D matrix."""

    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul: operands must be at least 2-D")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"matmul: batch dims {a.shape} @ {b.shape}")
        return a @ b, None

    @staticmethod
    def backward(g, out, cache, a, b):
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ g
        return ga, gb


def _im2col(x, kh, kw, stride, pad):
    """Columns laid out (N, C*kh*kw, Ho*Wo) so the product with the weight is already NCHW."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


@register("conv2d")
class _Conv2d:
    """Cross-correlation of (N, C, H, W) with (O, C, kh, kw), lowered to matmul."""

    @staticmethod
    def forward(x, w, stride=1, pad=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError("conv2d: expects 4-D input and weight")
        if x.shape[1] != w.shape[1]:
            raise ValueError(f"conv2d: input channels {x.shape[1]} != weight channels {w.shape[1]}")
        o, _, kh, kw = w.shape
        if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
            raise ValueError("conv2d: kernel larger than padded input")
        cols, ho, wo = _im2col(x, kh, kw, stride, pad)
        out = np.matmul(w.reshape(o, -1), cols)
        return out.reshape(x.shape[0], o, ho, wo), (cols, ho, wo)

    @staticmethod
    def backward(g, out, cache, x, w, stride=1, pad=0):
        cols, ho, wo = cache
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        gm = g.reshape(n, o, ho * wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gcols = np.matmul(w.reshape(o, -1).T, gm).reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + wd]
        return np.ascontiguousarray(gx), gw


@register("group_norm")
class _GroupNorm:
    """Normalise (N, C, ...) over groups of channels, then per-channel affine."""

    @staticmethod
    def forward(x, gamma, beta, groups, eps=1e-5):
        if groups <= 0:
            raise ValueError("group_norm: groups must be positive")
        n, c = x.shape[:2]
        if c % groups:
            raise ValueError(f"group_norm: {c} channels not divisible by {groups} groups")
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError("group_norm: affine parameters must have shape (C,)")
        xg = x.reshape(n, groups, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = ((xg - mu) * inv).reshape(x.shape)
        bshape = (1, c) + (1,) * (x.ndim - 2)
        return xhat * gamma.reshape(bshape) + beta.reshape(bshape), (xhat, inv)

    @staticmethod
    def backward(g, out, cache, x, gamma, beta, groups, eps=1e-5):
        xhat, inv = cache
        n, c = x.shape[:2]
        bshape = (1, c) + (1,) * (x.ndim - 2)
        red = tuple(i for i in range(x.ndim) if i != 1)
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = (g * gamma.reshape(bshape)).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv * (gx_hat - gx_hat.mean(axis=2, keepdims=True) - xh * (gx_hat * xh).mean(axis=2, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta


def _softmax(a, axis):
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@register("softmax")
class _Softmax:
    @staticmethod
    def forward(a, axis=-1):
        _norm_axis(axis, a.ndim, "softmax")
        return _softmax(a, axis), None

    @staticmethod
    def backward(g, out, cache, a, axis=-1):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@register("log_softmax")
class _LogSoftmax:
    @staticmethod
    def forward(a, axis=-1):
        _norm_axis(axis, a.ndim, "log_softmax")
        z = a - a.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True)), None

    @staticmethod
    def backward(g, out, cache, a, axis=-1):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


@register("attention")
class _Attention:
    """softmax(Q K^T * scale) V over (B, L, d) operands."""

    @staticmethod
    def forward(q, k, v, scale):
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ValueError("attention: operands must be (B, L, d)")
        if q.shape[0] != k.shape[0] or k.shape[:2] != v.shape[:2] or q.shape[2] != k.shape[2]:
            raise ValueError(f"attention: incompatible shapes {q.shape}, {k.shape}, {v.shape}")
        p = _softmax(q @ np.swapaxes(k, 1, 2) * scale, -1)
        return p @ v, p

    @staticmethod
    def backward(g, out, p, q, k, v, scale):
        gv = np.swapaxes(p, 1, 2) @ g
        gp = g @ np.swapaxes(v, 1, 2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        return gs @ k, np.swapaxes(gs, 1, 2) @ q, gv


@register("mean")
class _Mean:
    @staticmethod
    def forward(a, axis=None):
        if axis is not None:
            _norm_axis(axis, a.ndim, "mean")
        return np.asarray(a.mean(axis=axis)), None

    @staticmethod
    def backward(g, out, cache, a, axis=None):
        if axis is None:
            return (np.full(a.shape, g.item() / a.size),)
        return (np.broadcast_to(np.expand_dims(g, axis) / a.shape[axis], a.shape).copy(),)


@register("sum")
class _Sum:
    @staticmethod
    def forward(a, axis=None):
        if axis is not None:
            _norm_axis(axis, a.ndim, "sum")
        return np.asarray(a.sum(axis=axis)), None

    @staticmethod
    def backward(g, out, cache, a, axis=None):
        if axis is None:
            return (np.full(a.shape, g.item()),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


@register("concat")
class _Concat:
    @staticmethod
    def forward(*xs, axis=0):
        axis = _norm_axis(axis, xs[0].ndim, "concat")
        return np.concatenate(xs, axis=axis), np.cumsum([x.shape[axis] for x in xs])[:-1]

    @staticmethod
    def backward(g, out, splits, *xs, axis=0):
        return tuple(np.split(g, splits, axis=axis % g.ndim))


@register("slice")
class _Slice:
    @staticmethod
    def forward(a, axis, start, stop):
        axis = _norm_axis(axis, a.ndim, "slice")
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        return a[tuple(idx)].copy(), tuple(idx)

    @staticmethod
    def backward(g, out, idx, a, axis, start, stop):
        ga = np.zeros_like(a)
        ga[idx] = g
        return (ga,)


@register("reshape")
class _Reshape:
    @staticmethod
    def forward(a, shape):
        return a.reshape(shape), None

    @staticmethod
    def backward(g, out, cache, a, shape):
        return (g.reshape(a.shape),)


@register("transpose")
class _Transpose:
    @staticmethod
    def forward(a, axes):
        if sorted(axes) != list(range(a.ndim)):
            raise ValueError(f"transpose: invalid axes {axes} for rank {a.ndim}")
        return np.ascontiguousarray(a.transpose(axes)), None

    @staticmethod
    def backward(g, out, cache, a, axes):
        return (np.ascontiguousarray(g.transpose(np.argsort(axes))),)


@register("upsample")
class _Upsample:
    """Nearest-neighbour upsampling of (N, C, H, W) by an integer factor."""

    @staticmethod
    def forward(a, factor=2):
        return a.repeat(factor, axis=2).repeat(factor, axis=3), None

    @staticmethod
    def backward(g, out, cache, a, factor=2):
        n, c, h, w = a.shape
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)


# Functional wrappers ------------------------------------------------------


def add(a, b) -> Node:
    return apply("add", a, b)


def sub(a, b) -> Node:
    return apply("sub", a, b)


def mul(a, b) -> Node:
    return apply("mul", a, b)


def scale(a, c: float) -> Node:
    return apply("scale", a, c=float(c))


def add_bias(x, b, axis: int = 1) -> Node:
    return apply("add_bias", x, b, axis=axis)


def abs_(a) -> Node:
    return apply("abs", a)


def square(a) -> Node:
    return apply("square", a)


def silu(a) -> Node:
    return apply("silu", a)


def matmul(a, b) -> Node:
    return apply("matmul", a, b)


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Node:
    return apply("conv2d", x, w, stride=stride, pad=pad)


def group_norm(x, gamma, beta, groups: int, eps: float = 1e-5) -> Node:
    return apply("group_norm", x, gamma, beta, groups=groups, eps=eps)


def softmax(a, axis: int = -1) -> Node:
    return apply("softmax", a, axis=axis)


def log_softmax(a, axis: int = -1) -> Node:
    return apply("log_softmax", a, axis=axis)


def attention(q, k, v, scale: float | None = None) -> Node:
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    return apply("attention", q, k, v, scale=float(scale))


def mean(a, axis: int | None = None) -> Node:
    return apply("mean", a, axis=axis)


def sum_(a, axis: int | None = None) -> Node:
    return apply("sum", a, axis=axis)


def concat(xs, axis: int = 0) -> Node:
    return apply("concat", *xs, axis=axis)


def slice_(a, axis: int, start: int, stop: int) -> Node:
    return apply("slice", a, axis=axis, start=start, stop=stop)


def reshape(a, shape) -> Node:
    return apply("reshape", a, shape=tuple(shape))


def transpose(a, axes) -> Node:
    return apply("transpose", a, axes=tuple(axes))


def upsample(a, factor: int = 2) -> Node:
    return apply("upsample", a, factor=factor)
