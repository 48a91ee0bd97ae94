"""Small module system on top of the autodiff primitives."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .core import Node, Parameter


class Module:
    """Container that discovers Parameters and sub-Modules by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str) -> "Module":
        """Stamp every parameter with its fully qualified checkpoint name."""
        seen = set()
        for name, p in self.named_parameters(prefix + "."):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name
        return self

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.unfreeze()

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for p in self.parameters():
            if p.name not in state:
                if strict:
                    raise KeyError(f"missing parameter {p.name}")
                continue
            val = np.asarray(state[p.name], dtype=np.float64)
            if val.shape != p.shape:
                raise ValueError(f"{p.name}: checkpoint shape {val.shape} != {p.shape}")
            p.value = val.copy()


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * gain * np.sqrt(1.0 / fan_in)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else _he(rng, (d_in, d_out), d_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Node:
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add_bias(y, self.bias, axis=-1)
        return y


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1, zero_init: bool = False):
        shape = (c_out, c_in, k, k)
        self.weight = Parameter(np.zeros(shape) if zero_init else _he(rng, shape, c_in * k * k))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x) -> Node:
        y = ops.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        return ops.add_bias(y, self.bias, axis=1)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.groups = min(groups, channels)
        self.eps = eps

    def __call__(self, x) -> Node:
        return ops.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class LayerNorm(Module):
    """Normalises the last axis of a (..., d) token tensor."""

    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Node:
        shape = x.shape
        y = ops.group_norm(ops.reshape(x, (-1, shape[-1])), self.gamma, self.beta, 1, self.eps)
        return ops.reshape(y, shape)


def split_heads(x, heads: int) -> Node:
    b, n, d = x.shape
    y = ops.reshape(x, (b, n, heads, d // heads))
    y = ops.transpose(y, (0, 2, 1, 3))
    return ops.reshape(y, (b * heads, n, d // heads))


def merge_heads(x, heads: int) -> Node:
    bh, n, dh = x.shape
    y = ops.reshape(x, (bh // heads, heads, n, dh))
    y = ops.transpose(y, (0, 2, 1, 3))
    return ops.reshape(y, (bh // heads, n, heads * dh))


class MultiHeadAttention(Module):
    """Attention from query tokens (B, Lq, d_q) onto context tokens (B, Lk, d_kv)."""

    def __init__(self, rng, d_q: int, d_kv: int, d_inner: int, heads: int, zero_out: bool = False):
        if d_inner % heads:
            raise ValueError("d_inner must be divisible by heads")
        self.to_q = Linear(rng, d_q, d_inner, bias=False)
        self.to_k = Linear(rng, d_kv, d_inner, bias=False)
        self.to_v = Linear(rng, d_kv, d_inner, bias=False)
        self.to_out = Linear(rng, d_inner, d_q, zero_init=zero_out)
        self.heads = heads

    def __call__(self, x, context=None) -> Node:
        context = x if context is None else context
        q = split_heads(self.to_q(x), self.heads)
        k = split_heads(self.to_k(context), self.heads)
        v = split_heads(self.to_v(context), self.heads)
        return self.to_out(merge_heads(ops.attention(q, k, v), self.heads))


class MLP(Module):
    def __init__(self, rng, d: int, mult: int = 2):
        self.fc1 = Linear(rng, d, d * mult)
        self.fc2 = Linear(rng, d * mult, d)

    def __call__(self, x) -> Node:
        return self.fc2(ops.silu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm self-attention + MLP block over (B, L, d) tokens."""

    def __init__(self, rng, d: int, heads: int):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(rng, d, d, d, heads)
        self.norm2 = LayerNorm(d)
        self.mlp = MLP(rng, d)

    def __call__(self, x) -> Node:
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.mlp(self.norm2(x)))


def sinusoidal_embedding(t, d: int) -> np.ndarray:
    """Interleaved [sin, cos] features of integer timesteps at geometric frequencies."""
    if d % 2:
        raise ValueError(f"embedding width must be even, got {d}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.exp(-np.log(10000.0) * np.arange(d // 2) / max(d // 2, 1))
    ang = t[:, None] * freqs[None, :]
    out = np.empty((t.shape[0], d))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def tokens_from_map(x) -> Node:
    """(N, C, H, W) feature map to (N, H*W, C) tokens."""
    n, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (n, c, h * w)), (0, 2, 1))


def map_from_tokens(x, h: int, w: int) -> Node:
    n, _, c = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1)), (n, c, h, w))
