"""The image denoiser f_theta (a small conditional UNet) and the text decoder tau."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Node, constant, ops
from .autograd.nn import (
    Conv2d,
    GroupNorm,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerLayer,
    map_from_tokens,
    tokens_from_map,
)
from .fusion import TimeMLP, _check_t, _tile, positional_table
from .text_diffusion import CharState


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    levels: int = 2
    attn_resolution: int = 16
    d: int = 64
    heads: int = 4
    K: int = 16
    max_len: int = 8
    latent_channels: int = 16

    def __post_init__(self):
        if self.base_channels < 1 or self.levels < 1 or self.d < 2 or self.heads < 1:
            raise ValueError("channels, levels, width and heads must be positive")
        if self.d % 2:
            raise ValueError("embedding width must be even")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(np.asarray(x, dtype=np.float64))


class ResBlock(Module):
    def __init__(self, rng, c_in: int, c_out: int, d_t: int):
        self.norm1 = GroupNorm(c_in)
        self.conv1 = Conv2d(rng, c_in, c_out)
        self.time = Linear(rng, d_t, c_out)
        self.norm2 = GroupNorm(c_out)
        self.conv2 = Conv2d(rng, c_out, c_out)
        self.skip = Conv2d(rng, c_in, c_out, k=1) if c_in != c_out else None

    def __call__(self, x, temb) -> Node:
        h = self.conv1(ops.silu(self.norm1(x)))
        h = ops.add_bias(h, self.time(temb), axis=1)
        h = self.conv2(ops.silu(self.norm2(h)))
        return ops.add(self.skip(x) if self.skip else x, h)


class AttnBlock(Module):
    """Residual attention over the spatial tokens; self-attention unless a context is given."""

    def __init__(self, rng, c: int, d_t: int, heads: int, d_context: int | None = None):
        self.time = Linear(rng, d_t, c)
        self.norm = GroupNorm(c)
        cross = d_context is not None
        self.attn = MultiHeadAttention(rng, c, d_context if cross else c, c, heads, zero_out=cross)
        self.cross = cross

    def __call__(self, x, temb, context=None) -> Node:
        _, _, h, w = x.shape
        x = ops.add_bias(x, self.time(temb), axis=1)
        tokens = tokens_from_map(self.norm(x))
        out = self.attn(tokens, context if self.cross else None)
        return ops.add(x, map_from_tokens(out, h, w))


class Level(Module):
    """Conv block, optional self-attention, then cross-attention onto the text tokens."""

    def __init__(self, rng, c_in: int, c_out: int, cfg: DenoiserConfig, self_attn: bool):
        self.res = ResBlock(rng, c_in, c_out, cfg.d)
        self.self_attn = AttnBlock(rng, c_out, cfg.d, cfg.heads) if self_attn else None
        self.cross_attn = AttnBlock(rng, c_out, cfg.d, cfg.heads, d_context=cfg.d)

    def __call__(self, x, temb, c_cond) -> Node:
        x = self.res(x, temb)
        if self.self_attn is not None:
            x = self.self_attn(x, temb)
        return self.cross_attn(x, temb, c_cond)


class UNet(Module):
    """f_theta: predicts z_0 from (z_t, z_y, t, c_cond) as ``z_y + net(...)``.

    The output conv starts at zero, so an untrained network returns z_y.
    """

    def __init__(self, rng, cfg: DenoiserConfig, latent_hw: tuple[int, int]):
        h, w = latent_hw
        if h % 2 ** (cfg.levels - 1) or w % 2 ** (cfg.levels - 1):
            raise ValueError(f"latent {h}x{w} cannot be halved {cfg.levels - 1} times")
        self.cfg = cfg
        self.latent_hw = latent_hw
        self.time = TimeMLP(rng, cfg.d)
        c0 = cfg.channels(0)
        self.conv_in = Conv2d(rng, 2 * cfg.latent_channels, c0)
        self.down = []
        self.downsample = []
        sizes = []
        for lvl in range(cfg.levels):
            c_prev = cfg.channels(max(lvl - 1, 0))
            attn = max(h >> lvl, w >> lvl) <= cfg.attn_resolution
            self.down.append(Level(rng, c_prev, cfg.channels(lvl), cfg, attn))
            sizes.append(attn)
            if lvl < cfg.levels - 1:
                self.downsample.append(Conv2d(rng, cfg.channels(lvl), cfg.channels(lvl), stride=2))
        c_top = cfg.channels(cfg.levels - 1)
        self.mid = ResBlock(rng, c_top, c_top, cfg.d)
        self.up = []
        self.upsample = []
        for lvl in reversed(range(cfg.levels)):
            c = cfg.channels(lvl)
            self.up.append(Level(rng, 2 * c, c, cfg, sizes[lvl]))
            if lvl > 0:
                self.upsample.append(Conv2d(rng, c, cfg.channels(lvl - 1)))
        self.norm_out = GroupNorm(c0)
        self.conv_out = Conv2d(rng, c0, cfg.latent_channels, zero_init=True)

    def __call__(self, z_t, z_y, t, c_cond) -> Node:
        z_t, z_y, c_cond = _as_node(z_t), _as_node(z_y), _as_node(c_cond)
        cfg = self.cfg
        if z_t.shape != z_y.shape or z_t.ndim != 4:
            raise ValueError(f"z_t {z_t.shape} and z_y {z_y.shape} must be equal (N, C, h, w)")
        if z_t.shape[1] != cfg.latent_channels or z_t.shape[2:] != tuple(self.latent_hw):
            raise ValueError(f"expected latents (N, {cfg.latent_channels}, {self.latent_hw}), got {z_t.shape}")
        n = z_t.shape[0]
        if c_cond.ndim != 3 or c_cond.shape[0] != n or c_cond.shape[2] != cfg.d:
            raise ValueError(f"c_cond must be (N, m, {cfg.d}), got {c_cond.shape}")
        temb = ops.silu(self.time(_check_t(t, n)))

        x = self.conv_in(ops.concat([z_t, z_y], axis=1))
        skips = []
        for lvl, level in enumerate(self.down):
            x = level(x, temb, c_cond)
            skips.append(x)
            if lvl < len(self.downsample):
                x = self.downsample[lvl](x)
        x = self.mid(x, temb)
        for i, level in enumerate(self.up):
            x = level(ops.concat([x, skips.pop()], axis=1), temb, c_cond)
            if i < len(self.upsample):
                x = self.upsample[i](ops.upsample(x, 2))
        out = self.conv_out(ops.silu(self.norm_out(x)))
        return ops.add(z_y, out)


def f_theta(unet: UNet, z_t, z_y, t, c_cond) -> Node:
    return unet(z_t, z_y, t, c_cond)


class TextDecoder(Module):
    """tau: predicts per-position symbol distributions from (c_t, i_cond, t)."""

    def __init__(self, rng, K: int, d: int = 64, heads: int = 4, layers: int = 2):
        self.embed = Linear(rng, K, d, bias=False)
        self.time = TimeMLP(rng, d)
        self.layers = [TransformerLayer(rng, d, heads) for _ in range(layers)]
        self.norm = LayerNorm(d)
        self.out = Linear(rng, d, K)
        self.K = K
        self.d = d

    def logits(self, c_t, i_cond, t, positions=None) -> Node:
        probs = c_t.probs if isinstance(c_t, CharState) else np.asarray(c_t, dtype=np.float64)
        i_cond = _as_node(i_cond)
        if probs.ndim != 3 or probs.shape[2] != self.K:
            raise ValueError(f"c_t must be (N, m, {self.K}), got {probs.shape}")
        n, m, _ = probs.shape
        if i_cond.shape != (n, m, self.d):
            raise ValueError(f"i_cond must be {(n, m, self.d)}, got {i_cond.shape}")
        pos = np.arange(m) if positions is None else np.asarray(positions)
        x = ops.add(self.embed(constant(probs)), i_cond)
        x = ops.add(x, _tile(positional_table(pos, self.d), n))
        x = ops.add_bias(x, self.time(_check_t(t, n)), axis=2)
        for layer in self.layers:
            x = layer(x)
        return self.out(self.norm(x))

    def __call__(self, c_t, i_cond, t, positions=None) -> Node:
        return ops.softmax(self.logits(c_t, i_cond, t, positions), axis=-1)


def tau(decoder: TextDecoder, c_t: CharState, i_cond, t, positions=None) -> CharState:
    """Decoder output as a CharState carrying ``c_t``'s confidences."""
    probs = decoder(c_t, i_cond, t, positions).value
    return CharState(probs / probs.sum(-1, keepdims=True), c_t.conf.copy())
