"""MoM-lite: mixes the image latents with confidence-scaled text features.

Text tokens come from a bias-free linear map of the ``conf * probs`` rows, so a
position with confidence 0 contributes exactly what a blank input would. Image
tokens come from 2x2 patches of ``concat(z_y, z_t)``. Both streams share a
two-layer transformer; the text-position outputs feed two heads, one per
conditioning stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Node, constant, ops
from .autograd.nn import LayerNorm, Linear, Module, TransformerLayer, sinusoidal_embedding


@dataclass
class CondBundle:
    i_cond: Node  # (N, m, d): conditioning for the text decoder
    c_cond: Node  # (N, m, d): keys/values for the image denoiser's cross-attention


def timestep_embed(t, d: int) -> np.ndarray:
    """Sinusoidal features of an integer timestep (one row per entry of ``t``)."""
    return sinusoidal_embedding(t, d)


def positional_table(positions, d: int, rows=None) -> np.ndarray:
    """Fixed position features, shape (len(positions), d).

    The first half encodes the horizontal position in character-cell units,
    the second half the row (zero for text tokens). Image tokens use the
    fractional cell coordinate of their patch centre, so a character and the
    patches covering it get matching horizontal codes.
    """
    positions = np.asarray(positions, dtype=np.float64)
    half = d // 2 - (d // 2) % 2
    out = np.zeros((positions.shape[0], d))
    out[:, :half] = sinusoidal_embedding(positions, half)
    if rows is not None:
        out[:, half : 2 * half] = sinusoidal_embedding(np.asarray(rows, dtype=np.float64), half)
    return out


def patch_positions(h: int, w: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell coordinate and row of each of the h*w patch tokens (row-major)."""
    cols = np.tile(np.arange(w), h)
    rows = np.repeat(np.arange(h), w)
    return (cols + 0.5) * m / w - 0.5, rows


class TimeMLP(Module):
    def __init__(self, rng, d: int, d_out: int | None = None):
        self.fc1 = Linear(rng, d, d)
        self.fc2 = Linear(rng, d, d_out or d)
        self.d = d

    def __call__(self, t) -> Node:
        return self.fc2(ops.silu(self.fc1(constant(timestep_embed(t, self.d)))))


def _tile(table: np.ndarray, n: int) -> Node:
    return constant(np.broadcast_to(table, (n,) + table.shape).copy())


def _check_t(t, n: int) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("timestep must be integer")
    t = np.broadcast_to(t, (n,)) if t.ndim == 0 else t
    if t.shape != (n,):
        raise ValueError(f"need one timestep per sample, got shape {t.shape} for batch {n}")
    if np.any(t < 0):
        raise ValueError("timesteps must be non-negative")
    return t


def patchify(x, p: int = 2) -> Node:
    """(N, C, H, W) to (N, (H/p)(W/p), C p^2) patch tokens."""
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"latent {h}x{w} not divisible by patch {p}")
    y = ops.reshape(x, (n, c, h // p, p, w // p, p))
    y = ops.transpose(y, (0, 2, 4, 1, 3, 5))
    return ops.reshape(y, (n, (h // p) * (w // p), c * p * p))


class MoM(Module):
    def __init__(self, rng, latent_channels: int, K: int, d: int = 64, heads: int = 4, layers: int = 2,
                 patch: int = 2):
        self.img_proj = Linear(rng, 2 * latent_channels * patch * patch, d)
        self.text_proj = Linear(rng, K, d, bias=False)
        self.time = TimeMLP(rng, d)
        self.layers = [TransformerLayer(rng, d, heads) for _ in range(layers)]
        self.norm = LayerNorm(d)
        self.head_i = Linear(rng, d, d)
        self.head_c = Linear(rng, d, d)
        self.d = d
        self.K = K
        self.patch = patch
        self.latent_channels = latent_channels

    def __call__(self, z_y, z_t, text_feat, t, positions=None) -> CondBundle:
        z_y = z_y if isinstance(z_y, Node) else constant(z_y)
        z_t = z_t if isinstance(z_t, Node) else constant(z_t)
        if z_y.shape != z_t.shape:
            raise ValueError(f"z_y {z_y.shape} and z_t {z_t.shape} differ")
        if z_y.ndim != 4 or z_y.shape[1] != self.latent_channels:
            raise ValueError(f"expected (N, {self.latent_channels}, h, w) latents, got {z_y.shape}")
        text_feat = text_feat if isinstance(text_feat, Node) else constant(text_feat)
        n = z_y.shape[0]
        if text_feat.ndim != 3 or text_feat.shape[0] != n or text_feat.shape[2] != self.K:
            raise ValueError(f"text features must be (N, m, {self.K}), got {text_feat.shape}")
        m = text_feat.shape[1]
        t = _check_t(t, n)

        img = self.img_proj(patchify(ops.concat([z_y, z_t], axis=1), self.patch))
        hp, wp = z_y.shape[2] // self.patch, z_y.shape[3] // self.patch
        cell_x, rows = patch_positions(hp, wp, m)
        img = ops.add(img, _tile(positional_table(cell_x, self.d, rows=rows), n))
        pos = np.arange(m) if positions is None else np.asarray(positions)
        txt = ops.add(self.text_proj(text_feat), _tile(positional_table(pos, self.d), n))

        x = ops.concat([txt, img], axis=1)
        x = ops.add_bias(x, self.time(t), axis=2)
        for layer in self.layers:
            x = layer(x)
        h = self.norm(ops.slice_(x, 1, 0, m))
        return CondBundle(i_cond=self.head_i(h), c_cond=self.head_c(h))


def mom_forward(mom: MoM, z_y, z_t, text_feat, t, positions=None) -> CondBundle:
    return mom(z_y, z_t, text_feat, t, positions)
