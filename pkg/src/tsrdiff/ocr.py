"""Recognisers: a template matcher that yields confidences, and a trainable conv head."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

from .autograd import Node, ops
from .autograd.nn import Conv2d, Linear, Module
from .data import GlyphStyle, draw_glyphs
from .glyphs import GlyphAlphabet


@dataclass
class OcrResult:
    """Per-cell prediction, its softmax probability (confidence) and the full distribution."""

    pred: np.ndarray  # (..., m) int
    conf: np.ndarray  # (..., m) in [0, 1]
    probs: np.ndarray  # (..., m, K)


def _unit_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)


# Corners of the rendering jitter box; matching takes the best of these per glyph.
TEMPLATE_STYLES = tuple(
    GlyphStyle(px_w=pw, px_h=ph, thick=th, ink=1.0)
    for pw in (0.13, 0.15)
    for ph in (0.085, 0.095)
    for th in (1.05, 1.3)
)
# Gaussian blur widths (pixels) applied to each style, so degraded inputs meet degraded templates.
TEMPLATE_BLURS = (0.0, 1.5, 2.5)
SCORE_CLIP = 0.99


@lru_cache(maxsize=8)
def _templates(alphabet: GlyphAlphabet, height: int, cell_w: int) -> np.ndarray:
    """Unit-norm, zero-mean templates of shape (styles * blurs, K-1, height*cell_w)."""
    out = []
    for style in TEMPLATE_STYLES:
        imgs = [draw_glyphs([k], alphabet, style, [(0.0, 0.0)], height, cell_w, 1)[0] for k in range(alphabet.K - 1)]
        for sigma in TEMPLATE_BLURS:
            blurred = [gaussian_filter(im, sigma, mode="constant") if sigma else im for im in imgs]
            out.append(_unit_rows(np.stack([im.ravel() for im in blurred])))
    return np.stack(out)


def template_scores(img: np.ndarray, alphabet: GlyphAlphabet, max_len: int, shift: int = 2) -> np.ndarray:
    """Per-cell matching scores, shape (..., m, K); blank is the last column.

    Glyph scores are normalised cross-correlation, maximised over +-``shift``
    pixel offsets and the template styles. The blank score is one minus the
    cell's contrast relative to the most contrasted cell of the same image.
    Both lie in [-1, 1] and are mapped through the Fisher transform
    ``arctanh`` (after clipping to +-0.99), which spreads strong matches apart
    while leaving weak, noise-level correlations near zero.
    """
    img = np.asarray(img, dtype=np.float64)
    lead = img.shape[:-3]
    x = img.reshape((-1,) + img.shape[-2:])  # (B, H, W); single channel
    b, h, w = x.shape
    cw = w // max_len
    tpl = _templates(alphabet, h, cw)
    n_styles, n_glyphs = tpl.shape[:2]
    flat_tpl = tpl.reshape(n_styles * n_glyphs, -1).T
    xp = np.pad(x, ((0, 0), (shift, shift), (shift, shift)), mode="edge")
    best = np.full((b, max_len, n_glyphs), -np.inf)
    for dy in range(2 * shift + 1):
        for dx in range(2 * shift + 1):
            win = xp[:, dy : dy + h, dx : dx + max_len * cw]
            cells = win.reshape(b, h, max_len, cw).transpose(0, 2, 1, 3).reshape(b * max_len, h * cw)
            ncc = (_unit_rows(cells) @ flat_tpl).reshape(b, max_len, n_styles, n_glyphs).max(axis=2)
            best = np.maximum(best, ncc)
    cells = x[:, :, : max_len * cw].reshape(b, h, max_len, cw).transpose(0, 2, 1, 3).reshape(b, max_len, -1)
    std = cells.std(axis=-1)
    top = std.max(axis=-1, keepdims=True)
    contrast = np.divide(std, top, out=np.zeros_like(std), where=top > 0)
    scores = np.concatenate([best, (1.0 - contrast)[..., None]], axis=-1)
    scores = np.arctanh(np.clip(scores, -SCORE_CLIP, SCORE_CLIP))
    return scores.reshape(lead + (max_len, alphabet.K))


def ocr_template(img: np.ndarray, alphabet: GlyphAlphabet, max_len: int = 8, temperature: float = 10.0) -> OcrResult:
    """Recognise (…, 1, H, W) images cell by cell; confidence is the softmax maximum."""
    logits = temperature * template_scores(img, alphabet, max_len)
    z = np.exp(logits - logits.max(-1, keepdims=True))
    probs = z / z.sum(-1, keepdims=True)
    pred = probs.argmax(-1)
    return OcrResult(pred=pred, conf=np.take_along_axis(probs, pred[..., None], -1)[..., 0], probs=probs)


class OcrHead(Module):
    """Per-cell conv classifier producing (N, m, K) logits from (N, 1, H, W) images."""

    def __init__(self, rng: np.random.Generator, K: int, max_len: int = 8, height: int = 32, width: int = 128,
                 hidden: int = 64):
        if height % 4 or width % (4 * max_len):
            raise ValueError("image size must be divisible by 4 and by 4*max_len in width")
        self.conv1 = Conv2d(rng, 1, 16, 3)
        self.conv2 = Conv2d(rng, 16, 32, 3, stride=2)
        self.conv3 = Conv2d(rng, 32, 32, 3, stride=2)
        feat = 32 * (height // 4) * (width // 4 // max_len)
        self.fc1 = Linear(rng, feat, hidden)
        self.fc2 = Linear(rng, hidden, K)
        self.max_len = max_len
        self.shape = (height, width)

    def __call__(self, img) -> Node:
        n, _, h, w = img.shape
        if (h, w) != self.shape:
            raise ValueError(f"head expects {self.shape} images, got {(h, w)}")
        x = ops.silu(self.conv1(img))
        x = ops.silu(self.conv2(x))
        x = ops.silu(self.conv3(x))
        c, hh, ww = x.shape[1:]
        m = self.max_len
        x = ops.reshape(x, (n, c, hh, m, ww // m))
        x = ops.transpose(x, (0, 3, 1, 2, 4))
        x = ops.reshape(x, (n, m, c * hh * (ww // m)))
        return self.fc2(ops.silu(self.fc1(x)))


def ocr_head(head: OcrHead, img) -> Node:
    return head(img)
