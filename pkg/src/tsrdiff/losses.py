"""Training loss (L1 + perceptual proxy + recognition CE) and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein

from .autograd import Node, constant, ops
from .text_diffusion import CharState

PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    perceptual: float = 1.0
    ce: float = 0.02

    def __post_init__(self):
        for name in ("l1", "perceptual", "ce"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name}={v} must be finite and >= 0")


class PerceptualFeatures:
    """Fixed random conv stack standing in for a learned perceptual network.

    Three 3x3 conv + SiLU layers (1->8, 8->16 stride 2, 16->16 stride 2) with
    weights drawn once from ``seed``. The weights are constants, never
    parameters, so nothing upstream can train them.
    """

    widths = (8, 16, 16)
    strides = (1, 2, 2)

    def __init__(self, channels: int = 1, seed: int = 1234):
        rng = np.random.default_rng(seed)
        self.weights = []
        c_in = channels
        for c_out in self.widths:
            w = rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (c_in * 9))
            self.weights.append(w)
            c_in = c_out

    def __call__(self, x) -> Node:
        for w, s in zip(self.weights, self.strides):
            x = ops.silu(ops.conv2d(x, constant(w), stride=s, pad=1))
        return x


_PHI_CACHE: dict[tuple[int, int], PerceptualFeatures] = {}


def perceptual_net(channels: int = 1, seed: int = 1234) -> PerceptualFeatures:
    key = (channels, seed)
    if key not in _PHI_CACHE:
        _PHI_CACHE[key] = PerceptualFeatures(channels, seed)
    return _PHI_CACHE[key]


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(np.asarray(x, dtype=np.float64))


def loss_terms(x0, x0_hat, c0: CharState, logits, phi: PerceptualFeatures | None = None) -> dict[str, Node]:
    """Unweighted terms: mean |x0 - x0_hat|, mean squared feature gap, mean per-position CE."""
    x0, x0_hat, logits = _as_node(x0), _as_node(x0_hat), _as_node(logits)
    if x0.shape != x0_hat.shape:
        raise ValueError(f"image shapes differ: {x0.shape} vs {x0_hat.shape}")
    if logits.shape != c0.probs.shape:
        raise ValueError(f"logits {logits.shape} do not match target {c0.probs.shape}")
    phi = phi or perceptual_net(x0.shape[1])
    l1 = ops.mean(ops.abs_(ops.sub(x0_hat, x0)))
    gap = ops.sub(phi(x0_hat), phi(x0))
    perc = ops.mean(ops.square(gap))
    n_pos = c0.probs.size // c0.K
    ce = ops.scale(ops.sum_(ops.mul(ops.log_softmax(logits, axis=-1), constant(c0.probs))), -1.0 / n_pos)
    return {"l1": l1, "perceptual": perc, "ce": ce}


def loss_total(x0, x0_hat, c0: CharState, logits, w: LossWeights,
               phi: PerceptualFeatures | None = None) -> Node:
    terms = loss_terms(x0, x0_hat, c0, logits, phi)
    return ops.add(ops.add(ops.scale(terms["l1"], w.l1), ops.scale(terms["perceptual"], w.perceptual)),
                   ops.scale(terms["ce"], w.ce))


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val**2 / mse))


def edit_similarity(a: Sequence, b: Sequence) -> float:
    """1 - Levenshtein(a, b) / max(|a|, |b|); two empty sequences score 1."""
    a, b = list(a), list(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - Levenshtein.distance(a, b) / longest


def text_metrics(pred: Sequence[Sequence], truth: Sequence[Sequence]) -> dict[str, float]:
    """Word accuracy and mean normalised edit similarity over paired sequences."""
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} references")
    if not pred:
        raise ValueError("no sequences to score")
    acc = sum(list(p) == list(t) for p, t in zip(pred, truth)) / len(pred)
    ned = sum(edit_similarity(p, t) for p, t in zip(pred, truth)) / len(pred)
    return {"acc": acc, "ned": ned}
