"""Synthetic text images, degradations, the staged LR-HR sampler and corpus I/O."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .glyphs import GlyphAlphabet
from .text_diffusion import CharState, pad_indices

SUPERSAMPLE = 4
SOURCES = ("degraded_hr", "real_lr", "degraded_lr")


def seeded_rng(*key: int) -> np.random.Generator:
    """Generator keyed on a tuple of non-negative ints (order-independent of call history)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# Rendering ----------------------------------------------------------------


@dataclass(frozen=True)
class GlyphStyle:
    px_w: float  # bitmap column width, as a fraction of the cell width
    px_h: float  # bitmap row height, as a fraction of the image height
    thick: float  # stroke block scale (>= 1 closes gaps between bitmap pixels)
    ink: float

    @classmethod
    def canonical(cls) -> "GlyphStyle":
        return cls(px_w=0.14, px_h=0.09, thick=1.15, ink=1.0)


def draw_glyphs(text, alphabet: GlyphAlphabet, style: GlyphStyle, offsets, height: int, width: int, max_len: int):
    S = SUPERSAMPLE
    cell = width / max_len
    px_w, px_h = style.px_w * cell, style.px_h * height
    canvas = np.zeros((height * S, width * S))
    for pos, sym in enumerate(text):
        dx, dy = offsets[pos]
        bitmap = alphabet.bitmaps[sym]
        x_left = pos * cell + (cell - 5 * px_w) / 2 + dx
        y_top = (height - 7 * px_h) / 2 + dy
        hw, hh = 0.5 * px_w * style.thick, 0.5 * px_h * style.thick
        for r, c in zip(*np.nonzero(bitmap)):
            cx = x_left + (c + 0.5) * px_w
            cy = y_top + (r + 0.5) * px_h
            x0, x1 = int(round((cx - hw) * S)), int(round((cx + hw) * S))
            y0, y1 = int(round((cy - hh) * S)), int(round((cy + hh) * S))
            canvas[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = style.ink
    return canvas.reshape(height, S, width, S).mean(axis=(1, 3))[None]


def render_text(
    text,
    alphabet: GlyphAlphabet,
    style_seed: int,
    height: int = 32,
    width: int = 128,
    max_len: int = 8,
) -> np.ndarray:
    """Render symbol indices left-to-right, one glyph per cell, as a (1, H, W) image.

    Ink is bright on a zero background. Stroke size, thickness, ink level and
    per-glyph offsets are jittered from ``style_seed``; drawing happens on a
    4x supersampled canvas that is box-filtered down for anti-aliasing.
    """
    text = [int(s) for s in text]
    if not 1 <= len(text) <= max_len:
        raise ValueError(f"text length {len(text)} outside [1, {max_len}]")
    if any(s < 0 or s >= alphabet.K for s in text):
        raise ValueError("unknown symbol index")
    rng = np.random.default_rng(style_seed)
    style = GlyphStyle(
        px_w=rng.uniform(0.125, 0.155),
        px_h=rng.uniform(0.08, 0.10),
        thick=rng.uniform(1.0, 1.35),
        ink=rng.uniform(0.85, 1.0),
    )
    offsets = [(rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0)) for _ in text]
    return draw_glyphs(text, alphabet, style, offsets, height, width, max_len)


# Degradation --------------------------------------------------------------


@dataclass(frozen=True)
class DegradeParams:
    sigma_x: float
    sigma_y: float
    scale: int
    noise: float
    levels: int = 8


FAMILIES = {
    # in_domain and real_proxy draw blur and noise from disjoint ranges
    "in_domain": {"sigma": (0.5, 1.5), "aniso": False, "scales": (2, 4), "noise": (0.01, 0.04)},
    "real_proxy": {"sigma": (1.5, 2.5), "aniso": True, "scales": (2, 4), "noise": (0.04, 0.08)},
}


def draw_degradation(family: str, rng: np.random.Generator) -> DegradeParams:
    if family not in FAMILIES:
        raise ValueError(f"unknown degradation family {family!r}")
    ranges = FAMILIES[family]
    sx = rng.uniform(*ranges["sigma"])
    sy = rng.uniform(*ranges["sigma"]) if ranges["aniso"] else sx
    scale = int(rng.choice(ranges["scales"]))
    noise = rng.uniform(*ranges["noise"])
    return DegradeParams(sx, sy, scale, noise)


def resize_bicubic(img: np.ndarray, height: int, width: int) -> np.ndarray:
    out = Image.fromarray(img.astype(np.float32), mode="F").resize((width, height), Image.BICUBIC)
    return np.asarray(out, dtype=np.float64)


def apply_degradation(x: np.ndarray, params: DegradeParams, rng: np.random.Generator) -> np.ndarray:
    """blur -> area downsample -> Gaussian noise -> quantise -> bicubic upsample, clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("degrade expects pixel values in [0, 1]")
    c, h, w = x.shape
    s = params.scale
    if h % s or w % s:
        raise ValueError(f"image {h}x{w} not divisible by scale {s}")
    out = np.empty_like(x)
    for ch in range(c):
        blurred = gaussian_filter(x[ch], sigma=(params.sigma_y, params.sigma_x), mode="nearest")
        small = blurred.reshape(h // s, s, w // s, s).mean(axis=(1, 3))
        small = small + params.noise * rng.standard_normal(small.shape)
        q = params.levels - 1
        small = np.round(np.clip(small, 0.0, 1.0) * q) / q
        out[ch] = resize_bicubic(small, h, w)
    return np.clip(out, 0.0, 1.0)


def degrade(x: np.ndarray, family: str, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return apply_degradation(x, draw_degradation(family, rng), rng)


# Progressive sampling -----------------------------------------------------


@dataclass(frozen=True)
class StagePlan:
    """Step thresholds of the three-stage curriculum; ``flat`` pins stage C throughout."""

    r1: int = 1000
    r2: int = 2000
    flat: bool = False

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise ValueError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")

    def stage(self, r: int) -> str:
        if self.flat or r >= self.r2:
            return "C"
        return "A" if r < self.r1 else "B"


@dataclass
class TrainSample:
    x0: np.ndarray
    lr: np.ndarray
    c0: CharState | None
    source_tag: str


def sample_pair(
    x0: np.ndarray,
    y_real: np.ndarray,
    r: int,
    plan: StagePlan,
    seed: int,
    c0: CharState | None = None,
) -> TrainSample:
    """Pick the LR source for HR ``x0`` at training step ``r``.

    Stage A uses the degraded HR image; stage B picks degraded HR or the real
    LR with equal odds; stage C adds the degraded real LR, each with 1/3.
    One uniform decides the source in the fixed order (x̂0, y, ŷ).
    """
    rng = np.random.default_rng(seed)
    u = rng.random()
    deg_seed = int(rng.integers(2**63 - 1))
    stage = plan.stage(r)
    if stage == "A":
        choice = 0
    elif stage == "B":
        choice = 0 if u < 0.5 else 1
    else:
        choice = min(int(u * 3), 2)
    if choice == 0:
        lr = degrade(x0, "in_domain", deg_seed)
    elif choice == 1:
        lr = np.asarray(y_real, dtype=np.float64)
    else:
        lr = degrade(y_real, "in_domain", deg_seed)
    if lr.shape != x0.shape:
        raise ValueError("LR source must already be upsampled to the HR size")
    return TrainSample(x0=x0, lr=lr, c0=c0, source_tag=SOURCES[choice])


# Corpus -------------------------------------------------------------------


@dataclass
class CorpusRecord:
    id: int
    text: list[int]
    style_seed: int
    real_seed: int
    split: str


def split_of(text, seed: int, train_percent: int = 80) -> str:
    """Seed-stable hash split of a symbol sequence."""
    key = f"{seed}:" + ",".join(str(int(s)) for s in text)
    bucket = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") % 100
    return "train" if bucket < train_percent else "test"


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[0]
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit binary PGM")
        return np.asarray(im, dtype=np.float64)[None] / 255.0


@dataclass
class Corpus:
    root: Path
    records: list[CorpusRecord]
    hr: np.ndarray  # (n, 1, H, W)
    lr: np.ndarray  # (n, 1, H, W), real-proxy LR upsampled to HR size
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.split == name]


def generate_corpus(
    out_dir: str | Path,
    alphabet: GlyphAlphabet,
    n: int,
    seed: int,
    max_len: int = 8,
    min_len: int = 3,
    height: int = 32,
    width: int = 128,
    train_percent: int = 80,
) -> list[CorpusRecord]:
    """Write ``manifest.jsonl`` plus ``hr/`` and ``lr/`` PGM images."""
    out = Path(out_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        text = [int(s) for s in rng.integers(0, alphabet.K - 1, size=length)]
        style_seed = int(rng.integers(2**31 - 1))
        real_seed = int(rng.integers(2**31 - 1))
        rec = CorpusRecord(i, text, style_seed, real_seed, split_of(text, seed, train_percent))
        hr = render_text(text, alphabet, style_seed, height, width, max_len)
        lr = degrade(hr, "real_proxy", real_seed)
        write_pgm(out / "hr" / f"{i:06d}.pgm", hr)
        write_pgm(out / "lr" / f"{i:06d}.pgm", lr)
        records.append(rec)
    with open(out / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    meta = {"K": alphabet.K, "n": n, "seed": seed, "max_len": max_len, "min_len": min_len,
            "height": height, "width": width, "train_percent": train_percent}
    (out / "corpus.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return records


def read_manifest(path: str | Path) -> list[CorpusRecord]:
    with open(path) as fh:
        return [CorpusRecord(**json.loads(line)) for line in fh if line.strip()]


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    records = read_manifest(root / "manifest.jsonl")
    if not records:
        raise ValueError(f"{root}: empty manifest")
    hr = np.stack([read_pgm(root / "hr" / f"{r.id:06d}.pgm") for r in records])
    lr = np.stack([read_pgm(root / "lr" / f"{r.id:06d}.pgm") for r in records])
    meta = json.loads((root / "corpus.json").read_text()) if (root / "corpus.json").exists() else {}
    return Corpus(root, records, hr, lr, meta)


def padded_text(rec: CorpusRecord, max_len: int, K: int) -> np.ndarray:
    return pad_indices(rec.text, max_len, K - 1)
