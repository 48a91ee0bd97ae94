"""All model components of one run, built from a RunConfig and saved as one checkpoint."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd.checkpoint import load_tensors, save_tensors
from .codec import LatentCodec
from .config import RunConfig, load_config
from .data import seeded_rng
from .denoiser import DenoiserConfig, TextDecoder, UNet
from .fusion import MoM
from .glyphs import GlyphAlphabet, make_alphabet
from .ocr import OcrHead
from .schedules import ShiftSchedule, TextSchedule, make_shift_schedule, make_text_schedule

# Stable per-module seed slots so adding a module never reshuffles another's init.
_SLOTS = {"unet": 1, "mom": 2, "tau": 3, "ocr": 4}
PARTS = ("unet", "mom", "tau", "ocr")


class CheckpointMismatch(ValueError):
    pass


@dataclass
class ModelBundle:
    config: RunConfig
    alphabet: GlyphAlphabet
    shift: ShiftSchedule
    text: TextSchedule
    codec: LatentCodec
    unet: UNet
    mom: MoM
    tau: TextDecoder
    ocr: OcrHead
    trained: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, config: RunConfig) -> "ModelBundle":
        mc, sc = config.model, config.schedule
        alphabet = make_alphabet(mc.K)
        shift = make_shift_schedule(sc.T, sc.eta_1, sc.eta_T, sc.kappa)
        text = make_text_schedule(sc.T, mc.K, sc.final_alphabar)
        codec = LatentCodec(patch=mc.patch, channels=1, seed=mc.codec_seed)
        c, h, w = codec.latent_shape((1, mc.height, mc.width))
        dcfg = DenoiserConfig(base_channels=mc.base_channels, levels=mc.levels, attn_resolution=mc.attn_resolution,
                              d=mc.d, heads=mc.heads, K=mc.K, max_len=mc.max_len, latent_channels=c)

        def rng(part: str) -> np.random.Generator:
            return seeded_rng(mc.init_seed, _SLOTS[part])

        unet = UNet(rng("unet"), dcfg, (h, w)).bind_names("unet")
        mom = MoM(rng("mom"), c, mc.K, d=mc.d, heads=mc.heads, layers=mc.mom_layers).bind_names("mom")
        tau = TextDecoder(rng("tau"), mc.K, d=mc.d, heads=mc.heads, layers=mc.tau_layers).bind_names("tau")
        ocr = OcrHead(rng("ocr"), mc.K, mc.max_len, mc.height, mc.width, hidden=mc.ocr_hidden).bind_names("ocr")
        return cls(config, alphabet, shift, text, codec, unet, mom, tau, ocr)

    def module(self, part: str):
        return getattr(self, part)

    def parameters(self, parts=PARTS):
        return [p for part in parts for p in self.module(part).parameters()]

    def num_parameters(self) -> dict[str, int]:
        return {part: self.module(part).num_parameters() for part in PARTS}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = self.codec.state_dict()
        for part in PARTS:
            out.update(self.module(part).state_dict())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if not np.array_equal(state["codec.M"], self.codec.M):
            raise CheckpointMismatch("checkpoint codec matrix differs from the configured codec")
        for part in PARTS:
            self.module(part).load_state_dict(state)

    def freeze(self, parts) -> None:
        for part in parts:
            self.module(part).freeze()

    def save(self, directory: str | Path, extra: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> Path:
        tensors = self.state_dict()
        tensors.update(extra or {})
        full_meta = {"config": self.config.to_dict(), "trained": sorted(set(self.trained))}
        full_meta.update(meta or {})
        return save_tensors(directory, tensors, full_meta)

    @classmethod
    def load(cls, directory: str | Path, config: RunConfig | None = None) -> tuple["ModelBundle", dict, dict]:
        """Rebuild from a checkpoint; returns (bundle, all tensors, meta).

        With ``config`` given, its schedule and model sections must match the
        checkpoint's, otherwise CheckpointMismatch is raised.
        """
        tensors, meta = load_tensors(directory)
        saved = load_config(meta["config"])
        if config is None:
            config = saved
        else:
            for section in ("schedule", "model"):
                a, b = getattr(config, section).model_dump(), getattr(saved, section).model_dump()
                diff = sorted(k for k in a if a[k] != b[k])
                if diff:
                    raise CheckpointMismatch(f"{section} differs from checkpoint in: {', '.join(diff)}")
        bundle = cls.build(config)
        bundle.load_state_dict(tensors)
        bundle.trained = list(meta.get("trained", []))
        return bundle, tensors, meta
