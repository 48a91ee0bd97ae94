"""Run configuration: strict, hierarchical, JSON-serialisable."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(_Section):
    T: int = Field(18, ge=1)
    eta_1: float = Field(0.001, gt=0)
    eta_T: float = Field(0.999, gt=0, le=1)
    kappa: float = Field(2.0, gt=0)
    final_alphabar: float = Field(0.01, gt=0, lt=1)


class ModelConfig(_Section):
    K: int = Field(16, ge=2)
    max_len: int = Field(8, ge=1)
    height: int = Field(32, ge=4)
    width: int = Field(128, ge=4)
    patch: int = Field(4, ge=1)
    codec_seed: int = Field(0, ge=0)
    base_channels: int = Field(32, ge=1)
    levels: int = Field(2, ge=1)
    attn_resolution: int = Field(16, ge=1)
    d: int = Field(64, ge=2)
    heads: int = Field(4, ge=1)
    mom_layers: int = Field(2, ge=1)
    tau_layers: int = Field(2, ge=1)
    ocr_hidden: int = Field(64, ge=1)
    ocr_temperature: float = Field(10.0, gt=0)
    init_seed: int = Field(0, ge=0)
    perceptual_seed: int = Field(1234, ge=0)


class DataConfig(_Section):
    corpus: str | None = None
    n: int = Field(2000, ge=1)
    seed: int = Field(7, ge=0)
    min_len: int = Field(3, ge=1)
    train_percent: int = Field(80, ge=1, le=99)


class TrainerConfig(_Section):
    total_steps: int = Field(3000, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    r1: int = Field(1000, ge=1)
    r2: int = Field(2000, ge=2)
    flat: bool = False
    seed: int = Field(0, ge=0)
    lambda_l1: float = Field(1.0, ge=0)
    lambda_perceptual: float = Field(1.0, ge=0)
    lambda_ce: float = Field(0.02, ge=0)
    checkpoint_every: int = Field(500, ge=1)
    forward: Literal["residual", "ddpm_like"] = "residual"
    train_mom: bool = False
    prefetch: int = Field(0, ge=0)
    ocr_steps: int = Field(200, ge=1)
    ocr_batch: int = Field(32, ge=1)
    ocr_lr: float = Field(2e-3, gt=0)
    ocr_target: float = Field(0.99, gt=0, le=1)
    tau_steps: int = Field(2000, ge=1)
    tau_batch: int = Field(32, ge=1)
    tau_lr: float = Field(1e-3, gt=0)
    tau_target: float = Field(0.99, gt=0, le=1)

    @model_validator(mode="after")
    def _stage_order(self):
        if not self.r1 < self.r2 < self.total_steps:
            raise ValueError(f"need r1 < r2 < total_steps, got {self.r1}, {self.r2}, {self.total_steps}")
        return self


class SamplerConfig(_Section):
    seed: int = Field(0, ge=0)
    argmax_text: bool = False
    trace: bool = False
    conf_override: float | None = Field(None, ge=0, le=1)


class RunConfig(_Section):
    schedule: ScheduleConfig = ScheduleConfig()
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    trainer: TrainerConfig = TrainerConfig()
    sampler: SamplerConfig = SamplerConfig()

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"trainer.total_steps": 10}``."""
        return load_config(self.to_dict(), overrides)


class ConfigError(ValueError):
    def __init__(self, problems: list[dict]):
        self.problems = problems
        super().__init__("; ".join(f"{p['key']}: {p['msg']}" for p in problems))


def _set_dotted(tree: dict, key: str, value) -> None:
    parts = key.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([{"key": key, "msg": "not a section"}])
    node[parts[-1]] = value


def load_config(source: str | Path | dict | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig from a JSON file or dict plus dotted-key overrides.

    Validation failures raise ConfigError listing every offending key.
    """
    if source is None:
        tree: dict = {}
    elif isinstance(source, dict):
        tree = json.loads(json.dumps(source))
    else:
        tree = json.loads(Path(source).read_text())
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(tree, key, value)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        problems = [{"key": ".".join(str(p) for p in err["loc"]) or "<root>", "msg": err["msg"]}
                    for err in exc.errors()]
        raise ConfigError(problems) from None
