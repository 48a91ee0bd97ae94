import json

import pytest

from tsrdiff.config import ConfigError, RunConfig, load_config


def test_defaults():
    cfg = load_config()
    assert cfg.schedule.T == 18 and cfg.schedule.kappa == 2.0
    assert cfg.model.K == 16 and cfg.model.max_len == 8
    assert (cfg.model.height, cfg.model.width) == (32, 128)
    assert (cfg.trainer.r1, cfg.trainer.r2, cfg.trainer.total_steps) == (1000, 2000, 3000)
    assert (cfg.trainer.lambda_l1, cfg.trainer.lambda_perceptual, cfg.trainer.lambda_ce) == (1.0, 1.0, 0.02)
    assert cfg.model.ocr_temperature == 10.0


def test_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schedule": {"T": 6}, "trainer": {"total_steps": 50, "r1": 10, "r2": 20}}))
    cfg = load_config(path, {"schedule.kappa": 1.5, "model.K": None})
    assert cfg.schedule.T == 6 and cfg.schedule.kappa == 1.5 and cfg.model.K == 16
    assert cfg.with_overrides({"sampler.seed": 3}).sampler.seed == 3


def test_round_trip_through_json():
    cfg = load_config(None, {"model.d": 32, "trainer.forward": "ddpm_like"})
    again = RunConfig.model_validate(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_every_bad_key_is_reported():
    with pytest.raises(ConfigError) as exc:
        load_config({"schedule": {"T": 0, "bogus": 1}, "model": {"K": 1}, "extra": {}})
    keys = {p["key"] for p in exc.value.problems}
    assert {"schedule.T", "schedule.bogus", "model.K", "extra"} <= keys


def test_stage_order_is_enforced():
    with pytest.raises(ConfigError):
        load_config(None, {"trainer.r1": 2000, "trainer.r2": 1000})
    with pytest.raises(ConfigError):
        load_config(None, {"trainer.total_steps": 2000})


def test_frozen_sections():
    cfg = load_config()
    with pytest.raises(Exception):
        cfg.schedule.T = 4
