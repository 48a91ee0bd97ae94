import json

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import tiny_config
from tsrdiff import trainer as tr
from tsrdiff.autograd import constant
from tsrdiff.bundle import ModelBundle
from tsrdiff.data import StagePlan
from tsrdiff.image_diffusion import forward_marginal, latent_residual


def _dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def _params(bundle, part):
    return {p.name: p.value.copy() for p in bundle.module(part).parameters()}


def test_timesteps_are_uniform():
    T = 18
    pool = np.arange(10)
    ts = [tr.example_draws(0, tr.MAIN, step, slot, pool, T, (1,), 1)[2] for step in range(625) for slot in range(16)]
    counts = np.bincount(ts, minlength=T + 1)[1:]
    assert counts.sum() == 10_000 and min(ts) == 1 and max(ts) == T
    assert chisquare(counts).pvalue > 0.01


def test_example_encoding_follows_both_forward_chains(tiny_corpus):
    b = ModelBundle.build(tiny_config())
    pool = np.array(tiny_corpus.split("train"))
    ex = tr.prepare_example(b, tiny_corpus, pool, 0, 0, StagePlan(2, 4), seed=1)
    lat = b.codec.latent_shape((1, 16, 32))
    idx, _, t, eps, _ = tr.example_draws(1, tr.MAIN, 0, 0, pool, b.shift.T, lat, 4)
    assert ex["index"] == idx and ex["t"] == t and ex["source"] == "degraded_hr"
    np.testing.assert_array_equal(ex["z0"], b.codec.encode(tiny_corpus.hr[idx]))
    np.testing.assert_array_equal(ex["zt"], forward_marginal(ex["z0"], latent_residual(ex["zy"], ex["z0"]), t,
                                                             b.shift, eps))
    assert ex["ct"].probs.shape == (4, 6)
    np.testing.assert_array_equal(ex["ct"].conf, ex["conf"])


def test_ddpm_like_forward_flag(tiny_corpus):
    b = ModelBundle.build(tiny_config(trainer__forward="ddpm_like"))
    pool = np.array(tiny_corpus.split("train"))
    ex = tr.prepare_example(b, tiny_corpus, pool, 0, 0, StagePlan(2, 4), seed=1)
    lat = b.codec.latent_shape((1, 16, 32))
    _, _, t, eps, _ = tr.example_draws(1, tr.MAIN, 0, 0, pool, b.shift.T, lat, 4)
    ab = b.text.alphabar[t]
    np.testing.assert_allclose(ex["zt"], np.sqrt(ab) * ex["z0"] + np.sqrt(1 - ab) * eps, rtol=0, atol=1e-15)


def test_stage_census_per_window(tiny_corpus):
    b = ModelBundle.build(tiny_config())
    pool = np.array(tiny_corpus.split("train"))
    plan = StagePlan(2, 4)
    seen = {}
    for step in range(6):
        batch = tr.make_batch(b, tiny_corpus, pool, step, plan, 0, 12)
        seen.setdefault(plan.stage(step), set()).update(batch.sources)
    assert seen["A"] == {"degraded_hr"}
    assert seen["B"] == {"degraded_hr", "real_lr"}
    assert seen["C"] == {"degraded_hr", "real_lr", "degraded_lr"}


def test_prefetch_does_not_change_batches(tiny_corpus):
    b = ModelBundle.build(tiny_config())
    pool = np.array(tiny_corpus.split("train"))

    def make(step):
        return tr.make_batch(b, tiny_corpus, pool, step, StagePlan(2, 4), 0, 3)

    plain = list(tr.batches(make, 0, 5))
    fetched = list(tr.batches(make, 0, 5, prefetch=2))
    assert [s for s, _ in plain] == [s for s, _ in fetched] == list(range(5))
    for (_, a), (_, c) in zip(plain, fetched):
        assert np.array_equal(a.zt, c.zt) and np.array_equal(a.ct.probs, c.ct.probs)


def test_prefetch_surfaces_worker_errors():
    def make(step):
        if step == 2:
            raise RuntimeError("boom")
        return step

    with pytest.raises(RuntimeError, match="boom"):
        list(tr.batches(make, 0, 5, prefetch=1))


def test_zero_loss_weights_leave_parameters_unchanged(tiny_corpus):
    cfg = tiny_config(trainer__lambda_l1=0.0, trainer__lambda_perceptual=0.0, trainer__lambda_ce=0.0)
    b = ModelBundle.build(cfg)
    before = _params(b, "unet")
    b.freeze(["mom", "tau", "ocr"])
    opt = tr.make_optimizer(b, ["unet"], 1e-3)
    batch = tr.make_batch(b, tiny_corpus, np.array(tiny_corpus.split("train")), 0, StagePlan(2, 4), 0, 3)
    assert tr.train_step(b, opt, batch, tr.loss_weights(cfg)) == 0.0
    after = _params(b, "unet")
    assert all(np.array_equal(before[k], after[k]) for k in before)


@pytest.mark.parametrize("train_mom", [False, True])
def test_only_trainable_modules_move(tiny_corpus, tmp_path, train_mom):
    b = ModelBundle.build(tiny_config(trainer__total_steps=5, trainer__train_mom=train_mom))
    before = {part: _params(b, part) for part in ("unet", "mom", "tau", "ocr")}
    tr.train(b, tiny_corpus, tmp_path)
    for part in ("unet", "mom", "tau", "ocr"):
        after = _params(b, part)
        moved = any(not np.array_equal(before[part][k], after[k]) for k in after)
        assert moved == (part == "unet" or (part == "mom" and train_mom)), part


def test_training_is_bit_reproducible(tiny_corpus, tmp_path):
    for name in ("a", "b"):
        tr.train(ModelBundle.build(tiny_config()), tiny_corpus, tmp_path / name)
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()
    assert _dir_bytes(tmp_path / "a" / "checkpoint") == _dir_bytes(tmp_path / "b" / "checkpoint")
    log = [json.loads(line) for line in (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log] == list(range(8))
    assert set(log[0]) == {"step", "loss", "stage", "lr"}
    assert [r["stage"] for r in log] == ["A", "A", "B", "B", "C", "C", "C", "C"]
    assert (tmp_path / "a" / "ckpt_000003").is_dir() and (tmp_path / "a" / "ckpt_000006").is_dir()


def test_resume_matches_uninterrupted_run(tiny_corpus, tmp_path):
    tr.train(ModelBundle.build(tiny_config()), tiny_corpus, tmp_path / "full")
    tr.train(ModelBundle.build(tiny_config()), tiny_corpus, tmp_path / "part", stop_at=5)
    tr.train(ModelBundle.build(tiny_config()), tiny_corpus, tmp_path / "part", resume=tmp_path / "part" / "checkpoint")
    assert _dir_bytes(tmp_path / "full" / "checkpoint") == _dir_bytes(tmp_path / "part" / "checkpoint")
    assert (tmp_path / "full" / "train_log.jsonl").read_bytes() == (tmp_path / "part" / "train_log.jsonl").read_bytes()


def test_non_finite_loss_dumps_state(tiny_corpus, tmp_path, monkeypatch):
    monkeypatch.setattr(tr, "forward_loss", lambda *a: (constant(np.array(np.nan)), None))
    with pytest.raises(tr.TrainingDiverged, match="step 0"):
        tr.train(ModelBundle.build(tiny_config()), tiny_corpus, tmp_path)
    dump = tmp_path / "diverged_step000000"
    assert json.loads((dump / "batch.json").read_text())["step"] == 0
    ModelBundle.load(dump)


def test_pretraining_freezes_and_reports(tiny_corpus):
    b = ModelBundle.build(tiny_config())
    ocr = tr.pretrain_ocr_head(b, tiny_corpus)
    assert set(ocr) == {"accuracy", "target", "converged", "n_test"} and 0 <= ocr["accuracy"] <= 1
    assert not any(p.trainable for p in b.ocr.parameters())
    res = tr.pretrain_tau(b, tiny_corpus)
    assert 0 <= res["identity_accuracy"] <= 1 and res["converged"] == (res["identity_accuracy"] >= 0.99)
    assert not any(p.trainable for p in b.parameters(["mom", "tau"]))
    assert b.trained == ["mom", "ocr", "tau"]


@pytest.mark.slow
def test_loss_halves_on_a_toy_problem(tmp_path):
    """K=8 glyphs on 32x64 images, 3000 steps, starting from a pretrained recogniser head as the pipeline does."""
    from tsrdiff.data import generate_corpus, load_corpus
    from tsrdiff.glyphs import make_alphabet

    cfg = tiny_config(model__K=8, model__height=32, model__width=64, model__max_len=4, schedule__T=18,
                      model__base_channels=16, model__d=16, trainer__total_steps=3000, trainer__r1=1000,
                      trainer__r2=2000, trainer__batch_size=8, trainer__checkpoint_every=3000,
                      trainer__learning_rate=2e-3, trainer__ocr_steps=150, trainer__ocr_batch=16)
    generate_corpus(tmp_path / "c", make_alphabet(8), 60, seed=1, max_len=4, min_len=1, height=32, width=64)
    corpus = load_corpus(tmp_path / "c")
    bundle = ModelBundle.build(cfg)
    assert tr.pretrain_ocr_head(bundle, corpus)["converged"]
    res = tr.train(bundle, corpus, tmp_path / "run")
    losses = [json.loads(line)["loss"] for line in (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()]
    assert res["steps"] == 3000
    assert np.mean(losses[-100:]) <= 0.5 * np.mean(losses[:100])


def test_pretraining_needs_both_splits(tiny_corpus):
    from dataclasses import replace

    only_train = replace(tiny_corpus, records=[replace(r, split="train") for r in tiny_corpus.records])
    with pytest.raises(ValueError, match="no test samples"):
        tr.pretrain_ocr_head(ModelBundle.build(tiny_config()), only_train)
