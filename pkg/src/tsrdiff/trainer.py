"""Training: recogniser-head and text-decoder pretraining, then the main denoiser loop."""

from __future__ import annotations

import json
import math
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .autograd import Adam, backward, no_grad, ops
from .bundle import ModelBundle
from .config import RunConfig
from .data import Corpus, StagePlan, render_text, sample_pair, seeded_rng
from .image_diffusion import forward_marginal, latent_residual
from .losses import LossWeights, loss_total, perceptual_net
from .ocr import ocr_template
from .text_diffusion import CharState, apply_confidence, pad_indices, text_forward_sample

# Purpose tags keep the random streams of different phases disjoint.
MAIN, OCR_PRETRAIN, TAU_PRETRAIN, EVAL = 0, 1, 2, 3


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Batch:
    x0: np.ndarray  # (N, 1, H, W)
    lr: np.ndarray  # (N, 1, H, W)
    c0: CharState  # ground truth, conf 1 on characters and 0 on padding
    conf: np.ndarray  # (N, m) recogniser confidence on lr
    z0: np.ndarray
    zy: np.ndarray
    zt: np.ndarray
    ct: CharState  # forward-noised text carrying the recogniser confidence
    t: np.ndarray  # (N,)
    sources: list[str]
    indices: list[int]

    def text_features(self, conf_override: float | None = None) -> np.ndarray:
        ct = self.ct if conf_override is None else self.ct.with_conf(conf_override)
        return apply_confidence(ct)


def truth_state(text, K: int, max_len: int) -> CharState:
    idx = pad_indices(text, max_len, K - 1)
    conf = (np.arange(max_len) < len(text)).astype(np.float64)
    return CharState.from_indices(idx, K, conf)


def example_draws(seed: int, purpose: int, step: int, slot: int, pool: np.ndarray, T: int, latent_shape,
                  max_len: int):
    """(corpus index, pair seed, t ~ U{1..T}, image noise, text uniforms) for one training example."""
    rng = seeded_rng(seed, purpose, step, slot)
    idx = int(pool[rng.integers(len(pool))])
    pair_seed = int(rng.integers(2**63 - 1))
    t = int(rng.integers(1, T + 1))
    return idx, pair_seed, t, rng.standard_normal(latent_shape), rng.random(max_len)


def draw_example(bundle: ModelBundle, corpus: Corpus, pool: np.ndarray, step: int, slot: int, plan: StagePlan,
                 seed: int, purpose: int = MAIN) -> dict:
    """The sampled pair and noise for one example, before recognition and encoding."""
    mc = bundle.config.model
    lat = bundle.codec.latent_shape((1, mc.height, mc.width))
    idx, pair_seed, t, eps, u = example_draws(seed, purpose, step, slot, pool, bundle.config.schedule.T, lat,
                                              mc.max_len)
    x0 = corpus.hr[idx]
    c0 = truth_state(corpus.records[idx].text, mc.K, mc.max_len)
    sample = sample_pair(x0, corpus.lr[idx], step, plan, pair_seed, c0)
    return {"x0": x0, "lr": sample.lr, "c0": c0, "t": t, "eps": eps, "u": u, "source": sample.source_tag,
            "index": idx}


def prepare_example(bundle: ModelBundle, corpus: Corpus, pool: np.ndarray, step: int, slot: int, plan: StagePlan,
                    seed: int, purpose: int = MAIN) -> dict:
    """Everything one training example needs, drawn from the (seed, step, slot) stream."""
    return encode_drawn(bundle, [draw_example(bundle, corpus, pool, step, slot, plan, seed, purpose)])[0]


def encode_drawn(bundle: ModelBundle, drawn: list[dict]) -> list[dict]:
    """Recognise all LR images in one call, then encode each example."""
    mc = bundle.config.model
    conf = ocr_template(np.stack([d["lr"] for d in drawn]), bundle.alphabet, mc.max_len, mc.ocr_temperature).conf
    out = []
    for d, cf in zip(drawn, conf):
        ex = encode_example(bundle, d["x0"], d["lr"], d["c0"], d["t"], d["eps"], d["u"], conf=cf)
        ex.update(source=d["source"], index=d["index"])
        out.append(ex)
    return out


def encode_example(bundle: ModelBundle, x0, lr, c0: CharState, t: int, eps, u, conf=None) -> dict:
    """Recognise ``lr`` (unless ``conf`` is given), encode both images and noise both chains to step ``t``."""
    cfg = bundle.config
    mc = cfg.model
    if conf is None:
        conf = ocr_template(lr, bundle.alphabet, mc.max_len, mc.ocr_temperature).conf
    z0 = bundle.codec.encode(x0)
    zy = bundle.codec.encode(lr)
    if cfg.trainer.forward == "ddpm_like":
        ab = bundle.text.alphabar[t]
        zt = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps
    else:
        zt = forward_marginal(z0, latent_residual(zy, z0), t, bundle.shift, eps)
    ct = text_forward_sample(c0, t, bundle.text, u).with_conf(conf)
    return {"x0": x0, "lr": lr, "c0": c0, "conf": conf, "z0": z0, "zy": zy, "zt": zt, "ct": ct, "t": t,
            "source": "given", "index": -1}


def collate(examples: list[dict]) -> Batch:
    def stack(key):
        return np.stack([e[key] for e in examples])

    return Batch(
        x0=stack("x0"), lr=stack("lr"),
        c0=CharState(np.stack([e["c0"].probs for e in examples]), np.stack([e["c0"].conf for e in examples])),
        conf=stack("conf"), z0=stack("z0"), zy=stack("zy"), zt=stack("zt"),
        ct=CharState(np.stack([e["ct"].probs for e in examples]), np.stack([e["ct"].conf for e in examples])),
        t=np.array([e["t"] for e in examples], dtype=np.int64),
        sources=[e["source"] for e in examples], indices=[e["index"] for e in examples],
    )


def make_batch(bundle: ModelBundle, corpus: Corpus, pool: np.ndarray, step: int, plan: StagePlan, seed: int,
               batch_size: int, purpose: int = MAIN) -> Batch:
    drawn = [draw_example(bundle, corpus, pool, step, s, plan, seed, purpose) for s in range(batch_size)]
    return collate(encode_drawn(bundle, drawn))


def batches(make: Callable[[int], Batch], start: int, stop: int, prefetch: int = 0) -> Iterator[tuple[int, Batch]]:
    """Yield (step, batch) for steps in [start, stop).

    With ``prefetch > 0`` a worker thread fills a bounded queue ahead of the
    consumer. Every batch is a pure function of its step, so the order in
    which the worker runs has no effect on the values produced.
    """
    if prefetch <= 0:
        for step in range(start, stop):
            yield step, make(step)
        return
    q: queue.Queue = queue.Queue(maxsize=prefetch)
    stop_flag = threading.Event()

    def work():
        try:
            for step in range(start, stop):
                if stop_flag.is_set():
                    return
                q.put((step, make(step)))
        except BaseException as exc:  # surfaced to the consumer
            q.put((None, exc))

    worker = threading.Thread(target=work, daemon=True)
    worker.start()
    try:
        for _ in range(start, stop):
            step, item = q.get()
            if step is None:
                raise item
            yield step, item
    finally:
        stop_flag.set()
        while worker.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)


# Main loop ------------------------------------------------------------------


def loss_weights(cfg: RunConfig) -> LossWeights:
    tc = cfg.trainer
    return LossWeights(tc.lambda_l1, tc.lambda_perceptual, tc.lambda_ce)


def forward_loss(bundle: ModelBundle, batch: Batch, weights: LossWeights):
    """Build the training graph for one batch; returns (loss node, x0_hat node)."""
    train_mom = any(p.trainable for p in bundle.mom.parameters())
    if train_mom:
        cond = bundle.mom(batch.zy, batch.zt, batch.text_features(), batch.t)
    else:
        with no_grad():
            cond = bundle.mom(batch.zy, batch.zt, batch.text_features(), batch.t)
    z0_hat = bundle.unet(batch.zt, batch.zy, batch.t, cond.c_cond)
    x0_hat = bundle.codec.decode_node(z0_hat)
    logits = bundle.ocr(x0_hat)
    phi = perceptual_net(1, bundle.config.model.perceptual_seed)
    return loss_total(batch.x0, x0_hat, batch.c0, logits, weights, phi), x0_hat


def train_step(bundle: ModelBundle, opt: Adam, batch: Batch, weights: LossWeights) -> float:
    """One Adam update of the trainable parameters; raises TrainingDiverged on a non-finite loss."""
    opt.zero_grad()
    loss, _ = forward_loss(bundle, batch, weights)
    value = float(loss.value)
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")
    backward(loss)
    opt.step()
    return value


def main_parts(cfg: RunConfig) -> tuple[list[str], list[str]]:
    """(trainable, frozen) module names for the main loop."""
    trainable = ["unet"] + (["mom"] if cfg.trainer.train_mom else [])
    frozen = [p for p in ("unet", "mom", "tau", "ocr") if p not in trainable]
    return trainable, frozen


def make_optimizer(bundle: ModelBundle, parts, lr: float) -> Adam:
    return Adam(bundle.parameters(parts), lr=lr)


def _dump_diverged(out_dir: Path, bundle: ModelBundle, opt: Adam, step: int, batch: Batch, err: Exception) -> Path:
    dump = out_dir / f"diverged_step{step:06d}"
    bundle.save(dump, extra=opt.state_dict(), meta={"step": step, "kind": "diverged"})
    (dump / "batch.json").write_text(json.dumps({
        "step": step, "error": str(err), "indices": batch.indices, "sources": batch.sources,
        "t": batch.t.tolist(),
    }, indent=1))
    return dump


def train(bundle: ModelBundle, corpus: Corpus, out_dir: str | Path, resume: str | Path | None = None,
          log: Callable[[dict], None] | None = None, stop_at: int | None = None) -> dict:
    """Run the main loop from step 0 (or a resumed step) to ``total_steps``.

    Checkpoints go to ``out_dir/ckpt_<step>`` every ``checkpoint_every`` steps
    and to ``out_dir/checkpoint`` at the end; the per-step log is JSON lines
    in ``out_dir/train_log.jsonl``. ``stop_at`` ends the run early (used to
    produce a mid-run checkpoint for resumption).
    """
    cfg = bundle.config
    tc = cfg.trainer
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainable, frozen = main_parts(cfg)
    for part in trainable:
        bundle.module(part).unfreeze()
    bundle.freeze(frozen)
    opt = make_optimizer(bundle, trainable, tc.learning_rate)
    start = 0
    log_path = out_dir / "train_log.jsonl"
    if resume is not None:
        loaded, tensors, meta = ModelBundle.load(resume, cfg)
        bundle.load_state_dict(tensors)
        opt.load_state_dict(tensors, int(meta["step"]))
        start = int(meta["step"])
        bundle.trained = loaded.trained
        _truncate_log(log_path, start)
    elif log_path.exists():
        log_path.unlink()
    plan = StagePlan(tc.r1, tc.r2, tc.flat)
    pool = np.array(corpus.split("train"))
    if len(pool) == 0:
        raise ValueError("corpus has no training samples")
    weights = loss_weights(cfg)
    end = tc.total_steps if stop_at is None else min(stop_at, tc.total_steps)
    losses = []

    def make(step):
        return make_batch(bundle, corpus, pool, step, plan, tc.seed, tc.batch_size)

    with open(log_path, "a") as fh:
        for step, batch in batches(make, start, end, tc.prefetch):
            try:
                value = train_step(bundle, opt, batch, weights)
            except TrainingDiverged as err:
                dump = _dump_diverged(out_dir, bundle, opt, step, batch, err)
                raise TrainingDiverged(f"step {step}: {err}; state dumped to {dump}") from None
            losses.append(value)
            rec = {"step": step, "loss": value, "stage": plan.stage(step), "lr": tc.learning_rate}
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            if log:
                log(rec)
            done = step + 1
            if done % tc.checkpoint_every == 0 and done < end:
                _save_main(bundle, opt, out_dir / f"ckpt_{done:06d}", done, trainable)
    final = out_dir / "checkpoint"
    _save_main(bundle, opt, final, end, trainable)
    return {"checkpoint": str(final), "steps": end - start, "first_loss": losses[0] if losses else None,
            "last_loss": losses[-1] if losses else None}


def _save_main(bundle: ModelBundle, opt: Adam, path: Path, step: int, trainable) -> None:
    bundle.trained = sorted(set(bundle.trained) | set(trainable))
    bundle.save(path, extra=opt.state_dict(), meta={"step": step, "kind": "main"})


def _truncate_log(path: Path, step: int) -> None:
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines() if line and json.loads(line)["step"] < step]
    path.write_text("".join(line + "\n" for line in keep))


# Pretraining ----------------------------------------------------------------


def render_batch(bundle: ModelBundle, step: int, slot_count: int, seed: int):
    """Fresh random clean renders with their padded symbol indices."""
    mc = bundle.config.model
    min_len = bundle.config.data.min_len
    imgs, idx = [], []
    for slot in range(slot_count):
        rng = seeded_rng(seed, OCR_PRETRAIN, step, slot)
        length = int(rng.integers(min_len, mc.max_len + 1))
        text = [int(s) for s in rng.integers(0, mc.K - 1, size=length)]
        imgs.append(render_text(text, bundle.alphabet, int(rng.integers(2**31 - 1)), mc.height, mc.width,
                                mc.max_len))
        idx.append(pad_indices(text, mc.max_len, mc.K - 1))
    return np.stack(imgs), np.stack(idx)


def ocr_head_accuracy(bundle: ModelBundle, images: np.ndarray, indices: np.ndarray, chunk: int = 64) -> float:
    correct = 0
    with no_grad():
        for i in range(0, len(images), chunk):
            pred = bundle.ocr(images[i : i + chunk]).value.argmax(-1)
            correct += int((pred == indices[i : i + chunk]).sum())
    return correct / indices.size


def _need_splits(corpus: Corpus) -> None:
    for name in ("train", "test"):
        if not corpus.split(name):
            raise ValueError(f"corpus has no {name} samples")


def pretrain_ocr_head(bundle: ModelBundle, corpus: Corpus, log: Callable[[dict], None] | None = None) -> dict:
    """Fit the recogniser head on clean renders; accuracy is measured on the corpus test split."""
    tc = bundle.config.trainer
    mc = bundle.config.model
    _need_splits(corpus)
    head = bundle.ocr
    head.unfreeze()
    opt = Adam(head.parameters(), lr=tc.ocr_lr)
    for step in range(tc.ocr_steps):
        imgs, idx = render_batch(bundle, step, tc.ocr_batch, tc.seed)
        target = CharState.from_indices(idx, mc.K)
        opt.zero_grad()
        logp = ops.log_softmax(head(imgs), axis=-1)
        loss = ops.scale(ops.sum_(ops.mul(logp, ops.constant(target.probs))), -1.0 / idx.size)
        backward(loss)
        opt.step()
        if log and (step % 50 == 0 or step == tc.ocr_steps - 1):
            log({"phase": "ocr", "step": step, "loss": float(loss.value)})
    test = corpus.split("test")
    idx = np.stack([pad_indices(corpus.records[i].text, mc.max_len, mc.K - 1) for i in test])
    acc = ocr_head_accuracy(bundle, corpus.hr[test], idx)
    head.freeze()
    bundle.trained = sorted(set(bundle.trained) | {"ocr"})
    return {"accuracy": acc, "target": tc.ocr_target, "converged": acc >= tc.ocr_target, "n_test": len(test)}


def tau_logits(bundle: ModelBundle, batch: Batch, ct: CharState | None = None, t=None):
    ct = batch.ct if ct is None else ct
    t = batch.t if t is None else t
    cond = bundle.mom(batch.zy, batch.zt, apply_confidence(ct), t)
    return bundle.tau.logits(ct, cond.i_cond, t)


def tau_identity_accuracy(bundle: ModelBundle, corpus: Corpus, indices, chunk: int = 64) -> float:
    """Argmax accuracy of tau at t = 1 given uncorrupted text, on the stored real LR inputs."""
    mc = bundle.config.model
    shape = bundle.codec.latent_shape((1, mc.height, mc.width))
    u = np.full(mc.max_len, 0.5)  # ignored: alphabar_1 keeps one-hot rows with near certainty
    correct = total = 0
    with no_grad():
        for start in range(0, len(indices), chunk):
            ex = []
            for i in indices[start : start + chunk]:
                c0 = truth_state(corpus.records[i].text, mc.K, mc.max_len)
                e = encode_example(bundle, corpus.hr[i], corpus.lr[i], c0, 1, np.zeros(shape), u)
                e["ct"] = c0.with_conf(e["conf"])
                ex.append(e)
            batch = collate(ex)
            pred = tau_logits(bundle, batch).value.argmax(-1)
            truth = batch.c0.argmax()
            correct += int((pred == truth).sum())
            total += truth.size
    return correct / total


def pretrain_tau(bundle: ModelBundle, corpus: Corpus, log: Callable[[dict], None] | None = None) -> dict:
    """Fit the text decoder jointly with MoM-lite to recover c_0 from (c_t, z_y, z_t, t).

    LR inputs come from the full three-source mix so the pair is ready for any
    curriculum stage. Both modules are frozen afterwards.
    """
    cfg = bundle.config
    tc, mc = cfg.trainer, cfg.model
    _need_splits(corpus)
    parts = ["mom", "tau"]
    for part in parts:
        bundle.module(part).unfreeze()
    opt = make_optimizer(bundle, parts, tc.tau_lr)
    plan = StagePlan(flat=True)
    pool = np.array(corpus.split("train"))
    for step in range(tc.tau_steps):
        batch = make_batch(bundle, corpus, pool, step, plan, tc.seed, tc.tau_batch, TAU_PRETRAIN)
        opt.zero_grad()
        logp = ops.log_softmax(tau_logits(bundle, batch), axis=-1)
        n_pos = batch.c0.probs.size // mc.K
        loss = ops.scale(ops.sum_(ops.mul(logp, ops.constant(batch.c0.probs))), -1.0 / n_pos)
        if not math.isfinite(float(loss.value)):
            raise TrainingDiverged(f"text decoder pretraining diverged at step {step}")
        backward(loss)
        opt.step()
        if log and (step % 50 == 0 or step == tc.tau_steps - 1):
            log({"phase": "tau", "step": step, "loss": float(loss.value)})
    test = corpus.split("test")
    acc = tau_identity_accuracy(bundle, corpus, test)
    bundle.freeze(parts)
    bundle.trained = sorted(set(bundle.trained) | set(parts))
    return {"identity_accuracy": acc, "target": tc.tau_target, "converged": acc >= tc.tau_target,
            "n_test": len(test)}
