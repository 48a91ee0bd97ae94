"""Command-line entry point: ``tsrdiff <subcommand> [flags]``.

Every artifact-producing subcommand writes ``run.json`` next to its output
with the resolved config, the seed and content hashes of its inputs.
Failures print one JSON object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Any

from . import __version__
from .config import ConfigError, RunConfig, load_config

EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Hashing ------------------------------------------------------------------


def blob_hash(data: bytes) -> str:
    """Git's object id for a blob with these bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(path: str | Path) -> str:
    """Blob hash of a file, or a hash over (relative path, blob hash) lines of a directory."""
    path = Path(path)
    if path.is_file():
        return blob_hash(path.read_bytes())
    if not path.is_dir():
        raise FileNotFoundError(f"{path}: no such file or directory")
    lines = []
    for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != "run.json"):
        lines.append(f"{f.relative_to(path).as_posix()} {blob_hash(f.read_bytes())}\n")
    return blob_hash("".join(lines).encode())


def write_run(out: Path, command: str, cfg: RunConfig, seed: int, inputs: dict[str, Any], extra: dict | None = None):
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        "inputs": {k: {"path": str(v), "sha1": content_hash(v)} for k, v in inputs.items() if v is not None},
    }
    record.update(extra or {})
    (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True))


# Config plumbing ----------------------------------------------------------

# flag dest -> dotted config key
FLAG_KEYS = {
    "T": "schedule.T", "kappa": "schedule.kappa", "eta_1": "schedule.eta_1", "eta_T": "schedule.eta_T",
    "final_alphabar": "schedule.final_alphabar",
    "K": "model.K", "n": "data.n", "data_seed": "data.seed",
    "steps": "trainer.total_steps", "batch_size": "trainer.batch_size", "lr": "trainer.learning_rate",
    "r1": "trainer.r1", "r2": "trainer.r2", "flat": "trainer.flat", "train_seed": "trainer.seed",
    "forward": "trainer.forward", "train_mom": "trainer.train_mom", "prefetch": "trainer.prefetch",
    "checkpoint_every": "trainer.checkpoint_every",
    "ocr_steps": "trainer.ocr_steps", "tau_steps": "trainer.tau_steps",
    "seed": "sampler.seed", "argmax_text": "sampler.argmax_text", "trace": "sampler.trace",
    "conf_override": "sampler.conf_override",
}


def _parse_set(items: list[str]) -> dict[str, Any]:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    """Config file (or ``base``), then ``--set`` pairs, then dedicated flags."""
    overrides = _parse_set(getattr(args, "set", None))
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "config", None):
        if base is not None:
            raise UsageError("--config cannot be combined with a checkpoint's stored config")
        return load_config(args.config, overrides)
    return load_config(base.to_dict() if base is not None else None, overrides)


def _flag(p, name, dest=None, **kw):
    p.add_argument(name, dest=dest, default=None, **kw)


def _bool_flag(p, name, dest):
    p.add_argument(name, dest=dest, action="store_const", const=True, default=None)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# Subcommands --------------------------------------------------------------


def cmd_schedule_dump(args) -> None:
    from .schedules import make_shift_schedule, make_text_schedule

    cfg = resolve_config(args)
    sc, mc = cfg.schedule, cfg.model
    shift = make_shift_schedule(sc.T, sc.eta_1, sc.eta_T, sc.kappa)
    text = make_text_schedule(sc.T, mc.K, sc.final_alphabar)
    _emit({"T": sc.T, "K": mc.K, "kappa": sc.kappa, "eta": shift.eta.tolist(), "alpha": shift.alpha.tolist(),
           "alpha_txt": text.alpha.tolist(), "alphabar_txt": text.alphabar.tolist()})


def cmd_gen_data(args) -> None:
    from .data import generate_corpus
    from .glyphs import make_alphabet

    cfg = resolve_config(args)
    mc, dc = cfg.model, cfg.data
    out = Path(args.out)
    records = generate_corpus(out, make_alphabet(mc.K), dc.n, dc.seed, mc.max_len, dc.min_len, mc.height,
                              mc.width, dc.train_percent)
    write_run(out, "gen-data", cfg, dc.seed, {})
    counts = {s: sum(r.split == s for r in records) for s in ("train", "test")}
    _emit({"out": str(out), "n": len(records), **counts})


def _load_bundle(args, need: str | None = None):
    from .bundle import ModelBundle

    if getattr(args, "checkpoint", None):
        bundle, tensors, meta = ModelBundle.load(args.checkpoint)
        cfg = resolve_config(args, bundle.config)
        if cfg.schedule != bundle.config.schedule or cfg.model != bundle.config.model:
            bundle, tensors, meta = ModelBundle.load(args.checkpoint, cfg)  # raises CheckpointMismatch
        bundle.config = cfg
    else:
        if need:
            raise UsageError(f"--checkpoint is required ({need})")
        cfg = resolve_config(args)
        bundle = ModelBundle.build(cfg)
    return bundle


def _corpus(args, bundle):
    from .data import load_corpus

    corpus = load_corpus(args.corpus)
    k = corpus.meta.get("K")
    if k is not None and k != bundle.config.model.K:
        raise ValueError(f"corpus was built for K={k}, model uses K={bundle.config.model.K}")
    return corpus


def _log_lines(path: Path):
    fh = open(path, "w")

    def log(rec: dict) -> None:
        fh.write(json.dumps(rec) + "\n")
        fh.flush()

    return fh, log


def cmd_pretrain_ocr(args) -> None:
    from .trainer import pretrain_ocr_head

    bundle = _load_bundle(args)
    corpus = _corpus(args, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fh, log = _log_lines(out / "pretrain_log.jsonl")
    with fh:
        report = pretrain_ocr_head(bundle, corpus, log=log)
    bundle.save(out, meta={"kind": "pretrain-ocr", "report": report})
    write_run(out, "pretrain-ocr", bundle.config, bundle.config.trainer.seed,
              {"corpus": args.corpus, "checkpoint": args.checkpoint}, {"report": report})
    _emit(report)


def cmd_pretrain_tau(args) -> None:
    from .trainer import pretrain_tau

    bundle = _load_bundle(args, "start from the pretrain-ocr checkpoint")
    corpus = _corpus(args, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fh, log = _log_lines(out / "pretrain_log.jsonl")
    with fh:
        report = pretrain_tau(bundle, corpus, log=log)
    bundle.save(out, meta={"kind": "pretrain-tau", "report": report})
    write_run(out, "pretrain-tau", bundle.config, bundle.config.trainer.seed,
              {"corpus": args.corpus, "checkpoint": args.checkpoint}, {"report": report})
    _emit(report)


def cmd_train(args) -> None:
    from .trainer import train

    if args.resume and args.checkpoint:
        raise UsageError("give either --checkpoint or --resume")
    if args.resume:
        args.checkpoint = args.resume
    bundle = _load_bundle(args, "start from the pretrain-tau checkpoint")
    if args.resume:
        args.checkpoint = None
    corpus = _corpus(args, bundle)
    out = Path(args.out)
    tic = time.perf_counter()
    result = train(bundle, corpus, out, resume=args.resume)
    result["seconds"] = time.perf_counter() - tic
    write_run(out, "train", bundle.config, bundle.config.trainer.seed,
              {"corpus": args.corpus, "checkpoint": args.checkpoint, "resume": args.resume}, {"result": result})
    _emit(result)


def _select_records(corpus, split: str, manifest: str | None, limit: int | None):
    from .data import read_manifest

    if manifest:
        records = read_manifest(manifest)
    else:
        records = [corpus.records[i] for i in corpus.split(split)]
    return records[:limit] if limit else records


def cmd_infer(args) -> None:
    from .data import read_pgm, write_pgm
    from .sampler import infer, infer_batch

    bundle = _load_bundle(args, "inference needs trained weights")
    sc = bundle.config.sampler
    out = Path(args.out)
    if args.input:
        y = read_pgm(args.input)
        res = infer(bundle, y, sc.seed, trace=sc.trace, argmax_text=sc.argmax_text,
                    conf_override=sc.conf_override)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / (Path(args.input).stem + "_sr.pgm"), res["x"])
        if sc.trace:
            with open(out / "trace.jsonl", "w") as fh:
                for rec in res["trace"]:
                    fh.write(json.dumps(rec.to_dict()) + "\n")
        text = bundle.alphabet.decode(res["text"])
        write_run(out, "infer", bundle.config, sc.seed, {"input": args.input, "checkpoint": args.checkpoint},
                  {"text": text})
        _emit({"output": str(out / (Path(args.input).stem + "_sr.pgm")), "text": text, "symbols": res["text"]})
        return
    if not args.corpus:
        raise UsageError("batch inference needs --corpus (with --manifest or --split)")
    corpus = _corpus(args, bundle)
    records = _select_records(corpus, args.split, args.manifest, args.limit)
    report = infer_batch(bundle, corpus, records, out, seed=sc.seed, argmax_text=sc.argmax_text,
                         conf_override=sc.conf_override)
    write_run(out, "infer", bundle.config, sc.seed,
              {"corpus": args.corpus, "manifest": args.manifest, "checkpoint": args.checkpoint})
    _emit(report.metrics)


def cmd_eval(args) -> None:
    from .sampler import infer_batch

    bundle = _load_bundle(args, "evaluation needs trained weights")
    sc = bundle.config.sampler
    corpus = _corpus(args, bundle)
    records = _select_records(corpus, args.split, args.manifest, args.limit)
    out = Path(args.out)
    report = infer_batch(bundle, corpus, records, out, seed=sc.seed, argmax_text=sc.argmax_text,
                         conf_override=sc.conf_override, write_images=not args.no_images)
    write_run(out, "eval", bundle.config, sc.seed,
              {"corpus": args.corpus, "manifest": args.manifest, "checkpoint": args.checkpoint},
              {"metrics": report.metrics})
    m = report.metrics
    _emit({"psnr": m["psnr"], "acc": m["acc"], "ned": m["ned"], "n": m["n"]})


def cmd_gradcheck(args) -> None:
    from .checks import gradcheck_suite, op_coverage

    reports = gradcheck_suite(seed=args.seed or 0, tol=args.tol)
    missing = op_coverage(reports)
    summary = {name: r.to_dict() for name, r in reports.items()}
    passed = all(r.passed for r in reports.values()) and not missing
    _emit({"passed": passed, "unchecked_ops": missing, "graphs": summary})
    if not passed:
        raise RuntimeError("gradient check failed")


# Parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsrdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")

    p = sub.add_parser("schedule-dump", help="print both noise schedules as JSON")
    common(p)
    for name, dest, typ in [("--T", "T", int), ("--K", "K", int), ("--kappa", "kappa", float),
                            ("--eta-1", "eta_1", float), ("--eta-T", "eta_T", float),
                            ("--final-alphabar", "final_alphabar", float)]:
        _flag(p, name, dest, type=typ)
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("gen-data", help="render a seeded corpus of HR/LR pairs")
    common(p)
    p.add_argument("--out", required=True)
    _flag(p, "--K", "K", type=int)
    _flag(p, "--n", "n", type=int)
    _flag(p, "--seed", "data_seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    for name, func, help_ in [("pretrain-ocr", cmd_pretrain_ocr, "fit and freeze the recogniser head"),
                              ("pretrain-tau", cmd_pretrain_tau, "fit and freeze MoM-lite and the text decoder")]:
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--corpus", required=True)
        p.add_argument("--checkpoint")
        p.add_argument("--out", required=True)
        _flag(p, "--seed", "train_seed", type=int)
        _flag(p, "--steps", "ocr_steps" if name == "pretrain-ocr" else "tau_steps", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="main denoiser training loop")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", help="pretrained starting point")
    p.add_argument("--resume", help="checkpoint written by an earlier train run")
    p.add_argument("--out", required=True)
    _flag(p, "--steps", "steps", type=int)
    _flag(p, "--batch-size", "batch_size", type=int)
    _flag(p, "--lr", "lr", type=float)
    _flag(p, "--r1", "r1", type=int)
    _flag(p, "--r2", "r2", type=int)
    _flag(p, "--seed", "train_seed", type=int)
    _flag(p, "--forward", "forward", choices=["residual", "ddpm_like"])
    _flag(p, "--prefetch", "prefetch", type=int)
    _flag(p, "--checkpoint-every", "checkpoint_every", type=int)
    _bool_flag(p, "--flat", "flat")
    _bool_flag(p, "--train-mom", "train_mom")
    p.set_defaults(func=cmd_train)

    for name, func in [("infer", cmd_infer), ("eval", cmd_eval)]:
        p = sub.add_parser(name, help="restore images" if name == "infer" else "restore and score a split")
        common(p, config=False)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--corpus", required=name == "eval")
        p.add_argument("--manifest", help="JSON-lines subset of the corpus manifest")
        p.add_argument("--split", default="test")
        p.add_argument("--limit", type=int)
        if name == "infer":
            p.add_argument("--input", help="single LR image (PGM, HR-sized)")
            _bool_flag(p, "--trace", "trace")
        else:
            p.add_argument("--no-images", action="store_true")
        _flag(p, "--seed", "seed", type=int)
        _bool_flag(p, "--argmax-text", "argmax_text")
        _flag(p, "--conf-override", "conf_override", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and model graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE, problems=exc.problems)
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:  # every failure leaves as one JSON line
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)
    return 0


if __name__ == "__main__":
    sys.exit(main())
