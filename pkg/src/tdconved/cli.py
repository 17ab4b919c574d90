"""Command-line entry point.

    tdconved synth | train | eval | decode | gradcheck | bench [--config FILE] [--<key> VALUE ...]

The config file is JSON (default path from $TDCONVED_CONFIG); any config key
can be overridden with a flag of the same name (``--d-r 64``), and flags win.
On failure the last stderr line is ``error: <category>: <message>`` and the
exit code is 2 (1 for a failing gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import Config
from .errors import CapacityError, ConfigError, TDConvError

log = logging.getLogger("tdconved")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $TDCONVED_CONFIG)")
    g = p.add_argument_group("config overrides")
    for f in fields(Config):
        typ = {"int": int, "float": float}.get(f.type, str)
        g.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", type=typ, default=None,
                       metavar=f.type.upper())


def _config(args) -> Config:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return Config.load(args.config, overrides)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: Config, args) -> int:
    from .data import synth_copy_task, write_captions, write_tdfe

    root = Path(cfg.data_dir)
    (root / "features").mkdir(parents=True, exist_ok=True)
    n = cfg.synth_train + cfg.synth_test
    samples = synth_copy_task(cfg.seed, n, cfg.synth_vocab, cfg.synth_len, cfg.d_v, cfg.synth_noise)
    for s in samples:
        write_tdfe(root / "features" / f"{s.video_id}.tdfe", s.features)
    write_captions(root / "captions_train.jsonl", [(s.video_id, s.caption) for s in samples[: cfg.synth_train]])
    write_captions(root / "captions_test.jsonl", [(s.video_id, s.caption) for s in samples[cfg.synth_train :]])
    print(f"videos={n} train={cfg.synth_train} test={cfg.synth_test} frames={cfg.synth_len} dim={cfg.d_v}")
    return 0


def _load_split(cfg: Config, split: str):
    from .data import load_dataset

    root = Path(cfg.data_dir)
    return load_dataset(root / f"captions_{split}.jsonl", root / "features")


def cmd_train(cfg: Config, args) -> int:
    from .checkpoint import save_checkpoint
    from .model import TDConvED
    from .train import train
    from .vocab import build_vocab

    data = _load_split(cfg, "train")
    if not data:
        raise ConfigError("training split is empty")
    n_v, d_v = data[0].features.shape
    if d_v != cfg.d_v:
        raise ConfigError(f"features have dim {d_v} but config d_v={cfg.d_v}; pass --d-v {d_v}")
    cfg = cfg.replace(n_v=n_v)
    vocab = build_vocab((s.caption for s in data), cfg.min_count)
    ckpt = Path(cfg.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(ckpt.with_suffix(".vocab.txt"))
    model = TDConvED(cfg, len(vocab))
    t0 = time.perf_counter()
    with open(cfg.log, "w", encoding="utf-8") as logf:
        logf.write(f"# variant={cfg.variant} params={model.num_parameters()} vocab={len(vocab)} "
                   f"loss=mean-per-token\n")

        def on_epoch(rec):
            logf.write(rec.line() + "\n")
            logf.write(f"# time epoch={rec.epoch} elapsed_s={time.perf_counter() - t0:.3f}\n")
            logf.flush()
            save_checkpoint(ckpt, model, vocab)
            print(rec.line(), flush=True)

        history = train(model, data, vocab, cfg, on_epoch)
    if not history:
        save_checkpoint(ckpt, model, vocab)
    return 0


def format_report(report: dict) -> str:
    return "\n".join(f"{k}={v}" for k, v in report.items())


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line or line.startswith("#") or "=" not in line:
            continue
        k, v = line.split("=", 1)
        for conv in (int, float):
            try:
                v = conv(v)
                break
            except ValueError:
                pass
        out[k] = v
    return out


def _load_model(cfg: Config, args):
    from .checkpoint import load_checkpoint

    model, vocab = load_checkpoint(args.checkpoint or cfg.checkpoint)
    if cfg.max_len + 1 > model.cfg.t_max:
        raise CapacityError(f"max_len={cfg.max_len} needs t_max >= {cfg.max_len + 1}, checkpoint has {model.cfg.t_max}")
    return model, vocab


def cmd_eval(cfg: Config, args) -> int:
    from .train import evaluate

    model, vocab = _load_model(cfg, args)
    data = _load_split(cfg, args.split)
    report = {"split": args.split, **evaluate(model, data, vocab, cfg.beam, cfg.max_len)}
    print(format_report(report))
    return 0


def cmd_decode(cfg: Config, args) -> int:
    from .data import load_features

    model, vocab = _load_model(cfg, args)
    feats = load_features(args.features)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        for vid, m in feats.items():
            m = m.astype(np.float64)
            if cfg.beam == 1:
                res = model.greedy_decode(m, cfg.max_len)
            else:
                res = model.beam_search(m, cfg.beam, cfg.max_len)
            words = vocab.decode(res.tokens)
            out.write(json.dumps({"video_id": vid, "caption": " ".join(words), "logp": res.logp}) + "\n")
            if trace is not None and res.attention is not None:
                for step, (w, row) in enumerate(zip(words, res.attention)):
                    trace.write(json.dumps({"video_id": vid, "step": step, "token": w,
                                            "attention": [float(x) for x in row]}) + "\n")
    finally:
        if args.out:
            out.close()
        if trace is not None:
            trace.close()
    return 0


def cmd_gradcheck(cfg: Config, args) -> int:
    from .verify import format_gradcheck, gradcheck, tiny_config

    rows = gradcheck(tiny_config(variant=cfg.variant), seed=cfg.seed, corrupt=args.corrupt)
    print(format_gradcheck(rows))
    bad = [r.name for r in rows if not r.passed]
    print(f"groups={len(rows)} failed={len(bad)}")
    return 1 if bad else 0


def cmd_bench(cfg: Config, args) -> int:
    from .verify import bench

    rep = bench(cfg.replace(t_max=max(cfg.t_max, args.steps), max_len=min(cfg.max_len, args.steps - 1)),
                steps=args.steps, batch=args.batch, repeats=args.repeats, seed=cfg.seed)
    print("\n".join(rep.lines()))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdconved", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name in ("eval", "decode"):
            p.add_argument("--ckpt", dest="checkpoint", help="checkpoint path (default: config checkpoint)")
        if name == "eval":
            p.add_argument("--split", default="test")
        if name == "decode":
            p.add_argument("--features", required=True, help=".tdfe file or directory")
            p.add_argument("--out", help="captions JSONL (default stdout)")
            p.add_argument("--trace", help="attention trace JSONL, one row per emitted word")
        if name == "gradcheck":
            p.add_argument("--corrupt", help="scale this parameter's analytic gradient (negative control)")
        if name == "bench":
            p.add_argument("--steps", type=int, default=25)
            p.add_argument("--batch", type=int, default=8)
            p.add_argument("--repeats", type=int, default=5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except TDConvError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
    except KeyError as e:
        print(f"error: config: unknown parameter {e}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
