"""Command-line entry point: ``embcompress <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config, validate
from .embedding import p_from_reduction

COMMANDS = ("train", "compress-retrain", "quantize", "eval", "analyze", "baseline-offline",
            "sweep")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file (every field has a default)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p.add_argument("-v", "--verbose", action="store_true")


def _retention(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--p", type=float, dest="p", help="retained fraction of embedding parameters")
    g.add_argument("--R", type=float, dest="R", help="size reduction, R = 1 - p")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embcompress",
        description="Online SVD compression of embedding layers, with baselines and cost analysis.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", help="train an uncompressed model")
    _common(p)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("compress-retrain", help="factorize the embedding of a model and retrain")
    _common(p)
    p.add_argument("model", type=Path)
    _retention(p)
    p.add_argument("--retrain-epochs", type=int)

    p = sub.add_parser("quantize", help="fixed-point quantize every weight of a model")
    _common(p)
    p.add_argument("model", type=Path)
    p.add_argument("--bits", type=int, help="8 or 16 (default from config)")
    p.add_argument("--data", type=Path, help="TSV test set; defaults to the config test split")

    p = sub.add_parser("eval", help="accuracy and per-class counts")
    _common(p)
    p.add_argument("model", type=Path)
    p.add_argument("--data", type=Path, help="TSV dataset; defaults to the config split")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")

    p = sub.add_parser("analyze", help="FLOP, space and latency trade-off report")
    _common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--p-list", type=float, nargs="*", dest="p_list")
    p.add_argument("--b-s", type=int, dest="b_s")
    p.add_argument("--b-q", type=int, dest="b_q")
    p.add_argument("--t-s", type=float, dest="t_s")
    p.add_argument("--t-q", type=float, dest="t_q")

    p = sub.add_parser("baseline-offline", help="train on an embedding reduced before training")
    _common(p)
    _retention(p)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("sweep", help="compare all methods across reduction values")
    _common(p)
    p.add_argument("--R-list", type=float, nargs="+", dest="r_list")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--timing", action="store_true", help="also time inference (timing.csv)")
    return parser


def _retained(args):
    if args.p is not None:
        return args.p
    if args.R is not None:
        return p_from_reduction(args.R)
    return None


def run(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    if getattr(args, "epochs", None):
        cfg.train["epochs"] = args.epochs
    plots_on = not args.no_plots
    out = args.out
    cmd = args.command
    if cmd == "train":
        return pipeline.run_train(cfg, out, plots_on)
    if cmd == "compress-retrain":
        return pipeline.run_compress_retrain(cfg, args.model, out, _retained(args),
                                             args.retrain_epochs, plots_on)
    if cmd == "quantize":
        return pipeline.run_quantize(cfg, args.model, out, args.bits, args.data)
    if cmd == "eval":
        return pipeline.run_eval(cfg, args.model, out, args.data, args.split)
    if cmd == "analyze":
        a = cfg.analyze
        for key in ("m", "n", "b_s", "b_q", "t_s", "t_q"):
            if getattr(args, key) is not None:
                setattr(a, key, getattr(args, key))
        if args.p_list is not None:
            a.p = tuple(args.p_list)
        validate(cfg)
        return pipeline.run_analyze(cfg, out, plots_on)
    if cmd == "baseline-offline":
        return pipeline.run_baseline_offline(cfg, out, _retained(args), plots_on)
    if cmd == "sweep":
        if args.r_list:
            cfg.sweep = replace(cfg.sweep, R=tuple(args.r_list))
        seeds = args.seeds or ((args.seed,) if args.seed is not None else None)
        return pipeline.run_sweep(cfg, out, plots_on, args.timing, seeds)
    raise ConfigError(f"unknown command {cmd}")  # pragma: no cover


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    print(pipeline.format_summary(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
