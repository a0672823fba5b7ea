"""Command line entry point: ``synthasr <command> --config FILE [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from synthasr import pipeline
from synthasr.config import ConfigError, load_config
from synthasr.tts.model import VARIANTS
from synthasr.tts.trunk import TrunkError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("synthasr")


def _common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
    if needs_config:
        p.add_argument("--config", required=True, type=Path, help="experiment YAML file")
        p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", type=Path, default=Path("runs/default"), help="artifact directory")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for per-utterance work")
    p.add_argument("-v", "--verbose", action="store_true")


def _system_args(p: argparse.ArgumentParser, synthetic_only: bool = False) -> None:
    p.add_argument("--variant", choices=VARIANTS, help="TTS decoder variant")
    p.add_argument("--condition", choices=("a", "b", "c"), default="a")
    p.add_argument("--control", action="store_true",
                   help="use the untrained TTS control instead of a trained variant")
    if not synthetic_only:
        p.add_argument("--real", action="store_true", help="use the real training audio")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="train the aligning flow and write the duration archive")
    _common(p)
    p = sub.add_parser("train-tts", help="train one TTS decoder variant on archived durations")
    _common(p)
    p.add_argument("--variant", choices=VARIANTS, help="defaults to decoder.variant of the config")
    p = sub.add_parser("synthesize", help="synthesize the training set under a condition")
    _common(p)
    _system_args(p, synthetic_only=True)
    p = sub.add_parser("train-asr", help="train a recognizer on synthetic or real audio")
    _common(p)
    _system_args(p)
    p = sub.add_parser("evaluate", help="WER, sWER and MOS of a trained recognizer")
    _common(p)
    _system_args(p)
    p = sub.add_parser("report", help="render summary and condition tables")
    _common(p)
    p = sub.add_parser("run-all", help="full pipeline for the listed variants")
    _common(p)
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--conditions", nargs="+", choices=("a", "b", "c"), default=["a"])
    p.add_argument("--all-conditions-for", nargs="*", choices=VARIANTS, default=[],
                   help="variants that additionally run conditions b and c")
    p.add_argument("--no-control", action="store_true")
    p = sub.add_parser("make-toy", help="write the deterministic toy corpus")
    _common(p, needs_config=False)
    return parser


def _variant(args, cfg) -> str:
    return getattr(args, "variant", None) or cfg.get("decoder", {}).get("variant", "transformer")


def _system(args, cfg) -> tuple[str | None, str | None]:
    """(variant, condition) naming a recognizer; variant None is the real-data system."""
    if getattr(args, "real", False):
        return None, None
    if args.control:
        return pipeline.CONTROL, "a"
    return _variant(args, cfg), args.condition


def run_all(cfg, args) -> None:
    out, workers = args.out, args.workers
    pipeline.run_align(cfg, out)
    pipeline.run_train_asr(cfg, out, None, None)
    pipeline.run_evaluate(cfg, out, None, None, workers)
    for variant in args.variants:
        pipeline.run_train_tts(cfg, out, variant)
        conditions = list(args.conditions)
        if variant in args.all_conditions_for:
            conditions += [c for c in ("a", "b", "c") if c not in conditions]
        for cond in conditions:
            pipeline.run_synthesize(cfg, out, variant, cond, workers)
            pipeline.run_train_asr(cfg, out, variant, cond)
            pipeline.run_evaluate(cfg, out, variant, cond, workers)
    if not args.no_control:
        variant = _variant(args, cfg)
        pipeline.run_synthesize(cfg, out, variant, "a", workers, control=True)
        pipeline.run_train_asr(cfg, out, pipeline.CONTROL, "a")
        pipeline.run_evaluate(cfg, out, pipeline.CONTROL, "a", workers)
    pipeline.run_report(cfg, out)


def dispatch(args) -> None:
    if args.command == "make-toy":
        from synthasr.toy import make_toy_corpus

        make_toy_corpus(args.out)
        return
    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config, overrides)
    out, workers = args.out, args.workers
    if args.command == "align":
        pipeline.run_align(cfg, out)
    elif args.command == "train-tts":
        pipeline.run_train_tts(cfg, out, _variant(args, cfg))
    elif args.command == "synthesize":
        pipeline.run_synthesize(cfg, out, _variant(args, cfg), args.condition, workers,
                                control=args.control)
    elif args.command == "train-asr":
        pipeline.run_train_asr(cfg, out, *_system(args, cfg))
    elif args.command == "evaluate":
        pipeline.run_evaluate(cfg, out, *_system(args, cfg), workers)
    elif args.command == "report":
        pipeline.run_report(cfg, out)
    elif args.command == "run-all":
        run_all(cfg, args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (pipeline.NumericalFailure, TrunkError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
