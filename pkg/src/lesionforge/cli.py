"""Command-line experiment runner.

    lesionforge <prepare|seg|train|evaluate|gradcheck> --config <path>
                [--seed N] [--out DIR]

Exit codes: 0 success, 1 validation error (config/manifest), 2 runtime error.
LESIONFORGE_THREADS caps internal parallelism (0 = sequential).
"""

import argparse
import json
import sys

from . import checks
from .config import ConfigError, load_config
from .manifest import ManifestError
from .pipeline import PipelineError, cmd_evaluate, cmd_prepare, cmd_seg, cmd_train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionforge",
        description="Skin-lesion classification pipeline: preprocessing, "
                    "segmentation, ensemble training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    add_common(sub.add_parser("prepare", help="split manifest, class weights, augmentation"))
    seg = sub.add_parser("seg", help="train or apply the dual-encoder segmenter")
    seg.add_argument("subaction", choices=["train", "apply"])
    add_common(seg)
    add_common(sub.add_parser("train", help="extract features and train ensemble heads"))
    add_common(sub.add_parser("evaluate", help="metrics, ROC CSVs and timing on the test split"))

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification suite")
    gc.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    return parser


def _config_from_args(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            reports = checks.run_suite(corrupt=args.corrupt)
            print(checks.format_report(reports))
            return 0 if all(r.passed for r in reports) else 2
        cfg = _config_from_args(args)
        if args.command == "prepare":
            summary = cmd_prepare(cfg)
        elif args.command == "seg":
            summary = cmd_seg(cfg, args.subaction)
        elif args.command == "train":
            summary = cmd_train(cfg)
        elif args.command == "evaluate":
            summary = cmd_evaluate(cfg)
        else:  # pragma: no cover - argparse enforces choices
            raise ValueError(args.command)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    except (ConfigError, ManifestError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
