"""Command-line experiment runner.

Subcommands: pretrain, prune, finetune, eval, ablate, reproduce. Every run
directory receives the resolved config snapshot, traces, reports (JSON +
CSV + PNG), and checkpoints. Exit codes: 0 success, 2 config error,
3 stage error, 64 usage.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, StageError
from .config import ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustprune",
                     description="Robust pruning experiments: dual-ascent "
                                 "sparsification, adversarial distillation, "
                                 "and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output dir")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted config override, e.g. prune.lr=0.05")

    for name, blurb in (("pretrain", "train the dense model"),
                        ("prune", "sparsify against the pretrained model"),
                        ("finetune", "distill the pruned student"),
                        ("eval", "measure the latest checkpoint")):
        common(sub.add_parser(name, help=blurb))
    ablate = sub.add_parser("ablate", help="run one ablation variant")
    ablate.add_argument("variant", help="e.g. no-accuracy, lwm, scratch, "
                                        "swap, vanilla-kd, iterative")
    common(ablate)
    repro = sub.add_parser("reproduce",
                           help="run a full desk-scale comparison suite")
    repro.add_argument("suite", help="ablation-kd | attack-compare | "
                                     "loss-ablation | pgd-sweep | "
                                     "seed-stability | negative-results | "
                                     "boundary-distance")
    repro.add_argument("--seed", type=int, default=0)
    repro.add_argument("--out", default="reproduce-out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "reproduce":
            from .reproduce import run_reproduce
            run_reproduce(args.suite, args.seed, args.out)
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config, overrides=args.override,
                                    seed=args.seed, out_dir=args.out)
        from . import pipeline
        if args.command == "pretrain":
            report = pipeline.run_pretrain(cfg)
        elif args.command == "prune":
            report = pipeline.run_prune(cfg)
        elif args.command == "finetune":
            report = pipeline.run_finetune(cfg)
        elif args.command == "eval":
            report = pipeline.run_eval(cfg)
        elif args.command == "ablate":
            report = pipeline.run_ablate(cfg, args.variant)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
        print(f"{args.command}: eba={report.eba:.2f} era={report.era:.2f} "
              f"-> {cfg.out_dir}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
