"""Command line entry point: generate, train, fuse, report.

Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .corpus import SentimentLabel
from .errors import InputError, SpecError
from .experiment import ExperimentConfig, generate, make_report, run_tasks


def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{args.config}: invalid JSON ({exc})") from None
    if args.seed is not None:
        data["seed"] = args.seed
        gen = data.get("corpus", {}).get("generator")
        if gen is not None:
            gen["seed"] = args.seed
    if getattr(args, "modality", None):
        data["modality"] = args.modality
    if getattr(args, "output", None):
        data["output_dir"] = args.output
    return ExperimentConfig.from_dict(data)


def cmd_generate(args, cfg) -> int:
    corpus, path = generate(cfg)
    print(f"wrote {path} ({len(corpus)} utterances, {len(corpus.dialogs())} dialogs)")
    for label in SentimentLabel:
        print(f"  {label.tag:<9} {corpus.class_counts[label]}")
    return 0


def cmd_train(args, cfg) -> int:
    run_tasks(cfg, cfg.modality, force=args.force, jobs=args.jobs)
    return 0


def cmd_fuse(args, cfg) -> int:
    run_tasks(cfg, "bimodal", force=args.force, jobs=args.jobs)
    return 0


def cmd_report(args, cfg) -> int:
    _, text = make_report(cfg)
    print(text)
    print(f"\nwrote {cfg.out / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialogsent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the global (and generator) seed")
        p.add_argument("--output", metavar="DIR", help="override output_dir")
        return p

    common(sub.add_parser("generate", help="write the synthetic corpus manifest")).set_defaults(func=cmd_generate)
    for name, func, helptext in (("train", cmd_train, "train one modality for every monitor and fold"),
                                 ("fuse", cmd_fuse, "fit the late-fusion forest on trained modalities")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--force", action="store_true", help="retrain completed runs")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if name == "train":
            p.add_argument("--modality", choices=["acoustic", "text", "bimodal"])
        p.set_defaults(func=func)
    common(sub.add_parser("report", help="render fold-averaged metric tables")).set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (InputError, SpecError, TypeError, ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except (InputError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
