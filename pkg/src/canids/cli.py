"""Command-line pipeline driver.

Subcommands mirror the pipeline stages (generate, inject, train, calibrate,
score, evaluate, report), plus ``gradcheck`` for numeric verification and
``reproduce`` to chain everything deterministically.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import ConfigError, DataError, NumericError
from .gradcheck import run_all as run_gradcheck
from .profiles import resolve_profile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_common(parser, model=False):
    parser.add_argument("--seed", type=int, default=0, help="master run seed")
    parser.add_argument("--profile", choices=("desk", "full"), default="desk")
    parser.add_argument("--config", default=None, help="key/value file overriding profile fields")
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker cap")
    if model:
        parser.add_argument(
            "--model", choices=pipeline.MODEL_KINDS, default="canet", help="model to operate on"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canids",
        description="CAN bus intrusion-detection pipeline: synthetic traffic, attacks, "
        "training, scoring, and evaluation",
    )
    parser.add_argument("--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("generate", "inject", "report", "reproduce"):
        p = sub.add_parser(name)
        _add_common(p)
    for name in ("train", "calibrate", "score", "evaluate"):
        p = sub.add_parser(name)
        _add_common(p, model=True)
    for p in sub.choices.values():
        p.add_argument("--h-scale", type=int, default=None, help="override the profile's h_scale")

    g = sub.add_parser("gradcheck")
    g.add_argument("--h-scale", type=int, default=5)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--samples", type=int, default=200)
    return parser


def _resolve(args):
    profile = resolve_profile(args.profile, args.config)
    if getattr(args, "h_scale", None):
        profile = profile.with_overrides({"h_scale": str(args.h_scale)})
    return profile


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "gradcheck":
        reports = run_gradcheck(args.h_scale, args.tolerance, args.samples)
        failed = False
        for name, report in reports.items():
            print(f"== {name} ==")
            print(report.summary())
            failed |= not report.passed
        return EXIT_NUMERIC if failed else EXIT_OK

    profile = _resolve(args)
    if args.command == "generate":
        pipeline.stage_generate(profile, args.seed, args.out)
    elif args.command == "inject":
        pipeline.stage_inject(profile, args.seed, args.out)
    elif args.command == "train":
        pipeline.stage_train(profile, args.model, args.seed, args.out, jobs=args.jobs)
    elif args.command == "calibrate":
        pipeline.stage_calibrate(profile, args.model, args.seed, args.out)
    elif args.command == "score":
        pipeline.stage_score(profile, args.model, args.seed, args.out)
    elif args.command == "evaluate":
        pipeline.stage_evaluate(profile, args.model, args.seed, args.out)
    elif args.command == "report":
        print(pipeline.stage_report(args.out, args.seed).read_text(encoding="utf-8"), end="")
    elif args.command == "reproduce":
        summary = pipeline.reproduce(profile, args.seed, args.out, jobs=args.jobs)
        print(summary.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
