"""Command-line entry point: ``mobsal <stage> --out RUN_DIR [--config PATH] [--seed N] [--jobs N]``."""

from __future__ import annotations

import argparse
import sys
import traceback

from . import __version__, stages
from .config import RunConfig, dump_config
from .runstore import StageError


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise StageError("bad_argument", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--out", metavar="DIR", required=True, help="run directory")
    common.add_argument("--seed", type=_u64, metavar="U64", help="overrides every seed in the config")
    common.add_argument("--jobs", type=_positive, default=1, metavar="N", help="parallel scenario cells")

    p = _Parser(prog="mobsal", description=__doc__)
    p.add_argument("--version", action="version", version=f"mobsal {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="synthesize geo and usage-event streams")
    sub.add_parser("prepare", parents=[common], help="locations, trajectories, queries, labels, features")
    t = sub.add_parser("train", parents=[common], help="train models for selected scenarios")
    t.add_argument("--model", action="append", metavar="NAME",
                   help=f"one of {', '.join(stages.MODEL_CHOICES)} (repeatable; default: all)")
    t.add_argument("--scenario", action="append", metavar="M:CRITERION",
                   help="e.g. 25:Successive or 50:Important@5 (repeatable; default: whole grid)")
    sub.add_parser("evaluate", parents=[common], help="collect cell results into results and heatmap CSVs")
    sub.add_parser("sweep", parents=[common], help="run every missing stage and scenario cell")
    sub.add_parser("report", parents=[common], help="print summary tables")
    d = sub.add_parser("default-config", help="print the shipped default config")
    d.add_argument("--out", metavar="PATH", help="write to this file instead of stdout")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        text = dump_config(RunConfig())
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    kw = {"config_path": args.config, "seed": args.seed}
    if args.command == "generate":
        stages.cmd_generate(args.out, **kw)
    elif args.command == "prepare":
        data = stages.cmd_prepare(args.out, **kw)
        print(f"{len(data.trajectories)} trajectories, {len(data.queries)} queries")
    elif args.command == "train":
        models = None
        if args.model:
            models = [m.strip() for chunk in args.model for m in chunk.split(",") if m.strip()]
        for key in stages.cmd_train(args.out, models, args.scenario, jobs=args.jobs, **kw):
            print(f"trained {key}")
    elif args.command == "evaluate":
        results, _ = stages.cmd_evaluate(args.out, **kw)
        print(f"{len(results)} result rows")
    elif args.command == "sweep":
        done = stages.cmd_sweep(args.out, jobs=args.jobs, **kw)
        print(f"computed {len(done)} cell(s)")
    elif args.command == "report":
        sys.stdout.write(stages.cmd_report(args.out, **kw))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except StageError as exc:
        print(exc.line(), file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print(StageError("interrupted", "stopped by user").line(), file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - the one-line contract covers unexpected failures too
        detail = f"{type(exc).__name__}: {exc}"
        print(StageError("internal", detail).line(), file=sys.stderr)
        traceback.print_exc(file=sys.stderr) if "--debug" in (argv or sys.argv) else None
        return 1


if __name__ == "__main__":
    sys.exit(main())
