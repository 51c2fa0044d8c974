"""Command-line front end.

    cachesnap run <config.cfg>          run an experiment, write its store
    cachesnap analyze <store> <name>    derive a CSV artifact from a store
    cachesnap verify <store>            check store invariants
    cachesnap recipes list              list the shipped experiment recipes

Relative experiment output paths are rooted at $CACHESNAP_OUT when set,
else the current directory.

Exit codes: 0 ok, 1 usage error, 2 invalid config or capacity overflow,
3 data corruption, 4 invariant failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, parse_config
from .report import ANALYSES, AnalyzeError, analyze_store, verify_store
from .shutter import SnapshotFormatError, StoreFullError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_CORRUPT = 3
EXIT_INVARIANT = 4

OUTPUT_ROOT_ENV = "CACHESNAP_OUT"


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _cmd_run(args) -> int:
    from .experiment import run_experiment

    try:
        cfg = parse_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output)
    if not out.is_absolute():
        out = _output_root() / out
    try:
        run_experiment(cfg, out)
    except StoreFullError as e:
        print(f"capacity error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"store written to {out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    store = Path(args.store)
    if not store.exists():
        print(f"no such store: {store}", file=sys.stderr)
        return EXIT_USAGE
    params = {}
    if args.pid is not None:
        params["pid"] = args.pid
    if args.region is not None:
        params["region"] = args.region
    try:
        artifacts = analyze_store(store, args.analysis, params)
    except AnalyzeError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SnapshotFormatError as e:
        print(f"corrupt store: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (FileNotFoundError, ValueError, KeyError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    reports = store / "reports"
    reports.mkdir(exist_ok=True)
    for name, text in artifacts.items():
        path = reports / name
        path.write_text(text)
        print(path)
    return EXIT_OK


def _cmd_verify(args) -> int:
    store = Path(args.store)
    if not store.exists():
        print(f"no such store: {store}", file=sys.stderr)
        return EXIT_USAGE
    report = verify_store(store)
    sys.stdout.write(report.render())
    if report.corruption:
        return EXIT_CORRUPT
    if report.failed:
        return EXIT_INVARIANT
    return EXIT_OK


def recipe_dir():
    return resources.files("cachesnap") / "recipes"


def _cmd_recipes(args) -> int:
    if args.action != "list":
        print("usage: cachesnap recipes list", file=sys.stderr)
        return EXIT_USAGE
    entries = sorted(p.name for p in recipe_dir().iterdir() if p.name.endswith(".cfg"))
    for name in entries:
        path = recipe_dir() / name
        first = path.read_text().splitlines()[0].lstrip("# ").strip()
        print(f"{name:28s} {first}")
        print(f"  {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cachesnap",
        description="shared-cache snapshotting simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to an experiment .cfg file")
    p_run.set_defaults(func=_cmd_run)

    p_an = sub.add_parser("analyze", help="derive a CSV artifact from a store")
    p_an.add_argument("store", help="experiment output directory")
    p_an.add_argument("analysis", help=f"one of: {', '.join(ANALYSES)}")
    p_an.add_argument("--pid", type=int, help="pid for heatmap/profiles")
    p_an.add_argument("--region", help="region name for heatmap")
    p_an.set_defaults(func=_cmd_analyze)

    p_ver = sub.add_parser("verify", help="check store invariants")
    p_ver.add_argument("store", help="experiment output directory")
    p_ver.set_defaults(func=_cmd_verify)

    p_rec = sub.add_parser("recipes", help="shipped experiment recipes")
    p_rec.add_argument("action", nargs="?", default="list")
    p_rec.set_defaults(func=_cmd_recipes)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
