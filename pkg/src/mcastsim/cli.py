"""``mcastsim`` command line."""
from __future__ import annotations

import argparse
import sys

from .experiment import (ConfigError, ScenarioConfig, compare_dirs, render_summary,
                         run_scenario)
from .sim_core import MS, seconds


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topology", default="paper", help="topology file, or 'paper'")
    p.add_argument("--trees", type=int, default=3, help="max trees per session")
    p.add_argument("--bytes", type=int, default=None,
                   help="block size; omit to stream for the whole duration")
    p.add_argument("--duration", type=float, default=60.0, help="virtual seconds")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--pacing", choices=("paced", "unpaced"), default="paced")
    p.add_argument("--window", type=float, default=100.0, help="sample window in ms")
    p.add_argument("--routing", choices=("multi", "single"), default="multi",
                   help="'single' forces the BFS single-tree baseline")
    p.add_argument("--sender", default="s")
    p.add_argument("--receivers", default=None, help="comma-separated labels")
    p.add_argument("--out", default=None, help="output directory")


def _config(args) -> ScenarioConfig:
    return ScenarioConfig(
        topology=args.topology, max_trees=args.trees, block_bytes=args.bytes,
        duration=seconds(args.duration), seed=args.seed, pacing=args.pacing,
        window=int(round(args.window * MS)), out=args.out, sender=args.sender,
        receivers=tuple(args.receivers.split(",")) if args.receivers else None,
        routing=args.routing)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mcastsim",
                                     description="Multi-tree multicast network simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    _add_run_options(run)
    fail = sub.add_parser("fail-link", help="run a scenario with a link failure")
    _add_run_options(fail)
    fail.add_argument("--at", type=float, required=True, help="failure time, virtual seconds")
    fail.add_argument("--link", required=True, help="link as A-B, e.g. sw0-sw11")
    cmp_ = sub.add_parser("compare", help="compare two run directories")
    cmp_.add_argument("dir_a")
    cmp_.add_argument("dir_b")
    args = parser.parse_args(argv)

    if args.command == "compare":
        try:
            rows = compare_dirs(args.dir_a, args.dir_b)
        except (OSError, ValueError) as exc:
            print(f"mcastsim: {exc}", file=sys.stderr)
            return 2
        width = max(len(r[0]) for r in rows)
        print(f"{'metric':<{width}}  {'A':>16}  {'B':>16}  {'B/A':>8}")
        for metric, a, b, ratio in rows:
            print(f"{metric:<{width}}  {a:>16}  {b:>16}  {ratio:>8}")
        return 0

    cfg = _config(args)
    if args.command == "fail-link":
        ends = args.link.split("-")
        if len(ends) != 2:
            parser.error("--link must look like A-B")
        cfg.fail_at = seconds(args.at)
        cfg.fail_link = (ends[0], ends[1])
    try:
        result = run_scenario(cfg)
    except ConfigError as exc:
        parser.error(str(exc))
    sys.stdout.write(render_summary(result.summary))
    return 0 if result.summary.get("status") == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
