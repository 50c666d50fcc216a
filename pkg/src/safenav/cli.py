"""Command-line front end: ``safenav run | montecarlo | verify``.

Exit codes: 0 success, 1 malformed input or failed verification,
2 collision, 3 initial state outside the certified set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

from .sim import (
    ConfigError,
    PreconditionError,
    json_safe,
    load_scenario,
    metrics_to_json,
    monte_carlo,
    run_scenario,
    write_trajectory_csv,
)
from .verify import SUITES, run_suite
from .world import WorldError

__all__ = ["main", "build_parser", "parse_obstacles", "EXIT_OK", "EXIT_INPUT", "EXIT_COLLISION", "EXIT_PRECONDITION"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_COLLISION = 2
EXIT_PRECONDITION = 3

LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
U64_MAX = 2**64 - 1

log = logging.getLogger("safenav")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the malformed-input code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64 - 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def parse_obstacles(text: str) -> list[int]:
    """Parse ``a..b`` (inclusive) or a single count ``a``."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if m is None:
        raise argparse.ArgumentTypeError(f"expected a..b or a single count, got {text!r}")
    a = int(m.group(1))
    b = int(m.group(2)) if m.group(2) is not None else a
    if b < a:
        raise argparse.ArgumentTypeError(f"empty obstacle range {text!r}")
    return list(range(a, b + 1))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safenav", description="Perception-driven safety-filter simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--seed", type=_u64, default=None)

    mc = sub.add_parser("montecarlo", help="randomized dynamic-obstacle sweep")
    mc.add_argument("--scenario", required=True, type=Path)
    mc.add_argument("--obstacles", required=True, type=parse_obstacles)
    mc.add_argument("--trials", required=True, type=_positive_int)
    mc.add_argument("--jobs", type=_positive_int, default=1)
    mc.add_argument("--seed", type=_u64, default=None)
    mc.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("verify", help="run the randomized property suites")
    v.add_argument("--suite", required=True, choices=[*SUITES, "all"])
    v.add_argument("--seed", type=_u64, default=0)
    return p


def _setup_logging() -> None:
    level_name = os.environ.get("SAFENAV_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(level_name)
    if level is None:
        print(f"safenav: ignoring SAFENAV_LOG={level_name!r} (expected quiet, info or debug)", file=sys.stderr)
        level = logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _load(path: Path, seed: Optional[int]):
    cfg = load_scenario(path)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def cmd_run(args) -> int:
    cfg = _load(args.scenario, args.seed)
    try:
        tlog = run_scenario(cfg)
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    args.out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(tlog, args.out / "trajectory.csv")
    (args.out / "metrics.json").write_text(metrics_to_json(tlog.metrics) + "\n")
    m = tlog.metrics
    ts = m["settling_time_s"]
    print(
        f"{cfg.name}: status={tlog.status} reached={m['reached']} collided={m['collided']} "
        f"settling_time_s={ts:.3f} min_psi0={m['min_psi0']:.4g} "
        f"rms_u={[round(v, 4) for v in m['rms_u']]}"
    )
    if tlog.warnings:
        log.warning("%d control steps flagged by the assumption monitor", tlog.warnings)
    return EXIT_COLLISION if m["collided"] else EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _load(args.scenario, None)
    seed = args.seed if args.seed is not None else cfg.seed
    rows = monte_carlo(cfg, args.obstacles, args.trials, seed=seed, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    table = {
        "scenario": cfg.name,
        "trials": args.trials,
        "seed": seed,
        "rows": [
            {k: r[k] for k in ("n_obstacles", "percent_safe", "percent_successful", "outcomes")} for r in rows
        ],
    }
    box = {
        "scenario": cfg.name,
        "trials": args.trials,
        "seed": seed,
        "rows": [
            {k: r[k] for k in ("n_obstacles", "percent_safe", "percent_successful", "boxstats")} for r in rows
        ],
    }
    _write_json(args.out / "table2.json", json_safe(table))
    _write_json(args.out / "boxstats.json", json_safe(box))
    for r in rows:
        print(f"obstacles={r['n_obstacles']:3d} safe={r['percent_safe']:6.2f}% successful={r['percent_successful']:6.2f}%")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.suite, args.seed)
    for res in results:
        print(res.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_INPUT


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    handler = {"run": cmd_run, "montecarlo": cmd_montecarlo, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
    except (ConfigError, WorldError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
