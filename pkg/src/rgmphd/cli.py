"""``track`` command line: Monte Carlo runs, scenario replay and offline OSPA.

Exit codes: 0 success, 2 invalid config or arguments, 3 runtime failure
(including any failed Monte Carlo run). ``TRACK_OUT`` overrides the output
directory when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ParseError, TrackingError, ValidationError
from .harness import (FILTERS, ExperimentConfig, emit_results, load_config, load_estimates, replay,
                      run_monte_carlo, steps_csv, with_overrides)
from .metrics import OspaConfig, ospa
from .scenarios import KINDS, load_scenario

log = logging.getLogger("track")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _filters(text: str) -> tuple:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in FILTERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"filters must be a comma list drawn from {', '.join(FILTERS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="track", description="GM-PHD tracking benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="Monte Carlo benchmark")
    r.add_argument("--config", type=Path, help="TOML or JSON experiment config")
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--scenario", choices=KINDS)
    r.add_argument("--filters", type=_filters, help="comma list, e.g. standard,robust")
    r.add_argument("--out", type=Path)
    r.add_argument("--workers", type=int)
    r.add_argument("--duration", type=int)
    r.add_argument("--no-timing", action="store_true", help="write runtime_ms as 0 for byte-stable output")
    r.add_argument("--dump", action="store_true", help="also write scenario and estimate JSONL files")

    rp = sub.add_parser("replay", help="run one filter over a scenario dump")
    rp.add_argument("--dump", type=Path, required=True)
    rp.add_argument("--filter", choices=FILTERS, required=True)
    rp.add_argument("--config", type=Path)
    rp.add_argument("--out", type=Path, help="CSV destination (default stdout)")
    rp.add_argument("--no-timing", action="store_true")

    o = sub.add_parser("ospa", help="per-step OSPA of an estimate file against a scenario dump")
    o.add_argument("--truth", type=Path, required=True)
    o.add_argument("--est", type=Path, required=True)
    o.add_argument("--cutoff", type=float, default=100.0)
    o.add_argument("--order", type=float, default=1.0)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    kw = {}
    for name in ("runs", "seed", "workers", "filters", "duration"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "scenario", None):
        kw["kind"] = args.scenario
    if getattr(args, "no_timing", False):
        kw["timing"] = False
    try:
        return with_overrides(cfg, **kw)
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError("arguments", str(exc)) from None


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or os.environ.get("TRACK_OUT") or cfg.out
    records, report = run_monte_carlo(cfg, dump_dir=Path(out) if args.dump else None)
    paths = emit_results(records, report, out, cfg.filters)
    for name, s in report.filters.items():
        log.info("%s: OSPA %.3f +- %.3f, mu_N %.3f, sigma_N %.3f, %.2f ms/step, failed %d",
                 name, s.ospa_mean, s.ospa_std, s.mu_n, s.sigma_n, s.runtime_ms, s.runs_failed)
    print(paths["steps"])
    failed = [r for r in records if r.failed]
    for r in failed:
        log.error("run %d filter %s failed: %s", r.run, r.filter, r.error)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    rec, _ = replay(args.dump, args.filter, cfg)
    text = steps_csv([rec])
    if args.out:
        args.out.write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
    if rec.failed:
        log.error("replay failed: %s", rec.error)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_ospa(args) -> int:
    cfg = OspaConfig(args.cutoff, args.order)
    truth, _ = load_scenario(args.truth)
    est = load_estimates(args.est)
    X = truth.state_arrays()
    if len(X) != len(est):
        raise ValidationError("est", f"{len(X)} steps to match the truth file")
    print("step,ospa")
    for k, (x, y) in enumerate(zip(X, est), 1):
        print(f"{k},{ospa(x, y, cfg)!r}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "replay": cmd_replay, "ospa": cmd_ospa}[args.command]
    try:
        return handler(args)
    except (ParseError, ValidationError) as exc:
        print(f"track: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrackingError, OSError, ValueError) as exc:
        print(f"track: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
