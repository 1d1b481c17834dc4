"""``bench``: run one simulation, a named suite, or re-check a recorded trace."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checks import check_convergence
from .config import ConfigError, SimConfig, load_config
from .report import RUN_COLUMNS, run_row, write_csv, write_epoch_csv, write_fingerprints, write_json
from .sim import run
from .suites import SUITES, run_suite


def _run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
        cfg = cfg.with_(seed=args.seed, trace=args.trace or cfg.trace)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rep = run(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "run.csv", [run_row(rep)], RUN_COLUMNS)
    write_epoch_csv(out / "epochs.csv", rep)
    write_fingerprints(out / "fingerprints.log", rep)
    (out / "summary.json").write_text(rep.to_json())
    if cfg.trace:
        write_json(out / "trace.json", rep.trace_dict())
    ok = rep.convergence.get("ok") and rep.oracle_mismatches == 0
    print(f"{rep.throughput:.1f} txn/s, abort rate {rep.abort_rate:.4f}, "
          f"mean latency {rep.latency_mean_ms:.2f} ms, {rep.convergence.get('message')}")
    if cfg.execution_mode.value == "geog_a":
        print("note: asynchronous mode reports acceptance only (non-transactional)")
    return 0 if ok else 1


def _run_suite(args) -> int:
    res = run_suite(args.name, seeds=args.seeds, out=Path(args.out), parallel=args.parallel)
    print(res.summary())
    return 0 if res.ok else 1


def _check(args) -> int:
    """Replay the trace's config and compare events and snapshots; then re-check convergence."""
    try:
        data = json.loads(Path(args.trace).read_text())
        cfg = SimConfig.from_dict(data["config"])
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        print(f"error: unreadable trace: {exc}", file=sys.stderr)
        return 2
    fps = {int(n): [tuple(x) for x in seq] for n, seq in data["fingerprints"].items()}
    conv = check_convergence(fps)
    print(f"recorded run: {conv}")
    ok = conv.ok
    if not args.no_replay:
        rep = run(cfg.with_(trace=True))
        same_events = rep.trace_digest() == data.get("event_digest")
        same_fps = {int(n): [tuple(x) for x in seq] for n, seq in rep.fingerprints.items()} == fps
        print(f"replay: events {'identical' if same_events else 'DIFFER'}, "
              f"snapshots {'identical' if same_fps else 'DIFFER'}")
        ok = ok and same_events and same_fps
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("--config", help="YAML config file (defaults are used when omitted)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="out")
    r.add_argument("--trace", action="store_true", help="also write trace.json for replay")
    r.set_defaults(fn=_run)

    s = sub.add_parser("run-suite", help="run a named experiment grid")
    s.add_argument("name", choices=sorted(SUITES))
    s.add_argument("--seeds", type=int, default=None)
    s.add_argument("--out", default="out")
    s.add_argument("--parallel", action="store_true", help="run cells in a process pool")
    s.set_defaults(fn=_run_suite)

    c = sub.add_parser("check", help="re-check a trace written by run --trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--no-replay", action="store_true", help="only check the recorded fingerprints")
    c.set_defaults(fn=_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
