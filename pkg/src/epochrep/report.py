"""CSV and JSON output for runs and suites."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

# Columns written by ``bench run`` (one row per run).
RUN_COLUMNS = [
    "seed", "n_nodes", "mode", "isolation", "fault_tolerance", "epoch_ms",
    "committed", "aborted", "accepted", "failed", "throughput", "abort_rate",
    "latency_mean_ms", "latency_median_ms", "latency_p99_ms", "commit_latency_mean_ms",
    "write_latency_mean_ms", "lag_mean", "wan_bytes_per_txn", "execute_ms", "wait_ms", "merge_ms", "parse_ms", "log_ms",
    "converged", "oracle_mismatches", "missing_commits", "data_lost",
]


def run_row(report) -> dict:
    cfg = report.config
    b = report.breakdown_ms
    return {
        "seed": cfg["seed"], "n_nodes": cfg["n_nodes"], "mode": cfg["mode"],
        "isolation": cfg["isolation"], "fault_tolerance": cfg["fault_tolerance"],
        "epoch_ms": cfg["epoch_ms"], "committed": report.committed, "aborted": report.aborted,
        "accepted": report.accepted, "failed": report.failed,
        "throughput": round(report.throughput, 3), "abort_rate": round(report.abort_rate, 6),
        "latency_mean_ms": round(report.latency_mean_ms, 4),
        "latency_median_ms": round(report.latency_median_ms, 4),
        "latency_p99_ms": round(report.latency_p99_ms, 4),
        "commit_latency_mean_ms": round(report.commit_latency_mean_ms, 4),
        "write_latency_mean_ms": round(report.write_latency_mean_ms, 4),
        "lag_mean": round(report.lag_mean, 4), "wan_bytes_per_txn": round(report.wan_bytes_per_txn, 2),
        "execute_ms": round(b.get("execute", 0.0), 4), "wait_ms": round(b.get("wait", 0.0), 4),
        "merge_ms": round(b.get("merge", 0.0), 4), "parse_ms": round(b.get("parse", 0.0), 4),
        "log_ms": round(b.get("log", 0.0), 4),
        "converged": report.convergence.get("ok"), "oracle_mismatches": report.oracle_mismatches,
        "missing_commits": report.missing_commits, "data_lost": report.data_lost,
    }


def write_csv(path: Path, rows: list[dict], columns: Iterable[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(columns) if columns else _columns(rows)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def _columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def write_epoch_csv(path: Path, report) -> Path:
    pe = report.per_epoch
    first = pe.get("first", 1)
    rows = [{"epoch": first + i, "commits": c, "aborts": a, "commits_by_cen": b}
            for i, (c, a, b) in enumerate(zip(pe.get("commits", []), pe.get("aborts", []),
                                               pe.get("commits_by_cen", [])))]
    return write_csv(path, rows, ["epoch", "commits", "aborts", "commits_by_cen"])


def write_fingerprints(path: Path, report) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        for node in sorted(report.fingerprints, key=int):
            for epoch, digest in report.fingerprints[node]:
                f.write(f"{node},{epoch},{digest}\n")
    return path


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
    return path
