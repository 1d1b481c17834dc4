"""Named experiment grids with their pass/fail assertions.

Each suite expands to a list of (labels, config) cells, runs every cell,
writes ``<suite>.csv`` with one row per cell and checks trend assertions on
the aggregated rows. Cells are independent simulations, so they can run in a
process pool.
"""

from __future__ import annotations

import time
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checks import burst_gaps, is_unimodal
from .config import FailureSpec, SimConfig
from .report import run_row, write_csv, write_json
from .scenarios import isolation_scenarios, long_running
from .sim import SimReport, run
from .txn import IsolationLevel
from .workload import PRESETS, WorkloadSpec


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"suite {self.name}: {'PASS' if self.ok else 'FAIL'} ({len(self.rows)} rows, {self.wall_s:.1f}s)"]
        lines += [f"  [{'PASS' if c.ok else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"suite": self.name, "ok": self.ok, "wall_s": round(self.wall_s, 2),
                "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks]}


# -- cell execution ----------------------------------------------------------

def _run_cell(cell) -> tuple[dict, SimReport]:
    labels, cfg = cell
    t0 = time.perf_counter()
    rep = run(cfg)
    row = dict(labels)
    row.update(run_row(rep))
    row["resume_ms_max"] = round(max(rep.resume_ms), 3) if rep.resume_ms else ""
    row["views"] = len(rep.views)
    row["outbound_nonempty"] = rep.outbound_nonempty
    row["wall_s"] = round(time.perf_counter() - t0, 2)
    return row, rep


def run_cells(cells: list, parallel: bool = False, workers: Optional[int] = None) -> list:
    if parallel and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def _mean_by(rows: list, key: str, metric: str) -> dict:
    acc = defaultdict(list)
    for r in rows:
        acc[r[key]].append(float(r[metric]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


# -- suites ------------------------------------------------------------------------

def _topology(n: int, index: int) -> tuple:
    rng = np.random.default_rng(1000 + 17 * index + n)
    m = rng.uniform(10.0, 50.0, (n, n))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    return tuple(tuple(round(float(x), 3) for x in row) for row in m)


CONVERGENCE_TOPOLOGIES = (3, 5, 9)


def convergence(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = []
    for ti, n in enumerate(CONVERGENCE_TOPOLOGIES):
        delay = _topology(n, ti)
        for s in seeds:
            cfg = SimConfig(n_nodes=n, delay_ms=delay, jitter_ms=5.0, reorder_window=5, reorder_step_ms=1.0,
                            duplicate_prob=0.05, drop_prob=0.01, skew_ms=10.0, duration_ms=1500.0,
                            warmup_ms=300.0, seed=s, workload=PRESETS["YCSB-MC"], check_oracle=True)
            cells.append(({"cell": "adversarial", "topology": f"t{ti}-n{n}"}, cfg))
    for s in seeds:
        cfg = SimConfig(n_nodes=3, duration_ms=1000.0, warmup_ms=200.0, seed=s, workload=PRESETS["YCSB-RO"],
                        jitter_ms=5.0, reorder_window=5, duplicate_prob=0.05)
        cells.append(({"cell": "read_only", "topology": "uniform-n3"}, cfg))
    out = run_cells(cells, parallel)
    res = SuiteResult("convergence", [r for r, _ in out])
    adv = [(r, rep) for r, rep in out if r["cell"] == "adversarial"]
    bad = [f"{r['topology']}/seed{r['seed']}" for r, rep in adv
           if not rep.convergence["ok"] or rep.convergence["epochs_checked"] == 0]
    res.checks.append(Check("fingerprints_identical", not bad and bool(adv),
                            f"{len(adv) - len(bad)}/{len(adv)} runs converged" + (f"; failed {bad}" if bad else "")))
    mism = sum(rep.oracle_mismatches for _, rep in adv)
    checked = sum(rep.oracle_checked for _, rep in adv)
    res.checks.append(Check("oracle_agrees", mism == 0 and checked > 0, f"{mism} mismatches over {checked} epochs"))
    ro = [rep for r, rep in out if r["cell"] == "read_only"]
    nonempty = sum(rep.outbound_nonempty for rep in ro)
    changed = sum(1 for rep in ro for seq in rep.fingerprints.values()
                  for _, d in seq if d != rep.initial_fingerprint)
    res.checks.append(Check("read_only_batches_empty", nonempty == 0 and all(rep.outbound_batches for rep in ro),
                            f"{nonempty} non-empty of {sum(rep.outbound_batches for rep in ro)} batches"))
    res.checks.append(Check("read_only_state_unchanged", changed == 0,
                            f"{changed} snapshots differ from the initial state"))
    return res


def isolation(seeds: list, parallel: bool = False) -> SuiteResult:
    res = SuiteResult("isolation")
    for sc in isolation_scenarios():
        res.rows.append({"scenario": sc.name, "level": sc.level, "expected": sc.expected, "got": sc.got,
                         "ok": sc.ok})
        res.checks.append(Check(f"{sc.name}/{sc.level}", sc.ok, f"expected {sc.expected}, got {sc.got}"))
    for lvl in IsolationLevel:
        lt, short, span, short_at = long_running(lvl)
        ok = lt == "committed" and short == "committed" and span == 2 and short_at == 1
        res.rows.append({"scenario": "long_running", "level": lvl.value, "expected": "committed/committed",
                         "got": f"{lt}/{short}", "ok": ok})
        res.checks.append(Check(f"long_running/{lvl.value}", ok,
                                f"long {lt} over {span} epochs, short {short} by snapshot {short_at}"))
    return res


EPOCH_LENGTHS = (1, 2, 5, 10, 20, 50, 100, 200)


def epoch_sweep(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = [({"epoch": e}, SimConfig(n_nodes=3, delay_ms=30.0, epoch_ms=float(e), duration_ms=3000.0,
                                      warmup_ms=500.0, seed=s))
             for e in EPOCH_LENGTHS for s in seeds]
    out = run_cells(cells, parallel)
    res = SuiteResult("epoch-sweep", [r for r, _ in out])
    tput = _mean_by(res.rows, "epoch", "throughput")
    lat = _mean_by(res.rows, "epoch", "latency_mean_ms")
    lag = _mean_by(res.rows, "epoch", "lag_mean")
    ts = [tput[e] for e in EPOCH_LENGTHS]
    k = int(np.argmax(ts))
    res.checks.append(Check("throughput_unimodal", is_unimodal(ts) and 0 < k < len(ts) - 1,
                            f"throughput {_fmt(ts)}, peak at {EPOCH_LENGTHS[k]} ms"))
    ratio = lat[200] / lat[10]
    res.checks.append(Check("latency_200_vs_10", ratio >= 3.0, f"{lat[200]:.1f} / {lat[10]:.1f} ms = {ratio:.2f}x"))
    window_epochs = int((3000.0 - 500.0) / 10)
    res.checks.append(Check("snapshot_lag", 3.0 <= lag[10] <= 5.0 and window_epochs >= 200,
                            f"lag {lag[10]:.2f} epochs over {window_epochs} epochs at 10 ms"))
    return res


THETAS = (0.0, 0.4, 0.8, 0.99)


def contention_sweep(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = [({"theta": th}, SimConfig(n_nodes=3, duration_ms=2000.0, warmup_ms=400.0, isolation="SI", seed=s,
                                       workload=replace(PRESETS["YCSB-HC"], zipf_theta=th)))
             for th in THETAS for s in seeds]
    out = run_cells(cells, parallel)
    res = SuiteResult("contention-sweep", [r for r, _ in out])
    ab = _mean_by(res.rows, "theta", "abort_rate")
    rates = [ab[t] for t in THETAS]
    mono = all(a <= b for a, b in zip(rates, rates[1:]))
    res.checks.append(Check("abort_rate_monotone", mono, f"abort rate {_fmt(rates)}"))
    res.checks.append(Check("abort_rate_rises", rates[-1] > rates[0], f"{rates[-1]:.4f} > {rates[0]:.4f}"))
    return res


# Enough connections that long transactions do not starve the client pool.
LONG_TXN_BASE = dict(n_nodes=3, duration_ms=4000.0, warmup_ms=1000.0, connections_per_node=256,
                     exec_us_per_op=200.0)


def long_txn(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = []
    for mode in ("geogauss", "geog_s"):
        for frac in (0.0, 0.1):
            for s in seeds:
                wl = replace(PRESETS["YCSB-MC"], long_txn_fraction=frac, long_txn_delay_ms=100.0)
                cells.append(({"variant": mode, "long_fraction": frac},
                              SimConfig(**LONG_TXN_BASE, mode=mode, seed=s, workload=wl)))
    out = run_cells(cells, parallel)
    res = SuiteResult("long-txn", [r for r, _ in out])
    tp = defaultdict(list)
    for r in res.rows:
        tp[r["variant"], r["long_fraction"]].append(r["throughput"])
    slow = {m: 1.0 - np.mean(tp[m, 0.1]) / np.mean(tp[m, 0.0]) for m in ("geogauss", "geog_s")}
    ok = slow["geogauss"] <= 0.5 * slow["geog_s"]
    res.checks.append(Check("slowdown_at_most_half", ok,
                            f"slowdown geogauss {slow['geogauss']:.3f} vs geog_s {slow['geog_s']:.3f}"))
    return res


def breakdown(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = [({"variant": m}, SimConfig(n_nodes=3, duration_ms=4000.0, warmup_ms=1000.0, mode=m, seed=s,
                                        workload=PRESETS["YCSB-MC"]))
             for m in ("geogauss", "geog_s", "geog_a") for s in seeds]
    out = run_cells(cells, parallel)
    res = SuiteResult("breakdown", [r for r, _ in out])
    by = defaultdict(list)
    for r, rep in out:
        by[r["variant"]].append(rep)
    for r, rep in out:
        c = rep.per_epoch["commits"]
        r["nonzero_epochs"] = round(sum(1 for x in c if x) / len(c), 4) if c else 0.0
        g = burst_gaps(c)
        r["min_gap"] = min(g) if g else ""
        r["transactional"] = r["variant"] != "geog_a"
    gaps = [g for rep in by["geog_s"] for g in burst_gaps(rep.per_epoch["commits"])]
    res.checks.append(Check("geog_s_bursts", bool(gaps) and min(gaps) >= 2,
                            f"gap lengths {sorted(Counter(gaps).items())}"))
    frac = [sum(1 for x in rep.per_epoch["commits"] if x) / len(rep.per_epoch["commits"]) for rep in by["geogauss"]]
    res.checks.append(Check("geogauss_every_epoch", min(frac) > 0.9, f"nonzero epoch fraction {_fmt(frac)}"))
    wait = {m: float(np.mean([rep.breakdown_ms.get("wait", 0.0) for rep in by[m]])) for m in ("geogauss", "geog_s")}
    ratio = wait["geog_s"] / wait["geogauss"] if wait["geogauss"] else float("inf")
    res.checks.append(Check("wait_ratio", ratio >= 5.0,
                            f"wait {wait['geog_s']:.1f} / {wait['geogauss']:.1f} ms = {ratio:.1f}x"))
    conv = all(rep.convergence["ok"] for reps in by.values() for rep in reps)
    res.checks.append(Check("all_modes_converge", conv, "snapshot or final-state agreement"))
    tp = {m: float(np.mean([rep.throughput for rep in by[m]])) for m in by}
    res.checks.append(Check("throughput_ordering", tp["geog_a"] >= tp["geogauss"] > tp["geog_s"],
                            ", ".join(f"{m} {tp[m]:.0f}" for m in ("geog_a", "geogauss", "geog_s"))))
    # read-only transactions still finish locally; writes only get an acceptance
    acc = all(rep.aborted == 0 and rep.accepted > 0 for rep in by["geog_a"])
    res.checks.append(Check("geog_a_no_aborts", acc, "writes are accepted, never validated or aborted"))
    return res


FAULT_BASE = dict(n_nodes=3, duration_ms=1600.0, warmup_ms=200.0, connections_per_node=16,
                  workload=WorkloadSpec(table_rows=10_000), check_oracle=True)
BACKUP_MODES = ("local_backup", "remote_backup", "quorum_ack")


def fault_scenarios(seed: int) -> list[tuple[str, dict]]:
    """Scripted crash scenarios; the crash time and victim vary with the seed."""
    at = 600.0 + 3.3 * (seed % 7)
    victim = 1 + seed % 2
    survivor = 0
    adversarial = dict(jitter_ms=5.0, reorder_window=5, reorder_step_ms=1.0, duplicate_prob=0.05)
    return [
        ("crash_mid_epoch", dict(failures=(FailureSpec(victim, at),))),
        ("crash_at_boundary", dict(failures=(FailureSpec(victim, 600.0 + 10.0 * (seed % 5)),))),
        ("partial_delivery", dict(failures=(FailureSpec(victim, at, lose_outbound_ms=25.0,
                                                        deliver_to=(survivor,)),))),
        ("no_delivery", dict(failures=(FailureSpec(victim, at, lose_outbound_ms=40.0),))),
        ("recover_before_timeout", dict(failures=(FailureSpec(victim, at, recover_at_ms=at + 200.0),))),
        ("rejoin", dict(failures=(FailureSpec(victim, at, recover_at_ms=1200.0),))),
        ("adversarial_links", dict(failures=(FailureSpec(victim, at, lose_outbound_ms=25.0,
                                                         deliver_to=(survivor,)),), **adversarial)),
    ]


def fault(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = []
    for s in seeds:
        for name, kw in fault_scenarios(s):
            for ft in BACKUP_MODES:
                cells.append(({"cell": "crash", "scenario": name},
                              SimConfig(**{**FAULT_BASE, **kw}, fault_tolerance=ft, seed=s)))
        for ft in ("none",) + BACKUP_MODES:
            cells.append(({"cell": "latency", "scenario": "no_crash"},
                          SimConfig(**FAULT_BASE, fault_tolerance=ft, seed=s)))
        # a region outage takes the local backup with it; the loss must be reported
        cells.append(({"cell": "region_loss", "scenario": "region_crash"},
                      SimConfig(**FAULT_BASE, fault_tolerance="local_backup", seed=s,
                                failures=(FailureSpec(1, 603.3, region=True, lose_outbound_ms=40.0),))))
    out = run_cells(cells, parallel)
    res = SuiteResult("fault", [r for r, _ in out])
    crash = [(r, rep) for r, rep in out if r["cell"] == "crash"]
    missing = [f"{r['scenario']}/{r['fault_tolerance']}/seed{r['seed']}" for r, rep in crash
               if rep.missing_commits or rep.data_lost or not rep.convergence["ok"] or rep.oracle_mismatches]
    n_scen = len({(r["scenario"], r["fault_tolerance"]) for r, _ in crash})
    res.checks.append(Check("no_committed_txn_lost", not missing and n_scen >= 20,
                            f"{len(crash) - len(missing)}/{len(crash)} runs clean over {n_scen} scenarios"
                            + (f"; failed {missing[:5]}" if missing else "")))
    lat = defaultdict(list)
    for r, rep in out:
        if r["cell"] == "latency":
            lat[r["fault_tolerance"]].append(rep.commit_latency_mean_ms)
    m = {k: float(np.mean(v)) for k, v in lat.items()}
    ok = m["none"] <= m["local_backup"] < m["remote_backup"] < m["quorum_ack"]
    res.checks.append(Check("latency_ordering", ok, ", ".join(f"{k} {m[k]:.2f}" for k in ("none",) + BACKUP_MODES)))
    limit = SimConfig().membership_timeout_ms + SimConfig().epoch_ms
    resumes = [x for r, rep in crash if len(rep.views) > 1 for x in rep.resume_ms]
    expect_views = [r for r, rep in crash if r["scenario"] != "recover_before_timeout"]
    got_views = [r for r, rep in crash if r["scenario"] != "recover_before_timeout" and rep.resume_ms]
    ok = bool(resumes) and max(resumes) <= limit and len(got_views) == len(expect_views)
    res.checks.append(Check("resume_within_timeout", ok,
                            f"max resume {max(resumes) if resumes else float('nan'):.2f} ms <= {limit:.0f} ms "
                            f"in {len(got_views)}/{len(expect_views)} runs"))
    stay = [rep for r, rep in crash if r["scenario"] == "recover_before_timeout"]
    res.checks.append(Check("short_outage_keeps_view", all(len(rep.views) == 1 for rep in stay),
                            "recovery inside the timeout causes no view change"))
    region = [rep for r, rep in out if r["cell"] == "region_loss"]
    res.checks.append(Check("region_loss_flagged", all(rep.data_lost for rep in region),
                            "losing a region with its local backup is reported as data loss"))
    return res


SCALE_NODES = (3, 5, 7, 9)


def scalability(seeds: list, parallel: bool = False) -> SuiteResult:
    cells = [({"nodes": n}, SimConfig(n_nodes=n, duration_ms=1500.0, warmup_ms=300.0, seed=s,
                                      workload=PRESETS["YCSB-MC"]))
             for n in SCALE_NODES for s in seeds]
    out = run_cells(cells, parallel)
    res = SuiteResult("scalability", [r for r, _ in out])
    tp = _mean_by(res.rows, "nodes", "throughput")
    ts = [tp[n] for n in SCALE_NODES]
    res.checks.append(Check("throughput_grows", all(a < b for a, b in zip(ts, ts[1:])), f"throughput {_fmt(ts)}"))
    res.checks.append(Check("converged", all(rep.convergence["ok"] for _, rep in out), "all node counts"))
    return res


SUITES: dict[str, Callable] = {
    "convergence": convergence,
    "isolation": isolation,
    "epoch-sweep": epoch_sweep,
    "contention-sweep": contention_sweep,
    "long-txn": long_txn,
    "breakdown": breakdown,
    "fault": fault,
    "scalability": scalability,
}

DEFAULT_SEEDS = {"convergence": 5, "fault": 5}


def run_suite(name: str, seeds: Optional[int] = None, out: Optional[Path] = None,
              parallel: bool = False) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    k = seeds if seeds is not None else DEFAULT_SEEDS.get(name, 1)
    if k < 1:
        raise ValueError("seeds must be at least 1")
    t0 = time.perf_counter()
    res = SUITES[name](list(range(k)), parallel)
    res.wall_s = time.perf_counter() - t0
    if out is not None:
        out = Path(out)
        write_csv(out / f"{name}.csv", res.rows)
        write_json(out / f"{name}_summary.json", res.to_dict())
    return res
