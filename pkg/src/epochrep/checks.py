"""Independent checkers: a brute-force winner oracle and replica convergence.

Nothing here imports the merge module; the oracle re-derives the update order
from its definition so that agreement with the engine means something.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

INSERT = 1


def _beats(a, b) -> bool:
    """Direct evaluation of the order: larger sen first, then smaller csn."""
    if a.sen > b.sen:
        return True
    if a.sen < b.sen:
        return False
    at, an = a.csn
    bt, bn = b.csn
    return at < bt or (at == bt and an < bn)


def oracle_epoch_winners(live_keys, updates) -> dict:
    """Winner csn per key for one epoch's updates.

    ``live_keys`` holds the keys present in the store before the epoch (any
    container with ``in``). ``updates`` is an iterable of ``(meta, ws)``
    with distinct csns. Writers of a live key all compete; for an absent key
    only inserts compete, and updates or deletes of it have no winner.
    """
    writers = defaultdict(list)
    cen = None
    for meta, ws in updates:
        if cen is None:
            cen = meta.cen
        elif meta.cen != cen:
            raise ValueError("all updates must share one commit epoch")
        for rec in ws:
            writers[rec.key].append((meta, int(rec.op_kind)))
    winners = {}
    for key, ws in writers.items():
        if key in live_keys:
            cands = [m for m, _ in ws]
        else:
            cands = [m for m, op in ws if op == INSERT]
        if not cands:
            continue
        best = cands[0]
        for m in cands[1:]:
            if _beats(m, best):
                best = m
        winners[key] = best.csn
    return winners


def oracle_committed(live_keys, updates) -> set:
    """Csns of transactions that win every key they write."""
    updates = list(updates)
    winners = oracle_epoch_winners(live_keys, updates)
    return {meta.csn for meta, ws in updates
            if all(winners.get(rec.key) == meta.csn for rec in ws)}


@dataclass
class ConvergenceReport:
    ok: bool
    epochs_checked: int = 0
    first_divergent_epoch: Optional[int] = None
    differing_nodes: list = field(default_factory=list)
    differing_keys: list = field(default_factory=list)
    message: str = ""

    def __str__(self):
        if self.ok:
            return f"converged over {self.epochs_checked} snapshots"
        return (f"divergence at epoch {self.first_divergent_epoch} between nodes "
                f"{self.differing_nodes}: {self.message}")


def check_convergence(fingerprints: Mapping[int, Iterable], commit_logs: Optional[Mapping] = None,
                      stores: Optional[Mapping] = None) -> ConvergenceReport:
    """Compare per-epoch snapshot fingerprints across nodes.

    ``fingerprints`` maps node id to ``[(epoch, digest), ...]``. Every epoch
    present on more than one node must carry the same digest. Optional
    ``commit_logs`` (node -> {epoch: [csn, ...]}) must agree as sequences of
    winner sets per epoch. ``stores`` (node -> Store) is only used to list
    differing keys in the report.
    """
    per_epoch = defaultdict(dict)
    for node, seq in fingerprints.items():
        last = None
        for epoch, digest in seq:
            if last is not None and epoch != last + 1:
                return ConvergenceReport(False, 0, epoch, [node], message=f"snapshot gap after {last}")
            last = epoch
            per_epoch[epoch][node] = digest
    checked = 0
    for epoch in sorted(per_epoch):
        digs = per_epoch[epoch]
        if len(digs) > 1:
            checked += 1
            if len(set(digs.values())) > 1:
                nodes = sorted(digs)
                keys = _diff_keys(stores, nodes) if stores else []
                return ConvergenceReport(False, checked, epoch, nodes, keys,
                                         "fingerprints differ: " + ", ".join(f"{n}={digs[n][:12]}" for n in nodes))
    if commit_logs:
        nodes = sorted(commit_logs)
        common = None
        for n in nodes:
            s = set(commit_logs[n])
            common = s if common is None else common & s
        for epoch in sorted(common or ()):
            sets = {n: frozenset(map(tuple, commit_logs[n][epoch])) for n in nodes}
            if len(set(sets.values())) > 1:
                return ConvergenceReport(False, checked, epoch, nodes, message="commit logs differ")
    return ConvergenceReport(True, checked)


def _diff_keys(stores, nodes, limit: int = 20) -> list:
    a = stores.get(nodes[0])
    out = []
    for n in nodes[1:]:
        b = stores.get(n)
        if a is None or b is None:
            continue
        ka, kb = {r.key: r.data for r in a.rows()}, {r.key: r.data for r in b.rows()}
        for k in sorted(set(ka) | set(kb)):
            if ka.get(k) != kb.get(k):
                out.append(k)
                if len(out) >= limit:
                    return out
    return out


def burst_gaps(counts: list[int]) -> list[int]:
    """Lengths of the zero runs strictly between nonzero runs of ``counts``."""
    gaps, run, seen = [], 0, False
    for c in counts:
        if c:
            if seen and run:
                gaps.append(run)
            seen, run = True, 0
        else:
            run += 1
    return gaps


def is_unimodal(values: list[float]) -> bool:
    """Nondecreasing up to the maximum and nonincreasing after it."""
    if not values:
        return False
    k = max(range(len(values)), key=values.__getitem__)
    return (all(values[i] <= values[i + 1] for i in range(k))
            and all(values[i] >= values[i + 1] for i in range(k, len(values) - 1)))
