"""Shared generators for merge and oracle tests."""

from __future__ import annotations

import random

from epochrep.core import Csn, OpKind, TxnMeta, WriteRecord
from epochrep.merge import delta_crdt_merge, owns_all
from epochrep.storage import Store

CEN = 6


def random_epoch(rng: random.Random, max_updates: int = 50, max_keys: int = 20):
    """A random initial store plus a set of same-cen updates with distinct csns."""
    n_keys = rng.randint(1, max_keys)
    keys = [b"key%02d" % i for i in range(n_keys)]
    live = [k for k in keys if rng.random() < 0.7]
    store = Store()
    store.preload((k, b"v0") for k in live)
    for k in live:
        h = store.find_row(k).header
        h.cen = rng.randint(0, CEN - 1)
    csns = rng.sample(range(1, 400), rng.randint(1, max_updates))
    updates = []
    for t in csns:
        sen = rng.randint(CEN - 3, CEN)
        meta = TxnMeta(sen, rng.randint(sen - 2, sen), Csn(t, rng.randint(0, 4)), CEN)
        ws = []
        for k in sorted(rng.sample(keys, rng.randint(1, min(4, n_keys)))):
            if k in live:
                kind = rng.choice([OpKind.UPDATE, OpKind.UPDATE, OpKind.DELETE, OpKind.INSERT])
            else:
                kind = OpKind.INSERT if rng.random() < 0.85 else OpKind.UPDATE
            ws.append(WriteRecord(k, kind, b"%d" % t))
        updates.append((meta, tuple(ws)))
    return store, updates


def merge_all(store: Store, sequence) -> Store:
    s = store.copy()
    for meta, ws in sequence:
        delta_crdt_merge(meta, ws, s)
    return s


def headers(store: Store) -> tuple:
    rows = tuple((r.key, r.header.as_tuple()) for r in store.rows())
    temp = tuple(sorted((k, e.header.as_tuple()) for k, e in store.temp.entries.items()))
    return rows, temp


def engine_winners(store: Store, updates) -> set:
    return {meta.csn for meta, ws in updates if owns_all(meta, ws, store)}


def partitions(rng: random.Random, seq: list) -> list[list]:
    """Split ``seq`` into contiguous sub-batches at random cut points."""
    if len(seq) < 2:
        return [seq]
    cuts = sorted(rng.sample(range(1, len(seq)), rng.randint(0, min(5, len(seq) - 1))))
    out, prev = [], 0
    for c in cuts + [len(seq)]:
        out.append(seq[prev:c])
        prev = c
    return out
