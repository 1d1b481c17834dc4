import random

import pytest
from hypothesis import given, settings, strategies as st

from epochrep.core import Csn, OpKind, TxnMeta, WriteRecord
from epochrep.merge import (ProtocolViolation, RecordResult, delta_crdt_merge, lww_merge, merge_insert,
                            pre_write)
from epochrep.storage import RowHeader, Store, TempInsertTable

from support import engine_winners, headers, merge_all, partitions, random_epoch

A, B = 0, 1


def hdr(sen, t, node, cen):
    return RowHeader(sen, Csn(t, node), cen)


def meta(sen, t, node, cen):
    return TxnMeta(sen, 0, Csn(t, node), cen)


class TestPreWrite:
    def test_older_epoch_header_is_taken(self):
        h = hdr(1, 4, A, 2)
        assert pre_write(h, meta(3, 7, B, 3))
        assert h.as_tuple() == (3, Csn(7, B), 3, 0)

    def test_first_write_wins(self):
        h = hdr(2, 4, A, 3)
        assert pre_write(h, meta(2, 2, B, 3))
        h = hdr(2, 2, B, 3)
        assert not pre_write(h, meta(2, 4, A, 3))
        assert h.csn == Csn(2, B)

    def test_shorter_transaction_wins(self):
        h = hdr(1, 4, A, 3)
        assert pre_write(h, meta(2, 9, B, 3))
        h = hdr(2, 9, B, 3)
        assert not pre_write(h, meta(1, 4, A, 3))

    def test_redelivery_is_displaced_and_harmless(self):
        h = hdr(1, 1, A, 1)
        mt = meta(2, 5, A, 3)
        assert pre_write(h, mt)
        before = h.as_tuple()
        assert not pre_write(h, mt)
        assert h.as_tuple() == before

    def test_header_ahead_is_a_protocol_violation(self):
        with pytest.raises(ProtocolViolation):
            pre_write(hdr(1, 1, A, 5), meta(2, 3, B, 4))


class TestMergeRecords:
    def test_update_of_absent_key(self):
        out = delta_crdt_merge(meta(1, 1, A, 1), [WriteRecord(b"x", OpKind.UPDATE, b"v")], Store())
        assert out.results[b"x"] is RecordResult.ROW_DELETED and out.row_deleted

    def test_insert_race(self):
        temp = TempInsertTable()
        m1, m2 = meta(2, 3, A, 2), meta(2, 5, B, 2)
        assert merge_insert(m2, b"n", temp) is RecordResult.PRE_WRITTEN
        assert merge_insert(m1, b"n", temp) is RecordResult.PRE_WRITTEN
        assert merge_insert(m2, b"n", temp) is RecordResult.DISPLACED
        assert temp.get(b"n").header.csn == m1.csn

    def test_insert_redelivery(self):
        temp = TempInsertTable()
        mt = meta(1, 1, A, 1)
        merge_insert(mt, b"n", temp)
        before = temp.get(b"n").header.as_tuple()
        merge_insert(mt, b"n", temp)
        assert temp.get(b"n").header.as_tuple() == before and len(temp) == 1

    def test_losing_update_still_prewrites_other_keys(self):
        s = Store()
        s.preload([(b"x", b"0"), (b"y", b"0")])
        winner = meta(2, 1, A, 2)
        loser = meta(2, 5, B, 2)
        delta_crdt_merge(winner, [WriteRecord(b"x", OpKind.UPDATE)], s)
        out = delta_crdt_merge(loser, [WriteRecord(b"x", OpKind.UPDATE), WriteRecord(b"y", OpKind.UPDATE)], s)
        assert out.aborted and out.displaced_by[b"x"] == winner.csn
        assert s.find_row(b"y").header.csn == loser.csn


def test_lww_is_order_free():
    rng = random.Random(3)
    for _ in range(50):
        base, ups = random_epoch(rng, 20, 6)
        results = set()
        for _ in range(5):
            s = base.copy()
            order = list(ups)
            rng.shuffle(order)
            for mt, ws in order:
                lww_merge(mt, ws, s)
            results.add(s.fingerprint())
        assert len(results) == 1


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=300)
@given(seeds)
def test_commutative_pairwise_swap(seed):
    rng = random.Random(seed)
    store, ups = random_epoch(rng, 20, 8)
    if len(ups) < 2:
        return
    i = rng.randrange(len(ups) - 1)
    swapped = ups[:i] + [ups[i + 1], ups[i]] + ups[i + 2:]
    a, b = merge_all(store, ups), merge_all(store, swapped)
    assert headers(a) == headers(b)
    assert engine_winners(a, ups) == engine_winners(b, ups)


@settings(max_examples=300)
@given(seeds)
def test_associative_partition_invariance(seed):
    rng = random.Random(seed)
    store, ups = random_epoch(rng, 20, 8)
    whole = merge_all(store, ups)
    parts = partitions(rng, ups)
    rng.shuffle(parts)
    s = store.copy()
    for part in parts:
        s = merge_all(s, part)
    assert headers(s) == headers(whole)


@settings(max_examples=300)
@given(seeds)
def test_idempotent_replay(seed):
    rng = random.Random(seed)
    store, ups = random_epoch(rng, 20, 8)
    once = merge_all(store, ups)
    again = merge_all(once, [rng.choice(ups) for _ in range(len(ups))])
    assert headers(again) == headers(once)


@settings(max_examples=200)
@given(seeds)
def test_header_epoch_never_decreases(seed):
    rng = random.Random(seed)
    store, ups = random_epoch(rng, 20, 8)
    s = store.copy()
    prev = {r.key: r.header.cen for r in s.rows()}
    for mt, ws in ups:
        delta_crdt_merge(mt, ws, s)
        for r in s.rows():
            assert r.header.cen >= prev[r.key]
            prev[r.key] = r.header.cen
