import pytest

from epochrep.coordinator import EpochBatch, MembershipView, Replica, Update, package_outbound
from epochrep.core import Csn, OpKind, TxnMeta, WriteRecord
from epochrep.merge import ProtocolViolation
from epochrep.storage import Store
from epochrep.txn import IsolationLevel, Op, Status, Transaction, transaction_process


def store():
    s = Store()
    s.preload([(b"x", b"0"), (b"y", b"0")])
    return s


def replica(nid=0, members=(0, 1, 2), first=0):
    return Replica(nid, store(), members, clock=lambda: 0, epoch_us=10_000, first_epoch=first)


def upd(t, node, cen, key=b"x", sen=None):
    return Update(TxnMeta(sen or cen, 0, Csn(t, node), cen), (WriteRecord(key, OpKind.UPDATE, b"v%d" % t),))


def eof(origin, cen, updates=()):
    return EpochBatch(origin, cen, tuple(updates))


def close(rep, through):
    while rep.closed_through < through:
        rep.close_epoch(rep.closed_through + 1)


class TestPackaging:
    def test_mini_batches(self):
        pending = [upd(i + 1, 0, 3) for i in range(100)]
        bs = package_outbound(0, 3, pending, 32)
        assert [len(b.updates) for b in bs] == [32, 32, 32, 4]
        assert [b.eof for b in bs] == [False, False, False, True]
        assert [b.mini_batch_seq for b in bs] == [0, 1, 2, 3]

    def test_empty_epoch_still_sends_eof(self):
        (b,) = package_outbound(0, 3, [], 32)
        assert b.eof and not b.updates

    def test_long_txn_rides_commit_epoch(self):
        now = {"t": 5_000}
        rep = Replica(0, store(), [0, 1], clock=lambda: now["t"], epoch_us=10_000)
        t = Transaction(rep.store, IsolationLevel.RC, [Op("update", b"x", b"l"), Op("update", b"y", b"l")],
                        think_us=20_000)
        gen = transaction_process(t, rep)
        next(gen)  # thinking after the first op
        now["t"] = 25_000
        early = rep.close_epoch(1) + rep.close_epoch(2)
        assert all(not b.updates for b in early)
        next(gen, None)
        (b,) = rep.close_epoch(3)
        assert [u.meta for u in b.updates] == [t.meta]
        assert (t.sen, t.cen) == (1, 3)


class TestInbound:
    def test_out_of_order_epochs(self):
        rep = replica(0, (0, 1))
        close(rep, 2)
        assert rep.on_receive(eof(1, 2, [upd(5, 1, 2)]))
        rep.step()
        assert rep.lsn == 0
        rep.on_receive(eof(1, 1, [upd(3, 1, 1)]))
        assert rep.step() == [1, 2]
        assert rep.commit_log[1] == [Csn(3, 1)] and rep.commit_log[2] == [Csn(5, 1)]

    def test_duplicate_batch_ignored(self):
        rep = replica(0, (0, 1))
        b = eof(1, 1, [upd(3, 1, 1)])
        assert rep.on_receive(b)
        assert not rep.on_receive(b)
        close(rep, 1)
        rep.step()
        assert not rep.on_receive(b)  # already in a snapshot, and csn was seen
        assert rep.commit_log[1] == [Csn(3, 1)]

    def test_empty_eof_marks_peer_done(self):
        rep = replica(0, (0, 1, 2))
        close(rep, 2)
        rep.on_receive(eof(1, 1))
        rep.on_receive(eof(2, 1))
        rep.step()
        rep.on_receive(eof(1, 2))
        b = rep.next_merge_batch()
        rep.merge_batch(b)
        assert 1 in rep.state.remote_done[2] and rep.missing_peers(2) == [2]

    def test_snapshot_after_all_eofs(self):
        rep = replica(0, (0, 1, 2), first=4)
        close(rep, 5)
        rep.on_receive(eof(1, 5))
        assert rep.step() == [] and rep.lsn == 4
        rep.on_receive(eof(2, 5))
        assert rep.step() == [5] and rep.lsn == 5

    def test_delayed_peer_stalls_then_catches_up(self):
        rep = replica(0, (0, 1, 2))
        close(rep, 5)
        for e in range(1, 6):
            rep.on_receive(eof(1, e, [upd(10 * e, 1, e)]))
            if e != 3:
                rep.on_receive(eof(2, e))
        assert rep.step() == [1, 2]
        rep.on_receive(eof(2, 3))
        assert rep.step() == [3, 4, 5]
        assert [e for e, _ in rep.snapshots] == [1, 2, 3, 4, 5]

    def test_empty_epoch_keeps_state(self):
        rep = replica(0, (0, 1))
        before = rep.store.digest_hex()
        close(rep, 1)
        rep.on_receive(eof(1, 1))
        rep.step()
        assert rep.lsn == 1 and rep.snapshots == [(1, before)]

    def test_late_unseen_update_is_a_violation(self):
        rep = replica(0, (0, 1))
        close(rep, 1)
        rep.on_receive(eof(1, 1))
        rep.step()
        with pytest.raises(ProtocolViolation):
            rep.on_receive(EpochBatch(1, 1, (upd(99, 1, 1),), 1))

    def test_non_member_ignored(self):
        rep = replica(0, (0, 1))
        assert not rep.on_receive(eof(7, 1))


def test_membership_view_drops_peer():
    rep = replica(0, (0, 1, 2))
    close(rep, 3)
    for e in (1, 2, 3):
        rep.on_receive(eof(1, e))
    rep.on_receive(eof(2, 1))
    rep.install_view(MembershipView(1, frozenset({0, 1}), 2))
    assert rep.step() == [1, 2, 3]


def test_snapshot_transfer_is_verified():
    a = replica(0, (0,))
    lsn, st, fp = a.export_snapshot()
    b = replica(1, (0, 1))
    with pytest.raises(ProtocolViolation):
        b.install_snapshot(lsn, st, "0" * 64)
    b.install_snapshot(lsn, st, fp)
    assert b.store.fingerprint() == fp


def test_local_and_remote_conflict_resolved_identically():
    reps = [replica(i, (0, 1)) for i in (0, 1)]
    txns = []
    for i, rep in enumerate(reps):
        rep.clock = lambda i=i: 1000 + i
        t = Transaction(rep.store, IsolationLevel.RC, [Op("update", b"x", b"n%d" % i)])
        gen = transaction_process(t, rep)
        txns.append((t, gen))
        next(gen, None)  # runs to the applied-wait
    out = [rep.close_epoch(1) for rep in reps]
    reps[0].on_receive(out[1][0])
    reps[1].on_receive(out[0][0])
    for rep in reps:
        rep.step()
    for t, gen in txns:
        next(gen, None)
    assert [t.status for t, _ in txns] == [Status.COMMITTED, Status.ABORTED]
    assert reps[0].store.fingerprint() == reps[1].store.fingerprint()
