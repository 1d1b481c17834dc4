import pytest

from epochrep.coordinator import Replica
from epochrep.core import Csn, OpKind
from epochrep.scenarios import ScriptedCluster, isolation_scenarios, long_running, same_epoch_writers
from epochrep.storage import ReadRecord, Store
from epochrep.txn import (AbortReason, IsolationLevel, Op, Sleep, Status, Transaction, WaitApplied,
                          WaitSnapshot, run_to_completion, transaction_process, validate_reads)


def solo(rows=((b"x", b"0"),), epoch_us=10_000):
    s = Store()
    s.preload(rows)
    clock = {"now": 0.0}
    rep = Replica(0, s, [0], clock=lambda: clock["now"], epoch_us=epoch_us)
    return rep, clock


def drive(rep, clock, gen):
    """Run a lifecycle on a single-node replica, moving the clock as needed."""
    def close_through(t):
        while (rep.closed_through + 1) * rep.epoch_us <= t:
            rep.close_epoch(rep.closed_through + 1)
            rep.step()

    for instr in gen:
        if isinstance(instr, Sleep):
            clock["now"] += instr.us
            close_through(clock["now"])
        elif isinstance(instr, (WaitSnapshot, WaitApplied)):
            while not (rep.lsn >= instr.epoch if isinstance(instr, WaitSnapshot) else rep.epoch_applied(instr.epoch)):
                clock["now"] = (rep.closed_through + 1) * rep.epoch_us
                close_through(clock["now"])


def test_read_only_commits_without_waiting():
    rep, _ = solo()
    t = Transaction(rep.store, IsolationLevel.RC, [Op("read", b"x")])
    run_to_completion(transaction_process(t, rep))
    assert t.status is Status.COMMITTED and not rep.send_buffer


def test_long_think_time_spans_epochs():
    rep, clock = solo()
    ops = [Op("read", b"x")] * 9 + [Op("update", b"x", b"v")]
    t = Transaction(rep.store, IsolationLevel.SI, ops, think_us=100_000)
    drive(rep, clock, transaction_process(t, rep))
    assert t.status is Status.COMMITTED
    assert t.sen == 1 and t.cen - t.sen >= 10


def test_double_write_coalesces():
    t = Transaction(solo()[0].store, IsolationLevel.RC)
    t.write(b"x", b"1")
    t.write(b"x", b"2")
    assert [(r.key, r.op_kind, r.data) for r in t.write_set] == [(b"x", OpKind.UPDATE, b"2")]
    assert t.read(b"x") == b"2"


def test_insert_then_delete_cancels():
    t = Transaction(Store(), IsolationLevel.RC)
    t.insert(b"n", b"1")
    t.delete(b"n")
    assert t.write_set == []


def test_constraint_violation_aborts():
    rep, _ = solo()
    t = Transaction(rep.store, IsolationLevel.RC, [Op("insert", b"x", b"dup")])
    run_to_completion(transaction_process(t, rep))
    assert t.status is Status.ABORTED and t.reason is AbortReason.CONSTRAINT


class TestReadValidation:
    def setup_method(self):
        self.store = Store()
        self.store.preload([(b"x", b"0")])
        row = self.store.find_row(b"x")
        row.committed_csn, row.committed_cen = Csn(9, 1), 2

    def txn(self, level, csn=Csn(5, 0), lsn=0):
        t = Transaction(self.store, level)
        t.read_set[b"x"] = ReadRecord(b"x", csn, 2, b"0")
        t.lsn = lsn
        return t

    def test_rr_updated(self):
        assert validate_reads(self.txn(IsolationLevel.RR), IsolationLevel.RR, self.store) is AbortReason.READ_UPDATED

    def test_si_stale(self):
        assert validate_reads(self.txn(IsolationLevel.SI), IsolationLevel.SI, self.store) is AbortReason.SNAPSHOT_STALE

    def test_si_current_snapshot(self):
        assert validate_reads(self.txn(IsolationLevel.SI, lsn=1), IsolationLevel.SI, self.store) is None

    def test_rc_passes(self):
        assert validate_reads(self.txn(IsolationLevel.RC), IsolationLevel.RC, self.store) is None

    def test_deleted(self):
        t = self.txn(IsolationLevel.SI, lsn=1)
        t.read_set[b"gone"] = ReadRecord(b"gone", Csn(1, 0), 1, b"")
        assert validate_reads(t, IsolationLevel.SI, self.store) is AbortReason.READ_DELETED


@pytest.mark.parametrize("sc", isolation_scenarios(), ids=lambda s: f"{s.name}-{s.level}")
def test_isolation_scenario(sc):
    assert sc.got == sc.expected


def test_rc_never_aborts_on_reads():
    # every anomaly scenario commits under RC
    for sc in isolation_scenarios():
        if sc.level == "RC" and sc.name != "same_epoch_writers":
            assert sc.got == "committed"


def test_same_epoch_writers_smaller_csn_commits():
    assert same_epoch_writers(IsolationLevel.RC) == ("committed", "aborted:write_conflict")


def test_row_deleted_by_prior_epoch():
    c = ScriptedCluster()
    t = c.begin(0, [("update", b"x", b"a"), ("update", b"y", b"b")], IsolationLevel.RC, pause_between_ops=True)
    d = c.begin(1, [("delete", b"x")])
    c.end_epoch()
    assert d.status is Status.COMMITTED
    c.resume(t)
    c.end_epoch()
    c.end_epoch()
    assert t.status is Status.ABORTED and t.txn.reason is AbortReason.ROW_DELETED


def test_long_transaction_does_not_hold_back_snapshots():
    lt, short, span, short_at = long_running(IsolationLevel.SI)
    assert (lt, short, span, short_at) == ("committed", "committed", 2, 1)


def test_status_cannot_go_backwards():
    t = Transaction(Store())
    t.set_status(Status.WAITING_EPOCH_APPLIED)
    with pytest.raises(RuntimeError):
        t.set_status(Status.WAITING_SNAPSHOT)
