"""A hand-driven cluster for scripted interleavings.

Time only moves when the script ends an epoch, and messages are delivered
at once. Transactions with think time pause at every Sleep until the script
resumes them, which makes the classic anomaly timelines easy to write down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .coordinator import Replica
from .storage import Store
from .txn import (Cpu, IsolationLevel, Op, Sleep, Status, Transaction, WaitApplied, WaitDurable,
                  WaitSnapshot, transaction_process)
from .modes import ExecutionMode


class Driver:
    def __init__(self, txn: Transaction, gen, node: Replica):
        self.txn, self.gen, self.node = txn, gen, node
        self.wait = None
        self.paused = False
        self.done = False

    @property
    def status(self) -> Status:
        return self.txn.status


class ScriptedCluster:
    def __init__(self, n: int = 2, rows: Optional[dict] = None, epoch_us: int = 10_000,
                 mode: ExecutionMode = ExecutionMode.GEOGAUSS):
        self.now = 0
        self.epoch_us = epoch_us
        base = Store()
        base.preload(sorted((rows or {b"x": b"x0", b"y": b"y0"}).items()))
        self.replicas = [Replica(i, base.copy(), range(n), clock=lambda: self.now, epoch_us=epoch_us,
                                 mode=mode) for i in range(n)]
        self.drivers: list[Driver] = []

    def begin(self, node: int, ops: list, level: IsolationLevel = IsolationLevel.RC,
              pause_between_ops: bool = False) -> Driver:
        rep = self.replicas[node]
        txn = Transaction(rep.store, level, [Op(*o) for o in ops], think_us=1.0 if pause_between_ops else 0.0)
        d = Driver(txn, transaction_process(txn, rep), rep)
        self.drivers.append(d)
        self._advance(d)
        self.settle()
        return d

    def resume(self, d: Driver) -> None:
        assert d.paused, "driver is not paused"
        d.paused = False
        self._advance(d)
        self.settle()

    def _ready(self, d: Driver) -> bool:
        w, r = d.wait, d.node
        if isinstance(w, WaitSnapshot):
            return r.lsn >= w.epoch
        if isinstance(w, WaitApplied):
            return r.epoch_applied(w.epoch)
        if isinstance(w, WaitDurable):
            return r.is_durable(w.epoch)
        return False

    def _advance(self, d: Driver) -> None:
        while True:
            try:
                instr = next(d.gen)
            except StopIteration:
                d.done, d.wait = True, None
                return
            if isinstance(instr, Cpu):
                continue
            if isinstance(instr, Sleep):
                d.paused = True
                return
            d.wait = instr
            if not self._ready(d):
                return

    def settle(self) -> None:
        progress = True
        while progress:
            progress = False
            for r in self.replicas:
                r.step()
            for d in self.drivers:
                if not d.done and not d.paused and d.wait is not None and self._ready(d):
                    self._advance(d)
                    progress = True

    def end_epoch(self) -> int:
        """Close the current epoch everywhere and deliver every batch."""
        e = self.now // self.epoch_us + 1
        self.now = e * self.epoch_us
        out = [r.close_epoch(e) for r in self.replicas]
        for r, batches in zip(self.replicas, out):
            for peer in self.replicas:
                if peer is not r:
                    for b in batches:
                        peer.on_receive(b)
        self.settle()
        return e


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    level: str
    expected: str
    got: str

    @property
    def ok(self) -> bool:
        return self.expected == self.got


def _outcome(d: Driver) -> str:
    t = d.txn
    if t.status is Status.ABORTED:
        return f"aborted:{t.reason.value}"
    return t.status.value


def double_read(level: IsolationLevel) -> str:
    """A transaction reads x from S0 and again from S1 after x is overwritten."""
    c = ScriptedCluster()
    t = c.begin(1, [("read", b"x"), ("read", b"x"), ("update", b"y", b"y1")], level, pause_between_ops=True)
    w = c.begin(0, [("update", b"x", b"x1")])
    c.end_epoch()
    assert w.status is Status.COMMITTED and c.replicas[1].lsn == 1
    c.resume(t)
    c.resume(t)
    c.end_epoch()
    c.end_epoch()
    return _outcome(t)


def cross_snapshot_read(level: IsolationLevel) -> str:
    """Reads x at snapshot 0 and y after y was rewritten in epoch 2; x stays unchanged."""
    c = ScriptedCluster()
    t = c.begin(0, [("read", b"x"), ("read", b"y"), ("read", b"x"), ("update", b"x", b"xa")],
                level, pause_between_ops=True)
    c.end_epoch()
    c.begin(1, [("update", b"y", b"y2")])
    c.end_epoch()
    assert c.replicas[0].lsn == 2
    for _ in range(3):
        c.resume(t)
    for _ in range(3):
        c.end_epoch()
    return _outcome(t)


def read_then_deleted(level: IsolationLevel) -> str:
    c = ScriptedCluster()
    t = c.begin(0, [("read", b"x"), ("update", b"y", b"ya")], level, pause_between_ops=True)
    c.begin(1, [("delete", b"x")])
    c.end_epoch()
    c.resume(t)
    for _ in range(2):
        c.end_epoch()
    return _outcome(t)


def same_epoch_writers(level: IsolationLevel) -> tuple[str, str]:
    """Two replicas write x in one epoch; the earlier csn commits."""
    c = ScriptedCluster()
    c.now = 1000
    a = c.begin(0, [("update", b"x", b"xa")], level)
    c.now = 2000
    b = c.begin(1, [("update", b"x", b"xb")], level)
    c.end_epoch()
    return _outcome(a), _outcome(b)


def long_running(level: IsolationLevel) -> tuple[str, str, int, int]:
    """A transaction spanning epochs 1..3 commits in epoch 3; short ones are not held up."""
    c = ScriptedCluster()
    lt = c.begin(0, [("update", b"x", b"xl"), ("update", b"y", b"yl")], level, pause_between_ops=True)
    s1 = c.begin(1, [("read", b"y"), ("update", b"x", b"xs")], level)
    c.end_epoch()
    short_done_at = c.replicas[1].lsn
    c.end_epoch()
    c.resume(lt)
    c.end_epoch()
    c.end_epoch()
    return _outcome(lt), _outcome(s1), lt.txn.cen - lt.txn.sen, short_done_at


def isolation_scenarios() -> list[ScenarioResult]:
    RC, RR, SI = IsolationLevel.RC, IsolationLevel.RR, IsolationLevel.SI
    out = []
    expect_double = {RC: "committed", RR: "aborted:read_updated",
                     # x was rewritten in epoch lsn + 1, which the snapshot rule tolerates
                     SI: "committed"}
    for lvl, exp in expect_double.items():
        out.append(ScenarioResult("double_read", lvl.value, exp, double_read(lvl)))
    expect_cross = {RC: "committed", RR: "committed", SI: "aborted:snapshot_stale"}
    for lvl, exp in expect_cross.items():
        out.append(ScenarioResult("cross_snapshot_read", lvl.value, exp, cross_snapshot_read(lvl)))
    expect_del = {RC: "committed", RR: "aborted:read_deleted", SI: "aborted:read_deleted"}
    for lvl, exp in expect_del.items():
        out.append(ScenarioResult("read_then_deleted", lvl.value, exp, read_then_deleted(lvl)))
    for lvl in (RC, RR, SI):
        a, b = same_epoch_writers(lvl)
        out.append(ScenarioResult("same_epoch_writers", lvl.value,
                                  "committed/aborted:write_conflict", f"{a}/{b}"))
    return out
