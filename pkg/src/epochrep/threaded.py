"""A real-threads runtime for the same replicas and transaction lifecycle.

Each replica gets a merge thread and an epoch ticker; callers run
transactions on their own threads. A transaction advances one generator step
at a time while holding the replica lock, and blocks on the replica's
condition variable between steps, so the lifecycle code is shared unchanged
with the simulator. Batches travel through per-replica inbox queues, which
keeps the ticker from ever holding two replica locks at once.
"""

from __future__ import annotations

import queue
import threading
import time
from typing import Iterable, Optional

from .coordinator import Replica
from .modes import ExecutionMode
from .storage import Store
from .txn import (Cpu, IsolationLevel, Op, Sleep, Transaction, WaitApplied, WaitDurable, WaitSnapshot,
                  transaction_process)


class _Node:
    def __init__(self, replica: Replica):
        self.replica = replica
        self.cond = threading.Condition(replica.lock)
        self.inbox: queue.Queue = queue.Queue()


class ThreadedCluster:
    def __init__(self, n_nodes: int, rows: Iterable = (), epoch_ms: float = 5.0,
                 mode: ExecutionMode = ExecutionMode.GEOGAUSS, wait_timeout_s: float = 10.0):
        base = Store()
        base.preload(sorted(rows))
        self.epoch_us = int(epoch_ms * 1000)
        self.t0 = time.monotonic()
        self.wait_timeout_s = wait_timeout_s
        clock = lambda: (time.monotonic() - self.t0) * 1e6
        self.nodes = [_Node(Replica(i, base.copy(), range(n_nodes), clock=clock, epoch_us=self.epoch_us,
                                    mode=mode)) for i in range(n_nodes)]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.errors: list[BaseException] = []

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> ThreadedCluster:
        for node in self.nodes:
            for target in (self._merge_loop, self._tick_loop):
                t = threading.Thread(target=self._guard, args=(target, node), daemon=True)
                t.start()
                self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        for node in self.nodes:
            node.inbox.put(None)
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _guard(self, fn, node: _Node) -> None:
        try:
            fn(node)
        except BaseException as exc:  # surfaced by callers through self.errors
            self.errors.append(exc)
            with node.cond:
                node.cond.notify_all()

    def _tick_loop(self, node: _Node) -> None:
        rep = node.replica
        while not self._stop.is_set():
            with node.cond:
                e = rep.closed_through + 1
                due = rep.clock() >= e * self.epoch_us and rep.can_close(e)
                batches = rep.close_epoch(e) if due else None
            if batches is None:
                time.sleep(self.epoch_us / 1e6 / 10)
                continue
            for peer in self.nodes:
                if peer is not node:
                    for b in batches:
                        peer.inbox.put(b)
            with node.cond:
                node.cond.notify_all()

    def _merge_loop(self, node: _Node) -> None:
        rep = node.replica
        while not self._stop.is_set():
            try:
                item = node.inbox.get(timeout=self.epoch_us / 1e6)
            except queue.Empty:
                item = False
            with node.cond:
                while item:
                    rep.on_receive(item)
                    try:
                        item = node.inbox.get_nowait()
                    except queue.Empty:
                        item = None
                rep.step()
                node.cond.notify_all()

    # -- transactions ------------------------------------------------------------

    def _ready(self, rep: Replica, w) -> bool:
        if isinstance(w, WaitSnapshot):
            return rep.lsn >= w.epoch
        if isinstance(w, WaitApplied):
            return rep.epoch_applied(w.epoch)
        if isinstance(w, WaitDurable):
            return rep.is_durable(w.epoch)
        raise TypeError(f"unexpected wait {w!r}")

    def execute(self, node_id: int, ops: list, level: IsolationLevel = IsolationLevel.SI,
                think_us: float = 0.0) -> Transaction:
        """Run one transaction to its final status on the calling thread."""
        node = self.nodes[node_id]
        rep = node.replica
        txn = Transaction(rep.store, level, [o if isinstance(o, Op) else Op(*o) for o in ops], think_us)
        gen = transaction_process(txn, rep)
        while True:
            with node.cond:
                try:
                    instr = next(gen)
                except StopIteration:
                    return txn
                if not isinstance(instr, (Cpu, Sleep)):
                    ok = node.cond.wait_for(lambda: self.errors or self._ready(rep, instr),
                                            timeout=self.wait_timeout_s)
                    if self.errors:
                        raise RuntimeError("replica thread failed") from self.errors[0]
                    if not ok:
                        raise TimeoutError(f"node {node_id} stuck on {instr}")
            if isinstance(instr, Sleep):
                time.sleep(instr.us / 1e6)

    def quiesce(self, epochs: int = 3, timeout_s: float = 10.0) -> Optional[int]:
        """Wait until every replica has snapshots ``epochs`` past the current epoch."""
        target = max(n.replica.current_epoch() for n in self.nodes) + epochs
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if self.errors:
                raise RuntimeError("replica thread failed") from self.errors[0]
            if all(n.replica.lsn >= target for n in self.nodes):
                return target
            time.sleep(0.005)
        return None
