"""Per-replica epoch coordination.

A :class:`Replica` buffers remote epoch batches by commit epoch, merges the
batches of epoch ``lsn + 1`` on top of snapshot ``lsn``, runs validation and
write-back once every member's updates for that epoch are on the row
headers, and then advances ``lsn``. It is runtime-neutral: the simulator and
the threaded runtime both call the same methods and decide when to call them.
"""

from __future__ import annotations

import math
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core import Csn, CsnClock, EpochNo, NodeId, TxnMeta, WriteRecord
from .merge import ProtocolViolation, delta_crdt_merge, lww_merge, owns_all, write_back_all
from .storage import Store
from .txn import ExecutionMode, Transaction

RETAIN_EPOCHS = 512


@dataclass(frozen=True, slots=True)
class Update:
    meta: TxnMeta
    ws: tuple[WriteRecord, ...]


@dataclass(frozen=True)
class EpochBatch:
    origin: NodeId
    cen: EpochNo
    updates: tuple[Update, ...]
    mini_batch_seq: int = 0
    eof: bool = True

    @property
    def n_records(self) -> int:
        return sum(len(u.ws) for u in self.updates)


@dataclass(frozen=True)
class MembershipView:
    view_id: int
    live: frozenset
    effective_from_epoch: EpochNo


def package_outbound(node: NodeId, cen: EpochNo, pending: Iterable[Update],
                     batch_size: int = 32) -> list[EpochBatch]:
    """Split one epoch's write sets into mini-batches; the last carries eof.

    An epoch without updates is a single empty eof batch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    ups = sorted(pending, key=lambda u: u.meta.csn)
    for u in ups:
        if u.meta.cen != cen:
            raise ValueError(f"update {u.meta.csn} belongs to epoch {u.meta.cen}, not {cen}")
    if not ups:
        return [EpochBatch(node, cen, (), 0, True)]
    n = math.ceil(len(ups) / batch_size)
    return [EpochBatch(node, cen, tuple(ups[i * batch_size:(i + 1) * batch_size]), i, i == n - 1)
            for i in range(n)]


class _Inbound:
    """Mini-batches of one (origin, cen)."""

    __slots__ = ("seqs", "last_seq", "pending", "merged", "batches")

    def __init__(self):
        self.seqs: set[int] = set()
        self.last_seq: Optional[int] = None
        self.pending: list[EpochBatch] = []
        self.merged: set[int] = set()
        self.batches: dict[int, EpochBatch] = {}

    @property
    def complete(self) -> bool:
        return self.last_seq is not None and len(self.seqs) == self.last_seq + 1

    @property
    def done(self) -> bool:
        return self.complete and len(self.merged) == self.last_seq + 1


@dataclass
class SnapshotState:
    lsn: EpochNo = 0
    applied: EpochNo = 0
    buf: dict = field(default_factory=lambda: defaultdict(dict))
    commit_queue: dict = field(default_factory=lambda: defaultdict(list))
    remote_done: dict = field(default_factory=lambda: defaultdict(set))
    local_open: dict = field(default_factory=lambda: defaultdict(set))
    local_unmerged: dict = field(default_factory=lambda: defaultdict(set))


class Replica:
    def __init__(self, node_id: NodeId, store: Store, members: Iterable[NodeId],
                 clock: Callable[[], float], epoch_us: int,
                 mode: ExecutionMode = ExecutionMode.GEOGAUSS, batch_size: int = 32,
                 first_epoch: EpochNo = 0, track_durability: bool = False):
        if epoch_us <= 0:
            raise ValueError("epoch length must be positive")
        self.node_id = node_id
        self.store = store
        self.clock = clock
        self.epoch_us = epoch_us
        self.mode = mode
        self.batch_size = batch_size
        self.csn_clock = CsnClock(node_id)
        self.state = SnapshotState(lsn=first_epoch, applied=first_epoch)
        self.views = [MembershipView(0, frozenset(members), 0)]
        self.closed_through = first_epoch
        self.first_epoch = first_epoch
        self.send_buffer: dict[EpochNo, list[Update]] = defaultdict(list)
        self.seen: dict[EpochNo, set[Csn]] = defaultdict(set)
        self.executing: dict[EpochNo, int] = defaultdict(int)
        self.durable: set[EpochNo] = set()
        self.durable_through = first_epoch
        self.track_durability = track_durability
        self.complete_from: dict[NodeId, set[EpochNo]] = defaultdict(set)
        self.retained: dict[tuple[NodeId, EpochNo], list[EpochBatch]] = {}
        self.snapshots: list[tuple[EpochNo, str]] = []
        self.commit_log: dict[EpochNo, list[Csn]] = defaultdict(list)
        self.barrier_keys: dict[EpochNo, dict] = {}
        self.epoch_updates: dict[EpochNo, list[Update]] = defaultdict(list)
        self.record_updates = False
        self.lock = threading.RLock()

    # -- epochs and membership --------------------------------------------

    @property
    def lsn(self) -> EpochNo:
        return self.state.lsn

    def current_epoch(self) -> EpochNo:
        # a closed epoch is over even if float rounding puts the clock on its edge
        return max(int(self.clock() // self.epoch_us) + 1, self.closed_through + 1)

    def view_for(self, epoch: EpochNo) -> MembershipView:
        best = self.views[0]
        for v in self.views:
            if v.effective_from_epoch <= epoch and v.view_id >= best.view_id:
                best = v
        return best

    def peers(self, epoch: EpochNo) -> list[NodeId]:
        return sorted(self.view_for(epoch).live - {self.node_id})

    def install_view(self, view: MembershipView) -> None:
        with self.lock:
            if any(v.view_id == view.view_id for v in self.views):
                return
            self.views.append(view)
            self.views.sort(key=lambda v: v.view_id)
            # drop buffered batches from origins that are no longer members
            for cen in list(self.state.buf):
                if cen < view.effective_from_epoch:
                    continue
                for origin in list(self.state.buf[cen]):
                    if origin not in self.view_for(cen).live:
                        del self.state.buf[cen][origin]

    # -- durability ---------------------------------------------------------

    def mark_durable(self, epoch: EpochNo) -> None:
        with self.lock:
            self.durable.add(epoch)
            while self.durable_through + 1 in self.durable:
                self.durable_through += 1
                self.durable.discard(self.durable_through)

    def is_durable(self, epoch: EpochNo) -> bool:
        return not self.track_durability or self.durable_through >= epoch

    # -- local transactions -------------------------------------------------

    def exec_begin(self, sen: EpochNo) -> None:
        with self.lock:
            self.executing[sen] += 1

    def exec_end(self, sen: EpochNo) -> None:
        with self.lock:
            self.executing[sen] -= 1
            if not self.executing[sen]:
                del self.executing[sen]

    def can_close(self, epoch: EpochNo) -> bool:
        """Synchronous-execution mode holds an epoch open while its transactions run."""
        if self.mode is not ExecutionMode.GEOG_S:
            return True
        return not any(s <= epoch for s in self.executing)

    def assign_commit(self, txn: Transaction) -> None:
        with self.lock:
            txn.csn = self.csn_clock.new_csn(int(self.clock()))
            if self.mode is ExecutionMode.GEOG_S:
                txn.cen = txn.sen
            else:
                cen = self.current_epoch()
                # an epoch that already shipped cannot take new updates
                txn.cen = max(cen, self.closed_through + 1)

    def submit_local(self, txn: Transaction) -> None:
        with self.lock:
            meta = txn.meta
            if meta.cen <= self.closed_through:
                raise ProtocolViolation(f"epoch {meta.cen} already closed on node {self.node_id}")
            u = Update(meta, tuple(txn.write_set))
            self.send_buffer[meta.cen].append(u)
            self.seen[meta.cen].add(meta.csn)
            self.state.local_open[meta.cen].add(meta.csn)
            self.state.local_unmerged[meta.cen].add(meta.csn)
            if self.record_updates:
                self.epoch_updates[meta.cen].append(u)

    def merge_local(self, txn: Transaction) -> None:
        meta = txn.meta
        if self.state.lsn < meta.cen - 1:
            raise ProtocolViolation(f"merge of epoch {meta.cen} before snapshot {meta.cen - 1}")
        with self.lock:
            self._note_barrier_keys(meta.cen, txn.write_set)
            txn.merge_outcome = delta_crdt_merge(meta, txn.write_set, self.store)
            self.state.local_unmerged[meta.cen].discard(meta.csn)

    def epoch_applied(self, epoch: EpochNo) -> bool:
        return self.state.applied >= epoch

    def finish_local(self, txn: Transaction) -> None:
        with self.lock:
            cen = txn.cen
            if txn.status.value == "committed":
                self.commit_log[cen].append(txn.csn)
            self.state.local_open[cen].discard(txn.csn)

    def apply_async(self, txn: Transaction) -> None:
        """Asynchronous mode: apply locally at once and ship at the epoch end."""
        with self.lock:
            meta = txn.meta
            u = Update(meta, tuple(txn.write_set))
            lww_merge(meta, u.ws, self.store)
            self.send_buffer[meta.cen].append(u)
            self.seen[meta.cen].add(meta.csn)
            self.commit_log[meta.cen].append(meta.csn)
            if self.record_updates:
                self.epoch_updates[meta.cen].append(u)

    # -- outbound -------------------------------------------------------------

    def close_epoch(self, epoch: EpochNo) -> list[EpochBatch]:
        with self.lock:
            if epoch != self.closed_through + 1:
                raise ProtocolViolation(f"epoch {epoch} closed out of order (closed through {self.closed_through})")
            pending = self.send_buffer.pop(epoch, [])
            self.closed_through = epoch
            if self.mode is ExecutionMode.GEOG_A:
                self.state.lsn = self.state.applied = epoch
            return package_outbound(self.node_id, epoch, pending, self.batch_size)

    # -- inbound --------------------------------------------------------------

    def on_receive(self, batch: EpochBatch) -> bool:
        """Buffer a received mini-batch. Returns False for ignored input."""
        with self.lock:
            if batch.origin == self.node_id or batch.origin not in self.view_for(batch.cen).live:
                return False
            if batch.cen <= self.first_epoch:
                return False
            st = self.state
            if self.mode is not ExecutionMode.GEOG_A and batch.cen <= st.lsn:
                seen = self.seen.get(batch.cen)
                if seen is not None and batch.cen > st.lsn - RETAIN_EPOCHS:
                    for u in batch.updates:
                        if u.meta.csn not in seen:
                            raise ProtocolViolation(
                                f"update {u.meta.csn} for closed epoch {batch.cen} arrived at node "
                                f"{self.node_id} after snapshot {st.lsn}")
                return False
            inbound = st.buf[batch.cen].get(batch.origin)
            if inbound is None:
                inbound = st.buf[batch.cen][batch.origin] = _Inbound()
            if batch.mini_batch_seq in inbound.seqs:
                return False
            inbound.seqs.add(batch.mini_batch_seq)
            inbound.batches[batch.mini_batch_seq] = batch
            if batch.eof:
                inbound.last_seq = batch.mini_batch_seq
            inbound.pending.append(batch)
            if inbound.complete:
                self.complete_from[batch.origin].add(batch.cen)
                self.retained[(batch.origin, batch.cen)] = [inbound.batches[i] for i in range(inbound.last_seq + 1)]
                self._prune_retained(batch.cen)
            return True

    def _prune_retained(self, cen: EpochNo) -> None:
        if len(self.retained) > 4 * RETAIN_EPOCHS:
            cutoff = cen - RETAIN_EPOCHS
            for k in [k for k in self.retained if k[1] < cutoff]:
                del self.retained[k]

    def have_through(self, origin: NodeId) -> EpochNo:
        """Highest epoch e such that every epoch batch of ``origin`` up to e is held."""
        got = self.complete_from.get(origin, set())
        e = self.first_epoch
        while e + 1 in got:
            e += 1
        return e

    def batches_from(self, origin: NodeId, cen: EpochNo) -> Optional[list[EpochBatch]]:
        return self.retained.get((origin, cen))

    def next_merge_batch(self) -> Optional[EpochBatch]:
        """Pop the next buffered mini-batch that may be merged now."""
        with self.lock:
            st = self.state
            if self.mode is ExecutionMode.GEOG_A:
                for cen in sorted(st.buf):
                    for origin in sorted(st.buf[cen]):
                        inb = st.buf[cen][origin]
                        if inb.pending:
                            return inb.pending.pop(0)
                return None
            e = st.lsn + 1
            if st.applied >= e:
                return None
            for origin in sorted(st.buf.get(e, {})):
                inb = st.buf[e][origin]
                if inb.pending:
                    return inb.pending.pop(0)
            return None

    def merge_batch(self, batch: EpochBatch) -> int:
        """Merge one popped mini-batch. Returns the number of records merged."""
        with self.lock:
            st = self.state
            inb = st.buf[batch.cen].get(batch.origin)
            n = 0
            seen = self.seen[batch.cen]
            for u in batch.updates:
                if u.meta.csn in seen:
                    continue
                seen.add(u.meta.csn)
                if self.record_updates:
                    self.epoch_updates[batch.cen].append(u)
                n += len(u.ws)
                if self.mode is ExecutionMode.GEOG_A:
                    lww_merge(u.meta, u.ws, self.store)
                    self.commit_log[batch.cen].append(u.meta.csn)
                    continue
                if u.meta.cen != batch.cen:
                    raise ProtocolViolation(f"update {u.meta.csn} framed in epoch {batch.cen} has cen {u.meta.cen}")
                self._note_barrier_keys(batch.cen, u.ws)
                outcome = delta_crdt_merge(u.meta, u.ws, self.store)
                if not outcome.aborted:
                    st.commit_queue[batch.cen].append(u)
            if inb is not None:
                inb.merged.add(batch.mini_batch_seq)
                if inb.done:
                    st.remote_done[batch.cen].add(batch.origin)
            return n

    def _note_barrier_keys(self, cen, ws) -> None:
        if not self.record_updates:
            return
        known = self.barrier_keys.setdefault(cen, {})
        for rec in ws:
            if rec.key not in known:
                known[rec.key] = self.store.find_row(rec.key) is not None

    # -- barrier and snapshot -----------------------------------------------

    def missing_peers(self, epoch: EpochNo) -> list[NodeId]:
        done = self.state.remote_done.get(epoch, set())
        return [p for p in self.peers(epoch) if p not in done]

    def barrier_ready(self) -> bool:
        """All member updates of epoch lsn+1 are on the headers."""
        st = self.state
        e = st.lsn + 1
        if self.mode is ExecutionMode.GEOG_A or st.applied >= e:
            return False
        if self.closed_through < e or st.local_unmerged.get(e):
            return False
        return not self.missing_peers(e)

    def pass_barrier(self) -> EpochNo:
        """Validate and write back the remote commit queue of epoch lsn+1."""
        with self.lock:
            st = self.state
            e = st.lsn + 1
            st.applied = e
            queue = sorted(st.commit_queue.pop(e, []), key=lambda u: u.meta.csn)
            for u in queue:
                if owns_all(u.meta, u.ws, self.store):
                    write_back_all(u.meta, u.ws, self.store)
                    self.commit_log[e].append(u.meta.csn)
            return e

    def snapshot_ready(self) -> bool:
        st = self.state
        e = st.lsn + 1
        return (self.mode is not ExecutionMode.GEOG_A and st.applied >= e
                and not st.local_open.get(e))

    def generate_snapshot(self) -> EpochNo:
        with self.lock:
            st = self.state
            e = st.lsn + 1
            self.store.promote_inserts()
            st.lsn = e
            self.snapshots.append((e, self.store.digest_hex()))
            st.buf.pop(e, None)
            st.remote_done.pop(e, None)
            st.local_open.pop(e, None)
            st.local_unmerged.pop(e, None)
            self.seen.pop(e - RETAIN_EPOCHS, None)
            return e

    def step(self) -> list[EpochNo]:
        """Merge everything mergeable and advance snapshots as far as possible.

        Cost-free driver used by tests and the threaded runtime's merge loop.
        Returns the snapshots generated.
        """
        made = []
        while True:
            b = self.next_merge_batch()
            if b is not None:
                self.merge_batch(b)
                continue
            if self.barrier_ready():
                self.pass_barrier()
                continue
            if self.snapshot_ready():
                made.append(self.generate_snapshot())
                continue
            return made

    # -- state transfer -------------------------------------------------------

    def export_snapshot(self) -> tuple[EpochNo, Store, str]:
        with self.lock:
            return self.state.lsn, self.store.copy(), self.store.fingerprint()

    def install_snapshot(self, lsn: EpochNo, store: Store, fingerprint: str) -> None:
        with self.lock:
            if store.fingerprint() != fingerprint:
                raise ProtocolViolation("snapshot transfer fingerprint mismatch")
            self.store = store
            self.state.lsn = self.state.applied = lsn
            self.snapshots.append((lsn, store.digest_hex()))
