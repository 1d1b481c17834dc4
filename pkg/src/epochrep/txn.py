"""Local transaction processing: optimistic execution, read validation,
the two epoch waits, write validation and write-back.

The lifecycle is a generator (:func:`transaction_process`) that yields wait
instructions. The simulator resumes it in virtual time; the threaded runtime
runs it on a real thread and blocks on each instruction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .core import Csn, EpochNo, Key, OpKind, TxnMeta, WriteRecord
from .merge import MergeOutcome, owns_all, write_back_all
from .modes import ExecutionMode, Gate, gate_execution, transactional
from .storage import ReadRecord, Store


class IsolationLevel(enum.Enum):
    RC = "RC"
    RR = "RR"
    SI = "SI"


class Status(enum.Enum):
    EXECUTING = "executing"
    WAITING_SNAPSHOT = "waiting_snapshot"
    WAITING_EPOCH_APPLIED = "waiting_epoch_applied"
    COMMITTED = "committed"
    ABORTED = "aborted"
    # Asynchronous mode: applied locally, no commit decision is ever reported.
    ACCEPTED = "accepted"
    FAILED = "failed"


class AbortReason(enum.Enum):
    CONSTRAINT = "constraint"
    READ_DELETED = "read_deleted"
    READ_UPDATED = "read_updated"
    SNAPSHOT_STALE = "snapshot_stale"
    WRITE_CONFLICT = "write_conflict"
    ROW_DELETED = "row_deleted"


class ConstraintViolation(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Op:
    kind: str  # "read" | "update" | "insert" | "delete"
    key: Key
    value: bytes = b""


# -- wait instructions ---------------------------------------------------

@dataclass(frozen=True, slots=True)
class Cpu:
    us: float
    phase: str = "execute"


@dataclass(frozen=True, slots=True)
class Sleep:
    us: float
    phase: str = "execute"


@dataclass(frozen=True, slots=True)
class WaitSnapshot:
    epoch: EpochNo
    phase: str = "wait"


@dataclass(frozen=True, slots=True)
class WaitApplied:
    epoch: EpochNo
    phase: str = "wait"


@dataclass(frozen=True, slots=True)
class WaitDurable:
    epoch: EpochNo
    phase: str = "wait"


# -- transactions ----------------------------------------------------------

_STATUS_ORDER = {
    Status.EXECUTING: 0,
    Status.WAITING_SNAPSHOT: 1,
    Status.WAITING_EPOCH_APPLIED: 2,
}


class Transaction:
    """A local transaction with a private write buffer.

    Reads of keys written earlier in the same transaction are served from the
    buffer. The read set keeps the first committed read of each key.
    """

    def __init__(self, store: Store, level: IsolationLevel = IsolationLevel.RC,
                 ops: Optional[list[Op]] = None, think_us: float = 0.0, tag: str = ""):
        self.store = store
        self.level = level
        self.ops = list(ops or [])
        self.think_us = think_us
        self.tag = tag
        self.sen: EpochNo = 0
        self.lsn: EpochNo = 0
        self.csn: Optional[Csn] = None
        self.cen: Optional[EpochNo] = None
        self.read_set: dict[Key, ReadRecord] = {}
        self._writes: dict[Key, WriteRecord] = {}
        self.status = Status.EXECUTING
        self.reason: Optional[AbortReason] = None
        self.merge_outcome: Optional[MergeOutcome] = None
        self.phase_us: dict[str, float] = {}
        self.origin: int = -1

    # -- client API -------------------------------------------------------

    def read(self, key: Key) -> Optional[bytes]:
        w = self._writes.get(key)
        if w is not None:
            return None if w.op_kind is OpKind.DELETE else w.data
        rec = self.store.read_committed(key)
        if rec is None:
            return None
        self.read_set.setdefault(key, rec)
        return rec.data

    def _visible(self, key: Key) -> bool:
        w = self._writes.get(key)
        if w is not None:
            return w.op_kind is not OpKind.DELETE
        return self.store.find_row(key) is not None

    def write(self, key: Key, value: bytes) -> None:
        if not self._visible(key):
            raise ConstraintViolation(f"update of missing row {key!r}")
        prev = self._writes.get(key)
        kind = OpKind.INSERT if prev is not None and prev.op_kind is OpKind.INSERT else OpKind.UPDATE
        self._writes[key] = WriteRecord(key, kind, value)

    def insert(self, key: Key, value: bytes) -> None:
        if not key:
            raise ConstraintViolation("empty key")
        if self._visible(key):
            raise ConstraintViolation(f"duplicate key {key!r}")
        prev = self._writes.get(key)
        # delete-then-insert inside one transaction is an overwrite of the row
        kind = OpKind.UPDATE if prev is not None and prev.op_kind is OpKind.DELETE else OpKind.INSERT
        self._writes[key] = WriteRecord(key, kind, value)

    def delete(self, key: Key) -> None:
        if not self._visible(key):
            raise ConstraintViolation(f"delete of missing row {key!r}")
        prev = self._writes.get(key)
        if prev is not None and prev.op_kind is OpKind.INSERT:
            del self._writes[key]
        else:
            self._writes[key] = WriteRecord(key, OpKind.DELETE)

    def apply(self, op: Op) -> None:
        if op.kind == "read":
            self.read(op.key)
        elif op.kind == "update":
            self.write(op.key, op.value)
        elif op.kind == "insert":
            self.insert(op.key, op.value)
        elif op.kind == "delete":
            self.delete(op.key)
        else:
            raise ValueError(f"unknown op kind {op.kind!r}")

    # -- metadata ---------------------------------------------------------

    @property
    def write_set(self) -> list[WriteRecord]:
        return [self._writes[k] for k in sorted(self._writes)]

    @property
    def meta(self) -> TxnMeta:
        if self.csn is None or self.cen is None:
            raise RuntimeError("transaction has not finished execution")
        return TxnMeta(self.sen, self.lsn, self.csn, self.cen)

    def set_status(self, status: Status) -> None:
        if self.status in (Status.COMMITTED, Status.ABORTED, Status.ACCEPTED, Status.FAILED):
            raise RuntimeError(f"transaction already finished ({self.status})")
        if status in _STATUS_ORDER and _STATUS_ORDER[status] < _STATUS_ORDER[self.status]:
            raise RuntimeError(f"status cannot move from {self.status} to {status}")
        self.status = status

    def abort(self, reason: AbortReason) -> None:
        self.set_status(Status.ABORTED)
        self.reason = reason

    def segments(self) -> list[list[Op]]:
        if self.think_us <= 0 or len(self.ops) <= 1:
            return [self.ops]
        return [[op] for op in self.ops]

    def __repr__(self):
        return f"Transaction(csn={self.csn}, sen={self.sen}, cen={self.cen}, {self.status.value})"


def validate_reads(txn: Transaction, level: IsolationLevel, store: Store) -> Optional[AbortReason]:
    """Read-set validation. Returns an abort reason, or None to pass."""
    if level is IsolationLevel.RC:
        return None
    for key, rec in txn.read_set.items():
        row = store.find_row(key)
        if row is None:
            return AbortReason.READ_DELETED
        if level is IsolationLevel.RR and rec.csn != row.committed_csn:
            return AbortReason.READ_UPDATED
        if level is IsolationLevel.SI and row.committed_cen - 1 > txn.lsn:
            return AbortReason.SNAPSHOT_STALE
    return None


def validate_and_write_back(txn: Transaction, store: Store) -> bool:
    """Final write validation and write-back. Returns True if committed."""
    meta = txn.meta
    ws = txn.write_set
    if txn.merge_outcome is not None and txn.merge_outcome.aborted:
        txn.abort(AbortReason.ROW_DELETED if txn.merge_outcome.row_deleted else AbortReason.WRITE_CONFLICT)
        return False
    if not owns_all(meta, ws, store):
        txn.abort(AbortReason.WRITE_CONFLICT)
        return False
    write_back_all(meta, ws, store)
    txn.set_status(Status.COMMITTED)
    return True


def transaction_process(txn: Transaction, node, exec_us_per_op: float = 0.0,
                        merge_us_per_record: float = 0.0):
    """One worker's lifecycle for ``txn`` on ``node``.

    ``node`` is a replica (see :class:`epochrep.coordinator.Replica`). The
    generator returns when the transaction has a final status.
    """
    mode = node.mode
    txn.origin = node.node_id
    txn.sen = node.current_epoch()
    txn.lsn = node.lsn
    if mode is ExecutionMode.GEOG_S:
        node.exec_begin(txn.sen)
        if gate_execution(mode, txn.sen, node.lsn) is Gate.DEFER:
            yield WaitSnapshot(txn.sen - 1)
        txn.lsn = node.lsn
    try:
        for i, seg in enumerate(txn.segments()):
            if i and txn.think_us > 0:
                yield Sleep(txn.think_us / (len(txn.ops) - 1))
            if exec_us_per_op:
                yield Cpu(exec_us_per_op * len(seg))
            for op in seg:
                txn.apply(op)
    except ConstraintViolation:
        if mode is ExecutionMode.GEOG_S:
            node.exec_end(txn.sen)
        txn.abort(AbortReason.CONSTRAINT)
        return

    # asynchronous mode never reports an abort, so reads are not validated
    reason = validate_reads(txn, txn.level, node.store) if transactional(mode) else None
    if reason is not None:
        if mode is ExecutionMode.GEOG_S:
            node.exec_end(txn.sen)
        txn.abort(reason)
        return
    ws = txn.write_set
    node.assign_commit(txn)
    if not ws:
        if mode is ExecutionMode.GEOG_S:
            node.exec_end(txn.sen)
        txn.set_status(Status.COMMITTED)
        return

    if mode is ExecutionMode.GEOG_A:
        node.apply_async(txn)
        txn.set_status(Status.ACCEPTED)
        return

    node.submit_local(txn)
    if mode is ExecutionMode.GEOG_S:
        node.exec_end(txn.sen)
    cen = txn.cen
    txn.set_status(Status.WAITING_SNAPSHOT)
    if node.lsn < cen - 1:
        yield WaitSnapshot(cen - 1)
    if merge_us_per_record:
        yield Cpu(merge_us_per_record * len(ws), "merge")
    node.merge_local(txn)
    txn.set_status(Status.WAITING_EPOCH_APPLIED)
    if not node.epoch_applied(cen):
        yield WaitApplied(cen)
    committed = validate_and_write_back(txn, node.store)
    node.finish_local(txn)
    if committed and not node.is_durable(cen):
        yield WaitDurable(cen)


def run_to_completion(gen) -> None:
    """Drive a lifecycle generator whose waits are already satisfied.

    Raises RuntimeError if the generator would block on an epoch condition.
    Useful for scripted single-replica scenarios.
    """
    for instr in gen:
        if isinstance(instr, (Cpu, Sleep)):
            continue
        raise RuntimeError(f"transaction blocked on {instr}")
