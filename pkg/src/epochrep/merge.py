"""Delta-state merge of transaction write sets into row headers.

The rule is applied per record. Every record of an update is processed even
after one of them loses, so the final headers depend only on the set of
updates merged, not on their order or on how they were batched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .core import Csn, Key, OpKind, TxnMeta
from .storage import RowHeader, Store, TempEntry, TempInsertTable


class ProtocolViolation(RuntimeError):
    """A merge observed state that the epoch barrier should make impossible."""


class RecordResult(enum.Enum):
    PRE_WRITTEN = "pre_written"
    DISPLACED = "displaced"
    ROW_DELETED = "row_deleted"


@dataclass
class MergeOutcome:
    results: dict[Key, RecordResult] = field(default_factory=dict)
    displaced_by: dict[Key, Csn] = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return any(r is not RecordResult.PRE_WRITTEN for r in self.results.values())

    @property
    def row_deleted(self) -> bool:
        return any(r is RecordResult.ROW_DELETED for r in self.results.values())


def _same_sen_wins(header_csn: Csn, meta_csn: Csn) -> bool:
    # First write wins: the smaller csn takes the row.
    return header_csn > meta_csn


def pre_write(header: RowHeader, meta: TxnMeta) -> bool:
    """Apply the header rule for one row. Returns True if ``meta`` holds the row."""
    if header.cen < meta.cen:
        header.assign(meta)
        return True
    if header.cen == meta.cen:
        if header.sen == meta.sen:
            if _same_sen_wins(header.csn, meta.csn):
                header.assign(meta)
                return True
            return False
        if header.sen < meta.sen:
            # shorter transaction wins
            header.assign(meta)
            return True
        return False
    raise ProtocolViolation(
        f"row header at epoch {header.cen} is ahead of update epoch {meta.cen}")


def merge_insert(meta: TxnMeta, key: Key, temp: TempInsertTable) -> RecordResult:
    entry = temp.entries.get(key)
    if entry is None:
        h = RowHeader()
        h.assign(meta)
        temp.entries[key] = TempEntry(h)
        return RecordResult.PRE_WRITTEN
    return RecordResult.PRE_WRITTEN if pre_write(entry.header, meta) else RecordResult.DISPLACED


def delta_crdt_merge(meta: TxnMeta, ws, store: Store) -> MergeOutcome:
    """Merge one transaction's write set into the row headers of ``store``.

    ``ws`` is an iterable of write records (``key``, ``op_kind``). Inserts of
    keys absent from the index go to the temporary insert table; an insert of
    a live key competes for the existing row like an update.
    """
    out = MergeOutcome()
    for rec in ws:
        key = rec.key
        with store.lock_for(key):
            row = store.find_row(key)
            if row is None:
                if rec.op_kind is OpKind.INSERT:
                    res = merge_insert(meta, key, store.temp)
                else:
                    res = RecordResult.ROW_DELETED
            else:
                res = RecordResult.PRE_WRITTEN if pre_write(row.header, meta) else RecordResult.DISPLACED
            if res is RecordResult.DISPLACED:
                holder = row.header if row is not None else store.temp.entries[key].header
                out.displaced_by[key] = holder.csn
        out.results[key] = res
    return out


def owns_all(meta: TxnMeta, ws, store: Store) -> bool:
    """Final write validation: every record's header still carries ``meta.csn``."""
    for rec in ws:
        row = store.find_row(rec.key)
        if row is not None:
            if row.header.csn != meta.csn or row.header.cen != meta.cen:
                return False
        elif rec.op_kind is OpKind.INSERT:
            entry = store.temp.get(rec.key)
            if entry is None or entry.header.csn != meta.csn:
                return False
        else:
            return False
    return True


def write_back_all(meta: TxnMeta, ws, store: Store) -> None:
    for rec in ws:
        row = store.find_row(rec.key)
        if row is not None:
            store.write_back(rec.key, rec.data, meta, delete=rec.op_kind is OpKind.DELETE)
        else:
            store.write_back_insert(rec.key, rec.data, meta)


def lww_merge(meta: TxnMeta, ws, store: Store) -> int:
    """Asynchronous-mode merge: per-key last-writer-wins by (cen, update order).

    Applies data immediately. Returns the number of records that took effect.
    """
    applied = 0
    for rec in ws:
        with store.lock_for(rec.key):
            row = store.raw_row(rec.key)
            if row is not None:
                h = row.header
                if h.csn == meta.csn:
                    continue
                if h.cen > meta.cen:
                    continue
                if h.cen == meta.cen and not (meta.sen > h.sen or (meta.sen == h.sen and meta.csn < h.csn)):
                    continue
            store.lww_put(rec.key, rec.data, meta, rec.op_kind is OpKind.DELETE)
            applied += 1
    return applied
