"""Single-version in-memory row store with pre-write row headers.

Row headers are mutated by merges (pre-write); committed values only change
on write-back after validation. Inserts of absent keys go through a per-epoch
temporary table and are promoted into the index when the snapshot is built.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from typing import Iterator

from .core import INITIAL_CSN, Csn, EpochNo, Key, TxnMeta

_MASK = (1 << 128) - 1
_N_STRIPES = 64


class StoreCorruption(RuntimeError):
    """Write-back attempted by a transaction that does not own the row header."""


class RowHeader:
    """Pre-write metadata. ``lsn`` is carried but not consulted by any rule."""

    __slots__ = ("sen", "csn", "cen", "lsn")

    def __init__(self, sen: EpochNo = 0, csn: Csn = INITIAL_CSN, cen: EpochNo = 0, lsn: EpochNo = 0):
        self.sen = sen
        self.csn = csn
        self.cen = cen
        self.lsn = lsn

    def assign(self, meta: TxnMeta) -> None:
        self.sen, self.csn, self.cen, self.lsn = meta.sen, meta.csn, meta.cen, meta.lsn

    def as_tuple(self) -> tuple:
        return (self.sen, self.csn, self.cen, self.lsn)

    def copy(self) -> RowHeader:
        return RowHeader(self.sen, self.csn, self.cen, self.lsn)

    def __eq__(self, other):
        return isinstance(other, RowHeader) and self.as_tuple() == other.as_tuple()

    def __repr__(self):
        return f"RowHeader(sen={self.sen}, csn={self.csn}, cen={self.cen})"


class Row:
    __slots__ = ("key", "data", "header", "committed_csn", "committed_cen", "deleted")

    def __init__(self, key: Key, data: bytes, header: RowHeader | None = None,
                 committed_csn: Csn = INITIAL_CSN, committed_cen: EpochNo = 0):
        self.key = key
        self.data = data
        self.header = header if header is not None else RowHeader()
        self.committed_csn = committed_csn
        self.committed_cen = committed_cen
        # Tombstone flag, only used by the asynchronous (last-writer-wins) mode.
        self.deleted = False

    def copy(self) -> Row:
        r = Row(self.key, self.data, self.header.copy(), self.committed_csn, self.committed_cen)
        r.deleted = self.deleted
        return r

    def __repr__(self):
        return f"Row({self.key!r}, {self.data!r}, {self.header}, cen={self.committed_cen})"


@dataclass(frozen=True, slots=True)
class ReadRecord:
    key: Key
    csn: Csn
    cen: EpochNo
    data: bytes


class TempEntry:
    __slots__ = ("header", "data", "written")

    def __init__(self, header: RowHeader):
        self.header = header
        self.data = b""
        self.written = False


class TempInsertTable:
    """Inserted rows for the epoch being merged, keyed by row key."""

    def __init__(self):
        self.entries: dict[Key, TempEntry] = {}

    def get(self, key: Key) -> TempEntry | None:
        return self.entries.get(key)

    def __len__(self):
        return len(self.entries)

    def clear(self):
        self.entries.clear()


def row_hash(key: Key, data: bytes, cen: EpochNo) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack(">I", len(key)))
    h.update(key)
    h.update(struct.pack(">IQ", len(data), cen))
    h.update(data)
    return int.from_bytes(h.digest(), "big")


class Store:
    """Ordered-by-key row store.

    ``digest`` is an order-independent running hash over live rows, kept in
    step with every committed change so per-snapshot fingerprints are cheap.
    :meth:`fingerprint` is the canonical key-ordered serialization hash.
    """

    def __init__(self):
        self._rows: dict[Key, Row] = {}
        self.temp = TempInsertTable()
        self.digest = 0
        self._stripes = [threading.Lock() for _ in range(_N_STRIPES)]
        self._publish = threading.Lock()

    # -- construction -----------------------------------------------------

    def preload(self, items) -> None:
        for key, data in items:
            if not key:
                raise ValueError("keys must be nonempty")
            self._rows[key] = Row(key, data)
            self.digest = (self.digest + row_hash(key, data, 0)) & _MASK

    def copy(self) -> Store:
        s = Store()
        s._rows = {k: r.copy() for k, r in self._rows.items()}
        for k, e in self.temp.entries.items():
            c = s.temp.entries[k] = TempEntry(e.header.copy())
            c.data, c.written = e.data, e.written
        s.digest = self.digest
        return s

    # -- lookups ----------------------------------------------------------

    def lock_for(self, key: Key) -> threading.Lock:
        return self._stripes[hash(key) % _N_STRIPES]

    def find_row(self, key: Key) -> Row | None:
        row = self._rows.get(key)
        if row is None or row.deleted:
            return None
        return row

    def raw_row(self, key: Key) -> Row | None:
        return self._rows.get(key)

    def read_committed(self, key: Key) -> ReadRecord | None:
        row = self._rows.get(key)
        if row is None or row.deleted:
            return None
        # data/csn/cen are published together under this lock by write_back.
        with self._publish:
            return ReadRecord(key, row.committed_csn, row.committed_cen, row.data)

    def __contains__(self, key: Key) -> bool:
        return self.find_row(key) is not None

    def __len__(self) -> int:
        return sum(1 for r in self._rows.values() if not r.deleted)

    def keys(self) -> list[Key]:
        return sorted(k for k, r in self._rows.items() if not r.deleted)

    def rows(self) -> Iterator[Row]:
        for k in sorted(self._rows):
            r = self._rows[k]
            if not r.deleted:
                yield r

    # -- committed mutation -----------------------------------------------

    def _set_committed(self, row: Row, data: bytes, csn: Csn, cen: EpochNo) -> None:
        old = row_hash(row.key, row.data, row.committed_cen)
        new = row_hash(row.key, data, cen)
        with self._publish:
            row.data = data
            row.committed_csn = csn
            row.committed_cen = cen
            self.digest = (self.digest - old + new) & _MASK

    def write_back(self, key: Key, data: bytes, meta: TxnMeta, delete: bool = False) -> None:
        row = self._rows.get(key)
        if row is None or row.deleted:
            raise StoreCorruption(f"write-back to missing row {key!r}")
        if row.header.csn != meta.csn:
            raise StoreCorruption(f"row {key!r} header owned by {row.header.csn}, not {meta.csn}")
        if delete:
            with self._publish:
                self.digest = (self.digest - row_hash(key, row.data, row.committed_cen)) & _MASK
                del self._rows[key]
        else:
            self._set_committed(row, data, meta.csn, meta.cen)

    def write_back_insert(self, key: Key, data: bytes, meta: TxnMeta) -> None:
        entry = self.temp.get(key)
        if entry is None or entry.header.csn != meta.csn:
            raise StoreCorruption(f"insert write-back for {key!r} not owned by {meta.csn}")
        entry.data = data
        entry.written = True

    def promote_inserts(self) -> list[Key]:
        """Move written-back temp inserts into the index (deterministic key order)."""
        promoted = []
        for key in sorted(self.temp.entries):
            entry = self.temp.entries[key]
            if not entry.written:
                continue
            if key in self._rows and not self._rows[key].deleted:
                raise StoreCorruption(f"insert of {key!r} collides with a live row")
            row = Row(key, b"", entry.header.copy())
            row.data = entry.data
            row.committed_csn = entry.header.csn
            row.committed_cen = entry.header.cen
            self._rows[key] = row
            self.digest = (self.digest + row_hash(key, row.data, row.committed_cen)) & _MASK
            promoted.append(key)
        self.temp.clear()
        return promoted

    # -- last-writer-wins path (asynchronous mode) ------------------------

    def lww_put(self, key: Key, data: bytes, meta: TxnMeta, delete: bool) -> None:
        row = self._rows.get(key)
        if row is None:
            row = Row(key, b"", RowHeader(), committed_cen=0)
            row.deleted = True
            self._rows[key] = row
        with self._publish:
            if not row.deleted:
                self.digest = (self.digest - row_hash(key, row.data, row.committed_cen)) & _MASK
            row.header.assign(meta)
            row.data = b"" if delete else data
            row.committed_csn = meta.csn
            row.committed_cen = meta.cen
            row.deleted = delete
            if not delete:
                self.digest = (self.digest + row_hash(key, row.data, row.committed_cen)) & _MASK

    # -- fingerprints -----------------------------------------------------

    def canonical_bytes(self) -> bytes:
        parts = []
        for r in self.rows():
            parts.append(struct.pack(">I", len(r.key)) + r.key
                         + struct.pack(">I", len(r.data)) + r.data
                         + struct.pack(">Q", r.committed_cen))
        return b"".join(parts)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def digest_hex(self) -> str:
        return f"{self.digest:032x}"

    def recompute_digest(self) -> int:
        d = 0
        for r in self._rows.values():
            if not r.deleted:
                d = (d + row_hash(r.key, r.data, r.committed_cen)) & _MASK
        return d
