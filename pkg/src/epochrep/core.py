"""Identifiers, transaction metadata, and the update order used by merge."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import NamedTuple

NodeId = int
EpochNo = int
Key = bytes


class Csn(NamedTuple):
    """Commit sequence number. Tuple comparison gives (local_time, node) order."""

    local_time: int
    node: NodeId


# Header value for rows that exist before any transaction ran.
INITIAL_CSN = Csn(0, -1)


@dataclass(frozen=True, slots=True)
class TxnMeta:
    sen: EpochNo
    lsn: EpochNo
    csn: Csn
    cen: EpochNo

    def __post_init__(self):
        if not (self.lsn <= self.sen <= self.cen):
            raise ValueError(f"expected lsn <= sen <= cen, got {self.lsn}, {self.sen}, {self.cen}")


class OpKind(enum.IntEnum):
    INSERT = 1
    UPDATE = 2
    DELETE = 3


@dataclass(frozen=True, slots=True)
class WriteRecord:
    key: Key
    op_kind: OpKind
    data: bytes = b""


class OrderError(ValueError):
    """Raised when two updates cannot be ordered (different epochs or same csn)."""


def precedes(a: TxnMeta, b: TxnMeta) -> bool:
    """True if update ``a`` is ordered before ``b`` within one commit epoch.

    A larger start epoch orders first; equal start epochs fall back to the
    smaller csn.
    """
    if a.cen != b.cen:
        raise OrderError(f"order is only defined within one epoch ({a.cen} != {b.cen})")
    if a.csn == b.csn:
        raise OrderError(f"csn {a.csn} is not unique")
    if a.sen != b.sen:
        return a.sen > b.sen
    return a.csn < b.csn


def order_key(meta: TxnMeta) -> tuple:
    """Sort key consistent with :func:`precedes` for updates sharing a cen."""
    return (-meta.sen, meta.csn)


class CsnClock:
    """Issues strictly increasing csns for one node.

    Clock ties (or a clock that stalls) are broken by bumping past the last
    issued value, so the local time component is a per-node sequence floor.
    """

    def __init__(self, node: NodeId):
        self.node = node
        self._last = 0
        self._lock = threading.Lock()

    def new_csn(self, now: int) -> Csn:
        with self._lock:
            t = max(int(now), self._last + 1)
            self._last = t
            return Csn(t, self.node)

    @property
    def last(self) -> int:
        return self._last


def new_csn(clock: CsnClock, now: int) -> Csn:
    return clock.new_csn(now)
