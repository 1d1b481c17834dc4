"""Write-set durability and recovery of a failed node's updates.

These are pure state machines. The simulator decides when messages arrive
and calls into them; the membership service itself is a simulator oracle.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .coordinator import EpochBatch, MembershipView
from .core import EpochNo, NodeId


class DataLoss(RuntimeError):
    pass


class BackupStore:
    """Complete epoch batches per origin, keyed by (origin, cen)."""

    def __init__(self):
        self.batches: dict[NodeId, dict[EpochNo, tuple[EpochBatch, ...]]] = defaultdict(dict)
        self.highest: dict[NodeId, EpochNo] = {}
        self.alive = True

    def store(self, batches: Iterable[EpochBatch]) -> bool:
        """Store one complete (origin, cen) batch set. Returns True if new."""
        batches = tuple(sorted(batches, key=lambda b: b.mini_batch_seq))
        if not batches or not batches[-1].eof or len(batches) != batches[-1].mini_batch_seq + 1:
            raise ValueError("backup only accepts complete epoch batches")
        origin, cen = batches[0].origin, batches[0].cen
        if cen in self.batches[origin]:
            return False
        self.batches[origin][cen] = batches
        self.highest[origin] = max(self.highest.get(origin, 0), cen)
        return True

    def highest_cen(self, origin: NodeId) -> EpochNo:
        return self.highest.get(origin, 0)

    def epochs(self, origin: NodeId) -> set[EpochNo]:
        return set(self.batches.get(origin, {}))

    def get(self, origin: NodeId, cen: EpochNo) -> Optional[tuple[EpochBatch, ...]]:
        return self.batches.get(origin, {}).get(cen)


class QuorumSender:
    """Tracks acks for one node's epoch batches."""

    def __init__(self, node: NodeId):
        self.node = node
        self.acks: dict[EpochNo, set[NodeId]] = defaultdict(set)
        self.members: dict[EpochNo, int] = {}
        self.committed: set[EpochNo] = set()

    def start(self, cen: EpochNo, view_size: int) -> bool:
        """Register an epoch. Returns True if self alone is already a majority."""
        self.members[cen] = view_size
        return self._check(cen)

    def on_ack(self, cen: EpochNo, peer: NodeId) -> bool:
        """Record an ack. Returns True exactly once, when the majority is reached."""
        self.acks[cen].add(peer)
        return self._check(cen)

    def _check(self, cen: EpochNo) -> bool:
        if cen in self.committed or cen not in self.members:
            return False
        if len(self.acks[cen]) + 1 > self.members[cen] / 2:
            self.committed.add(cen)
            return True
        return False


class QuorumReceiver:
    """Buffers a peer's batches until its commit request arrives."""

    def __init__(self):
        self.parts: dict[tuple[NodeId, EpochNo], dict[int, EpochBatch]] = defaultdict(dict)
        self.last: dict[tuple[NodeId, EpochNo], int] = {}
        self.commit_requested: set[tuple[NodeId, EpochNo]] = set()
        self.released: set[tuple[NodeId, EpochNo]] = set()

    def complete(self, origin: NodeId, cen: EpochNo) -> bool:
        k = (origin, cen)
        return k in self.last and len(self.parts[k]) == self.last[k] + 1

    def on_batch(self, b: EpochBatch) -> bool:
        """Buffer a mini-batch. Returns True when the (origin, cen) set just became complete."""
        k = (b.origin, b.cen)
        if b.mini_batch_seq in self.parts[k]:
            return False
        self.parts[k][b.mini_batch_seq] = b
        if b.eof:
            self.last[k] = b.mini_batch_seq
        return self.complete(*k)

    def on_commit_request(self, origin: NodeId, cen: EpochNo) -> None:
        self.commit_requested.add((origin, cen))

    def releasable(self, origin: NodeId, cen: EpochNo) -> Optional[list[EpochBatch]]:
        """The batches to hand to the coordinator, once, after commit request + completeness."""
        k = (origin, cen)
        if k in self.released or k not in self.commit_requested or not self.complete(origin, cen):
            return None
        self.released.add(k)
        return self.batches(origin, cen)

    def batches(self, origin: NodeId, cen: EpochNo) -> Optional[list[EpochBatch]]:
        if not self.complete(origin, cen):
            return None
        parts = self.parts[(origin, cen)]
        return [parts[i] for i in range(len(parts))]

    def epochs(self, origin: NodeId) -> set[EpochNo]:
        return {c for (o, c) in self.last if o == origin and self.complete(o, c)}


def contiguous_through(epochs: set[EpochNo], start: EpochNo) -> EpochNo:
    e = start
    while e + 1 in epochs:
        e += 1
    return e


@dataclass
class RecoveryPlan:
    failed: NodeId
    view: MembershipView
    # survivor -> batches it must merge before the new view takes effect
    deliveries: dict[NodeId, list[EpochBatch]] = field(default_factory=dict)
    data_lost: bool = False


def plan_recovery(failed: NodeId, survivors: dict, backups: list[BackupStore],
                  quorum: dict, current: MembershipView, first_epoch: EpochNo,
                  durable_through: EpochNo) -> RecoveryPlan:
    """Work out the new view and the batches each survivor is missing.

    ``survivors`` maps node id to its :class:`~epochrep.coordinator.Replica`;
    ``quorum`` maps node id to its :class:`QuorumReceiver` (may be empty).
    The failed node's updates are kept for every epoch that is held by at
    least one live source without gaps; the new view excludes the node from
    the first epoch nobody has.
    """
    have: set[EpochNo] = set()
    for r in survivors.values():
        have |= {e for e in r.complete_from.get(failed, set()) if r.batches_from(failed, e) is not None}
    for b in backups:
        if b.alive:
            have |= b.epochs(failed)
    for q in quorum.values():
        have |= q.epochs(failed)
    last = contiguous_through(have, first_epoch)
    effective = last + 1
    view = MembershipView(current.view_id + 1, current.live - {failed}, effective)
    plan = RecoveryPlan(failed, view, data_lost=durable_through > last)

    def fetch(cen):
        for r in survivors.values():
            got = r.batches_from(failed, cen)
            if got is not None:
                return list(got)
        for b in backups:
            if b.alive and b.get(failed, cen) is not None:
                return list(b.get(failed, cen))
        for q in quorum.values():
            got = q.batches(failed, cen)
            if got is not None:
                return got
        raise DataLoss(f"no source for epoch {cen} of node {failed}")

    for sid, r in survivors.items():
        out = []
        for cen in range(max(r.lsn, first_epoch) + 1, effective):
            if cen in r.complete_from.get(failed, set()) and r.batches_from(failed, cen) is not None:
                continue
            out.extend(fetch(cen))
        plan.deliveries[sid] = out
    return plan


def rejoin_epoch(survivor_epochs: Iterable[EpochNo], epoch_ms: float, delay_ms: float) -> EpochNo:
    """First epoch that includes a rejoining node.

    Far enough ahead that no survivor has closed it when the view arrives.
    """
    return max(survivor_epochs) + 2 + math.ceil(delay_ms / epoch_ms)
