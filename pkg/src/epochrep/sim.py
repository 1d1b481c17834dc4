"""Deterministic discrete-event simulation of a replicated cluster.

Each node has skewed virtual clock, a pool of CPU cores for transaction
workers and a serial merge server. Links add a base delay plus jitter, may
reorder, duplicate and drop messages (drops are retransmitted). Clients are
closed-loop connections in each node's region. A run is a pure function of
the config, including its seed.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .checks import ConvergenceReport, check_convergence, oracle_committed
from .config import FailureSpec, SimConfig
from .coordinator import EpochBatch, MembershipView, Replica
from .faults import BackupStore, QuorumReceiver, QuorumSender, plan_recovery, rejoin_epoch
from .storage import Store
from .txn import (AbortReason, Cpu, ExecutionMode, Sleep, Status, Transaction, WaitApplied,
                  WaitDurable, WaitSnapshot, transaction_process)
from .wire import batch_size_bytes
from .workload import WorkloadGenerator, preload_items

US = 1000.0  # microseconds per millisecond


@dataclass(order=True)
class SimEvent:
    at: float
    tiebreak: int
    kind: str = field(compare=False)
    node: int = field(compare=False)
    fn: Callable = field(compare=False, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)


class LinkModel:
    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.base = [[d * US for d in row] for row in cfg.delay_matrix()]
        self.jitter = cfg.jitter_ms * US
        self.window = cfg.reorder_window
        self.step = cfg.reorder_step_ms * US
        self.dup = cfg.duplicate_prob
        self.drop = cfg.drop_prob
        self.rto = cfg.rto_ms * US
        self.rng = rng

    def delay(self, src: int, dst: int) -> float:
        d = self.base[src][dst]
        if self.jitter:
            d += float(self.rng.random()) * self.jitter
        if self.window:
            d += int(self.rng.integers(0, self.window + 1)) * self.step
        return d

    def dropped(self) -> bool:
        return self.drop > 0 and float(self.rng.random()) < self.drop

    def duplicated(self) -> bool:
        return self.dup > 0 and float(self.rng.random()) < self.dup


class Server:
    """FIFO multi-server queue in virtual time."""

    def __init__(self, sim: Simulation, node: int, slots: int, name: str):
        self.sim, self.node, self.slots, self.name = sim, node, slots, name
        self.busy = 0
        self.queue: deque = deque()

    def submit(self, us: float, cb: Callable, *args) -> None:
        if self.busy < self.slots:
            self.busy += 1
            self.sim.at(self.sim.now + us, self.name, self.node, self._done, cb, args)
        else:
            self.queue.append((us, cb, args))

    def _done(self, cb, args):
        self.busy -= 1
        if self.queue:
            us, ncb, nargs = self.queue.popleft()
            self.busy += 1
            self.sim.at(self.sim.now + us, self.name, self.node, self._done, ncb, nargs)
        cb(*args)


class Worker:
    __slots__ = ("txn", "gen", "client", "node", "t_submit", "t_block", "block_phase", "t_start",
                 "wan_extra", "done_epoch")

    def __init__(self, txn, gen, client, node, t_submit, wan_extra):
        self.txn, self.gen, self.client, self.node = txn, gen, client, node
        self.t_submit = t_submit
        self.t_start = t_submit
        self.t_block = 0.0
        self.block_phase = ""
        self.wan_extra = wan_extra
        self.done_epoch = 0


class Client:
    __slots__ = ("cid", "region", "gen", "busy")

    def __init__(self, cid, region, gen):
        self.cid, self.region, self.gen = cid, region, gen
        self.busy = False


class SimNode:
    def __init__(self, sim: Simulation, nid: int, replica: Replica, skew: float):
        self.sim = sim
        self.id = nid
        self.replica = replica
        self.skew = skew
        self.cpu = Server(sim, nid, sim.cfg.cores, "cpu")
        self.merge_busy = False
        self.alive = True
        self.removed = False
        self.installed = True
        self.deferred: list = []
        self.down_since: Optional[float] = None
        self.wait_lsn: dict = defaultdict(list)
        self.wait_applied: dict = defaultdict(list)
        self.wait_durable: dict = defaultdict(list)
        self.pending_close: set = set()
        self.workers: set = set()
        self.quorum_tx = QuorumSender(nid)
        self.quorum_rx = QuorumReceiver()
        self.next_tick = 1

    def local_time(self) -> float:
        return self.sim.now + self.skew


@dataclass
class SimReport:
    config: dict
    duration_s: float
    committed: int = 0
    aborted: int = 0
    accepted: int = 0
    failed: int = 0
    completed: int = 0
    throughput: float = 0.0
    abort_rate: float = 0.0
    aborts_by_reason: dict = field(default_factory=dict)
    latency_mean_ms: float = 0.0
    latency_median_ms: float = 0.0
    latency_p99_ms: float = 0.0
    commit_latency_mean_ms: float = 0.0
    write_latency_mean_ms: float = 0.0
    breakdown_ms: dict = field(default_factory=dict)
    per_epoch: dict = field(default_factory=dict)
    lag_mean: float = 0.0
    lag_samples: int = 0
    wan_bytes: int = 0
    wan_bytes_per_txn: float = 0.0
    outbound_batches: int = 0
    outbound_nonempty: int = 0
    fingerprints: dict = field(default_factory=dict)
    final_fingerprints: dict = field(default_factory=dict)
    commit_logs: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    oracle_checked: int = 0
    oracle_mismatches: int = 0
    missing_commits: int = 0
    data_lost: bool = False
    views: list = field(default_factory=list)
    resume_ms: list = field(default_factory=list)
    initial_fingerprint: str = ""
    long_throughput: float = 0.0
    events: int = 0
    trace: list = field(default_factory=list)

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if k != "trace"}
        return json.dumps(d, sort_keys=True, default=_jsonable)

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for t, kind, nid in self.trace:
            h.update(f"{t!r}|{kind}|{nid}\n".encode())
        return h.hexdigest()

    def trace_dict(self) -> dict:
        """Everything needed to replay the run and re-check its outcome."""
        return {"config": self.config, "events": [list(e) for e in self.trace],
                "event_digest": self.trace_digest(), "fingerprints": self.fingerprints,
                "final_fingerprints": self.final_fingerprints, "commit_logs": self.commit_logs}


def _jsonable(o):
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, bytes):
        return o.hex()
    raise TypeError(f"cannot serialize {type(o)}")


class Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.now = 0.0
        self._seq = 0
        self._heap: list = []
        self.events = 0
        self.trace: Optional[list] = [] if cfg.trace else None
        ss = np.random.SeedSequence(cfg.seed)
        link_ss, skew_ss, think_ss, *region_ss = ss.spawn(3 + cfg.n_nodes)
        self.link = LinkModel(cfg, np.random.default_rng(link_ss))
        self.think_rng = np.random.default_rng(think_ss)
        self.mode = cfg.execution_mode
        self.level = cfg.isolation_level
        self.E = cfg.epoch_ms * US
        self.delay = cfg.delay_matrix()

        base = Store()
        base.preload(preload_items(cfg.workload))
        self.initial_fingerprint = base.digest_hex()
        skew_rng = np.random.default_rng(skew_ss)
        skews = [float(skew_rng.random()) * cfg.skew_ms * US for _ in range(cfg.n_nodes)]
        members = range(cfg.n_nodes)
        self.nodes: list[SimNode] = []
        for i in range(cfg.n_nodes):
            node = None
            rep = Replica(i, base.copy() if i < cfg.n_nodes - 1 else base, members,
                          clock=self._clock_for(i), epoch_us=self.E, mode=self.mode,
                          batch_size=cfg.batch_size, track_durability=True)
            rep.record_updates = cfg.check_oracle
            node = SimNode(self, i, rep, skews[i])
            self.nodes.append(node)
        self.view = MembershipView(0, frozenset(members), 0)
        self.views = [self.view]
        self.backups = {i: BackupStore() for i in range(cfg.n_nodes)}  # hosted per region
        self.clients: list[Client] = []
        for r in range(cfg.n_nodes):
            gen = WorkloadGenerator(cfg.workload, np.random.default_rng(region_ss[r]))
            for c in range(cfg.connections_per_node):
                self.clients.append(Client(len(self.clients), r, gen))
        self.route = {r: r for r in range(cfg.n_nodes)}
        self.stop_clients_at = cfg.duration_ms * US
        self.warmup = cfg.warmup_ms * US

        # metrics
        self.lat_all: list = []
        self.lat_commit: list = []
        self.lat_write: list = []
        self.status_counts = defaultdict(int)
        self.reasons = defaultdict(int)
        self.phases = defaultdict(float)
        self.n_phase = 0
        self.per_epoch_commits = defaultdict(int)
        self.per_epoch_aborts = defaultdict(int)
        self.per_epoch_by_cen = defaultdict(int)
        self.lag_sum = 0
        self.lag_n = 0
        self.wan_bytes = 0
        self.outbound_batches = 0
        self.outbound_nonempty = 0
        self.reported_commits: list = []
        self.data_lost = False
        self.crash_times: dict = {}
        self.resume_ms: list = []
        self.blocked_epoch: dict = {}
        self.long_committed = 0
        self.oracle_checked = 0
        self.oracle_mismatches = 0

    # -- event plumbing -------------------------------------------------------

    def _clock_for(self, i):
        return lambda: self.now + self.nodes[i].skew

    def at(self, t: float, kind: str, node: int, fn: Callable, *args) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, node, fn, args))

    def run(self) -> SimReport:
        cfg = self.cfg
        drain = cfg.drain_ms if cfg.drain_ms is not None else (
            max(max(r) for r in self.delay) * 6 + cfg.epoch_ms * 8 + cfg.rto_ms * 2 + 50)
        self.end_ticks = (cfg.duration_ms + drain) * US
        for node in self.nodes:
            self._schedule_tick(node)
        for c in self.clients:
            self.at(float(self.think_rng.random()) * self.E, "arrival", -1, self._client_next, c)
        for f in cfg.failures:
            self.at(f.at_ms * US, "crash", f.node, self._crash, f)
        while self._heap:
            t, _, kind, nid, fn, args = heapq.heappop(self._heap)
            if nid >= 0 and kind not in ("crash", "membership", "recover"):
                node = self.nodes[nid]
                if not node.alive:
                    if not node.removed:
                        node.deferred.append((kind, fn, args))
                    continue
            self.now = t
            self.events += 1
            if self.trace is not None:
                self.trace.append((round(t, 3), kind, nid))
            fn(*args)
        return self._report()

    # -- epochs -----------------------------------------------------------------

    def _schedule_tick(self, node: SimNode) -> None:
        t = node.next_tick * self.E - node.skew
        if t > self.end_ticks:
            return
        self.at(max(t, self.now), "tick", node.id, self._tick, node)

    def _tick(self, node: SimNode) -> None:
        k = node.next_tick
        node.next_tick += 1
        rep = node.replica
        if k > rep.closed_through:
            node.pending_close.add(k)
        self._try_close(node)
        if self.now >= self.warmup and self.now < self.stop_clients_at and node.installed:
            # sample mid-epoch so the lag is a time average
            self.at(self.now + self.E / 2, "sample", node.id, self._sample_lag, node)
        self._schedule_tick(node)

    def _sample_lag(self, node: SimNode) -> None:
        if node.installed and self.mode is not ExecutionMode.GEOG_A:
            self.lag_sum += node.replica.current_epoch() - node.replica.lsn
            self.lag_n += 1

    def _try_close(self, node: SimNode) -> None:
        rep = node.replica
        while rep.closed_through + 1 in node.pending_close:
            e = rep.closed_through + 1
            if not rep.can_close(e):
                return
            node.pending_close.discard(e)
            batches = rep.close_epoch(e)
            self._ship(node, e, batches)
            self._kick_merge(node)

    def _ship(self, node: SimNode, e: int, batches: list[EpochBatch]) -> None:
        ft = self.cfg.fault_tolerance
        peers = [p for p in node.replica.peers(e)]
        self.outbound_batches += len(batches)
        self.outbound_nonempty += sum(1 for b in batches if b.updates)
        rep = node.replica
        if ft == "quorum_ack":
            if node.quorum_tx.start(e, len(peers) + 1):
                self._quorum_commit(node, e, peers)
        for b in batches:
            size = batch_size_bytes(b)
            for p in peers:
                self.wan_bytes += size
                self._send(node.id, p, "qbatch" if ft == "quorum_ack" else "batch", b)
        if ft == "none":
            rep.mark_durable(e)
            self._wake_durable(node)
        elif ft == "local_backup":
            self.at(self.now + self.cfg.local_rtt_ms * US / 2, "backup", -1,
                    self._backup_store, node.id, node.id, tuple(batches))
        elif ft == "remote_backup":
            host = self._backup_host(node.id)
            self.wan_bytes += sum(batch_size_bytes(b) for b in batches)
            self.at(self.now + self.link.delay(node.id, host), "backup", -1,
                    self._backup_store, node.id, host, tuple(batches))

    def _backup_host(self, origin: int) -> int:
        return (origin + 1) % self.cfg.n_nodes

    def _backup_store(self, origin: int, host: int, batches) -> None:
        store = self.backups[host]
        if not store.alive:
            return
        store.store(batches)
        rtt_half = (self.cfg.local_rtt_ms * US / 2 if host == origin else self.link.delay(host, origin))
        self.at(self.now + rtt_half, "backup_ack", origin, self._durable, self.nodes[origin], batches[0].cen)

    def _durable(self, node: SimNode, e: int) -> None:
        node.replica.mark_durable(e)
        self._wake_durable(node)

    # -- transport ---------------------------------------------------------------

    def _send(self, src: int, dst: int, kind: str, payload, attempt: int = 0) -> None:
        f = self._failure_of(src)
        forced = (f is not None and kind in ("batch", "qbatch") and f.lose_outbound_ms
                  and f.at_ms * US - f.lose_outbound_ms * US <= self.now < f.at_ms * US
                  and dst not in f.deliver_to)
        if forced or self.link.dropped():
            if not forced:
                self.at(self.now + self.link.rto, "retransmit", src, self._send, src, dst, kind, payload, attempt + 1)
            return
        self.at(self.now + self.link.delay(src, dst), kind, dst, self._deliver, src, dst, kind, payload)
        if self.link.duplicated():
            self.at(self.now + self.link.delay(src, dst), kind, dst, self._deliver, src, dst, kind, payload)

    def _failure_of(self, nid: int) -> Optional[FailureSpec]:
        for f in self.cfg.failures:
            if f.node == nid and f.at_ms * US >= self.now:
                return f
        return None

    def _deliver(self, src: int, dst: int, kind: str, payload) -> None:
        node = self.nodes[dst]
        rep = node.replica
        if kind == "batch":
            if rep.on_receive(payload):
                self._kick_merge(node)
        elif kind == "qbatch":
            if node.quorum_rx.on_batch(payload):
                self._send(dst, src, "qack", (payload.cen, dst))
            self._quorum_release(node, payload.origin, payload.cen)
        elif kind == "qack":
            cen, peer = payload
            origin = self.nodes[dst]
            if origin.quorum_tx.on_ack(cen, peer):
                self._quorum_commit(origin, cen, origin.replica.peers(cen))
        elif kind == "qcommit":
            origin, cen = payload
            node.quorum_rx.on_commit_request(origin, cen)
            self._quorum_release(node, origin, cen)
        elif kind == "snapshot":
            self._install_snapshot(node, *payload)

    def _quorum_commit(self, node: SimNode, cen: int, peers) -> None:
        node.replica.mark_durable(cen)
        self._wake_durable(node)
        for p in peers:
            self._send(node.id, p, "qcommit", (node.id, cen))

    def _quorum_release(self, node: SimNode, origin: int, cen: int) -> None:
        got = node.quorum_rx.releasable(origin, cen)
        if got:
            fed = False
            for b in got:
                fed |= node.replica.on_receive(b)
            if fed:
                self._kick_merge(node)

    # -- merge server ------------------------------------------------------------

    def _kick_merge(self, node: SimNode) -> None:
        if node.merge_busy or not node.installed:
            return
        rep = node.replica
        cfg = self.cfg
        b = rep.next_merge_batch()
        if b is not None:
            node.merge_busy = True
            cost = cfg.batch_overhead_us + cfg.merge_us_per_record * b.n_records
            self.at(self.now + cost, "merge", node.id, self._merge_done, node, b)
            return
        if rep.barrier_ready():
            node.merge_busy = True
            n = sum(len(u.ws) for u in rep.state.commit_queue.get(rep.lsn + 1, ()))
            self.at(self.now + cfg.merge_us_per_record * n, "barrier", node.id, self._barrier_done, node)
            return
        if rep.snapshot_ready():
            node.merge_busy = True
            self.at(self.now + cfg.epoch_overhead_us, "snapshot", node.id, self._snapshot_done, node)

    def _merge_done(self, node: SimNode, b: EpochBatch) -> None:
        node.merge_busy = False
        node.replica.merge_batch(b)
        self._kick_merge(node)

    def _barrier_done(self, node: SimNode) -> None:
        node.merge_busy = False
        e = node.replica.pass_barrier()
        crashed_at = self.blocked_epoch.pop(node.id, None)
        if crashed_at is not None:
            # first epoch validated under the new view: commits flow again
            self.resume_ms.append((self.now - crashed_at) / US)
        for w in node.wait_applied.pop(e, ()):
            self._resume_later(w)
        self._kick_merge(node)

    def _snapshot_done(self, node: SimNode) -> None:
        node.merge_busy = False
        rep = node.replica
        if self.cfg.check_oracle:
            self._check_oracle(rep, rep.lsn + 1)
        e = rep.generate_snapshot()
        self._after_snapshot(node, e)
        for w in node.wait_lsn.pop(e, ()):
            self._resume_later(w)
        self._kick_merge(node)

    def _check_oracle(self, rep: Replica, e: int) -> None:
        ups = rep.epoch_updates.pop(e, [])
        known = rep.barrier_keys.pop(e, {})
        live = {k for k, v in known.items() if v}
        expected = oracle_committed(live, [(u.meta, u.ws) for u in ups])
        got = set(rep.commit_log.get(e, ()))
        self.oracle_checked += 1
        if expected != got:
            self.oracle_mismatches += 1

    def _after_snapshot(self, node: SimNode, e: int) -> None:
        donor = getattr(self, "_rejoin", None)
        if donor and donor[0] == node.id and e == donor[2] - 1:
            target = self.nodes[donor[1]]
            lsn, store, fp = node.replica.export_snapshot()
            self._send(node.id, target.id, "snapshot", (lsn, store, fp))
            self._rejoin = None

    # -- clients and workers -------------------------------------------------------

    def _client_next(self, c: Client) -> None:
        if self.now >= self.stop_clients_at:
            return
        target = self.route[c.region]
        node = self.nodes[target]
        if not node.alive or node.removed or not node.installed:
            # wait for membership to reroute
            self.at(self.now + self.E, "arrival", -1, self._client_next, c)
            return
        script = c.gen.next_txn()
        txn = Transaction(node.replica.store, self.level, script.ops, script.think_us, script.kind)
        extra = 2 * self.delay[c.region][target] * US
        gen = transaction_process(txn, node.replica, self.cfg.exec_us_per_op, self.cfg.merge_us_per_record)
        w = Worker(txn, gen, c, node, self.now, extra)
        w.t_start = self.now + extra / 2
        c.busy = True
        node.workers.add(w)
        self.at(w.t_start + self.cfg.parse_us, "start", target, self._advance, w)

    def _resume_later(self, w: Worker) -> None:
        self.at(self.now, "resume", w.node.id, self._advance, w)

    def _advance(self, w: Worker) -> None:
        txn = w.txn
        if w.block_phase:
            txn.phase_us[w.block_phase] = txn.phase_us.get(w.block_phase, 0.0) + self.now - w.t_block
            w.block_phase = ""
        node = w.node
        try:
            instr = next(w.gen)
        except StopIteration:
            self._finish(w)
            return
        w.t_block = self.now
        if isinstance(instr, Cpu):
            w.block_phase = instr.phase
            node.cpu.submit(instr.us, self._advance, w)
        elif isinstance(instr, Sleep):
            w.block_phase = instr.phase
            self.at(self.now + instr.us, "sleep", node.id, self._advance, w)
        elif isinstance(instr, WaitSnapshot):
            w.block_phase = "wait"
            if node.replica.lsn >= instr.epoch:
                self._resume_later(w)
            else:
                node.wait_lsn[instr.epoch].append(w)
                if self.mode is ExecutionMode.GEOG_S:
                    self._try_close(node)
        elif isinstance(instr, WaitApplied):
            w.block_phase = "wait"
            self._kick_merge(node)
            if node.replica.epoch_applied(instr.epoch):
                self._resume_later(w)
            else:
                node.wait_applied[instr.epoch].append(w)
        elif isinstance(instr, WaitDurable):
            w.block_phase = "wait"
            self._kick_merge(node)
            if node.replica.is_durable(instr.epoch):
                self._resume_later(w)
            else:
                node.wait_durable[instr.epoch].append(w)
        else:
            raise TypeError(f"unknown wait instruction {instr!r}")
        if self.mode is ExecutionMode.GEOG_S and node.pending_close:
            self._try_close(node)

    def _wake_durable(self, node: SimNode) -> None:
        d = node.replica.durable_through
        for e in [e for e in node.wait_durable if e <= d]:
            for w in node.wait_durable.pop(e):
                self._resume_later(w)

    def _finish(self, w: Worker) -> None:
        node = w.node
        node.workers.discard(w)
        txn = w.txn
        if txn.cen is not None and txn.write_set and txn.status in (Status.COMMITTED, Status.ABORTED) \
                and self.mode is not ExecutionMode.GEOG_A:
            self._kick_merge(node)
        if self.mode is ExecutionMode.GEOG_S:
            self._try_close(node)
        # epochs of reference (unskewed) time, used as the time axis of per-epoch counts
        w.done_epoch = int(self.now // self.E) + 1
        done = self.now + self.cfg.log_us + w.wan_extra / 2
        self.at(done, "respond", -1, self._respond, w)

    def _respond(self, w: Worker) -> None:
        txn = w.txn
        c = w.client
        c.busy = False
        in_window = self.warmup <= w.t_submit and self.now <= self.stop_clients_at
        st = txn.status
        if st is Status.COMMITTED and txn.write_set:
            self.reported_commits.append((txn.cen, txn.csn, txn.origin))
        if in_window:
            lat = self.now - w.t_submit
            self.status_counts[st] += 1
            self.lat_all.append(lat)
            if st is Status.COMMITTED or st is Status.ACCEPTED:
                self.lat_commit.append(lat)
                if txn.write_set:
                    self.lat_write.append(lat)
                self.per_epoch_commits[w.done_epoch] += 1
                if txn.cen is not None:
                    self.per_epoch_by_cen[txn.cen] += 1
                if txn.tag == "long":
                    self.long_committed += 1
                for ph, v in txn.phase_us.items():
                    self.phases[ph] += v
                self.phases["parse"] += self.cfg.parse_us
                self.phases["log"] += self.cfg.log_us
                self.n_phase += 1
            elif st is Status.ABORTED:
                self.reasons[txn.reason.value] += 1
                self.per_epoch_aborts[w.done_epoch] += 1
        think = self.cfg.client_think_ms * US
        if think:
            think *= float(self.think_rng.exponential())
        self.at(self.now + think, "arrival", -1, self._client_next, c)

    # -- failures ----------------------------------------------------------------

    def _crash(self, f: FailureSpec) -> None:
        node = self.nodes[f.node]
        if not node.alive:
            return
        node.alive = False
        node.down_since = self.now
        self.crash_times[f.node] = self.now
        if f.region:
            self.backups[f.node].alive = False
        self.at(self.now + self.cfg.membership_timeout_ms * US, "membership", -1, self._detect, f)
        if f.recover_at_ms is not None:
            self.at(f.recover_at_ms * US, "recover", -1, self._recover, f)

    def _detect(self, f: FailureSpec) -> None:
        node = self.nodes[f.node]
        if node.alive or node.removed:
            return
        node.removed = True
        node.deferred.clear()
        survivors = {n.id: n.replica for n in self.nodes if n.alive and not n.removed}
        backups = []
        if self.cfg.fault_tolerance == "local_backup":
            backups = [self.backups[f.node]]
        elif self.cfg.fault_tolerance == "remote_backup":
            backups = [self.backups[self._backup_host(f.node)]]
        quorum = ({n.id: n.quorum_rx for n in self.nodes if n.id in survivors}
                  if self.cfg.fault_tolerance == "quorum_ack" else {})
        first = node.replica.first_epoch
        plan = plan_recovery(f.node, survivors, backups, quorum, self.view, first,
                             node.replica.durable_through)
        if plan.data_lost:
            self.data_lost = True
        self.view = plan.view
        self.views.append(plan.view)
        delay = self.cfg.membership_delay_ms * US
        for sid, batches in plan.deliveries.items():
            self.at(self.now + delay, "membership", sid, self._apply_view, self.nodes[sid], plan.view, batches)
        # clients of the failed region time out and reroute to the nearest survivor
        alive = [n.id for n in self.nodes if n.alive and not n.removed]
        if alive:
            tgt = min(alive, key=lambda j: (self.delay[f.node][j], j))
            for r, cur in self.route.items():
                if cur == f.node:
                    self.route[r] = tgt
        for w in list(node.workers):
            node.workers.discard(w)
            w.txn.status = Status.FAILED
            w.client.busy = False
            if self.warmup <= w.t_submit <= self.stop_clients_at:
                self.status_counts[Status.FAILED] += 1
            self.at(self.now, "arrival", -1, self._client_next, w.client)

    def _apply_view(self, node: SimNode, view: MembershipView, batches) -> None:
        rep = node.replica
        for b in batches:
            rep.on_receive(b)
        rep.install_view(view)
        if view.live < self.views[view.view_id - 1].live if view.view_id else False:
            self.blocked_epoch[node.id] = self.crash_times[next(iter(self.views[view.view_id - 1].live - view.live))]
        self._kick_merge(node)

    def _recover(self, f: FailureSpec) -> None:
        node = self.nodes[f.node]
        if node.alive:
            return
        if not node.removed:
            # back within the timeout: nothing changed, replay what was held
            node.alive = True
            node.down_since = None
            held, node.deferred = node.deferred, []
            for kind, fn, args in held:
                self.at(self.now, kind, node.id, fn, *args)
            if f.region:
                self.backups[f.node].alive = True
            return
        self._rejoin_node(node, f)

    def _rejoin_node(self, node: SimNode, f: FailureSpec) -> None:
        survivors = [n for n in self.nodes if n.alive and not n.removed]
        if not survivors:
            return
        J = rejoin_epoch((n.replica.current_epoch() for n in survivors), self.cfg.epoch_ms,
                         self.cfg.membership_delay_ms)
        view = MembershipView(self.view.view_id + 1, self.view.live | {node.id}, J)
        self.view = view
        self.views.append(view)
        old = node.replica
        rep = Replica(node.id, Store(), old.views[0].live, clock=self._clock_for(node.id), epoch_us=self.E,
                      mode=self.mode, batch_size=self.cfg.batch_size, first_epoch=J - 1, track_durability=True)
        rep.csn_clock = old.csn_clock
        rep.views = list(self.views)
        rep.record_updates = self.cfg.check_oracle
        rep.durable_through = J - 1
        node.replica = rep
        node.alive, node.removed, node.installed = True, False, False
        node.deferred = []
        node.pending_close = set()
        node.wait_lsn.clear(); node.wait_applied.clear(); node.wait_durable.clear()
        node.quorum_tx = QuorumSender(node.id)
        node.quorum_rx = QuorumReceiver()
        if f.region:
            self.backups[f.node] = BackupStore()
        node.next_tick = J
        self._schedule_tick(node)
        delay = self.cfg.membership_delay_ms * US
        for n in survivors:
            self.at(self.now + delay, "membership", n.id, self._apply_view, n, view, ())
        self._rejoin = (min(n.id for n in survivors), node.id, J)

    def _install_snapshot(self, node: SimNode, lsn, store, fp) -> None:
        if node.installed:
            return
        rep = node.replica
        rep.install_snapshot(lsn, store.copy(), fp)
        node.installed = True
        for r in self.route:
            if r == node.id:
                self.route[r] = node.id
        self._kick_merge(node)

    # -- reporting -----------------------------------------------------------------

    def _report(self) -> SimReport:
        cfg = self.cfg
        window_s = (cfg.duration_ms - cfg.warmup_ms) / 1000.0
        rep = SimReport(config=cfg.to_dict(), duration_s=window_s)
        sc = self.status_counts
        rep.committed = sc[Status.COMMITTED]
        rep.aborted = sc[Status.ABORTED]
        rep.accepted = sc[Status.ACCEPTED]
        rep.failed = sc[Status.FAILED]
        rep.completed = rep.committed + rep.aborted + rep.accepted
        good = rep.committed + rep.accepted
        rep.throughput = good / window_s
        rep.long_throughput = self.long_committed / window_s
        rep.abort_rate = rep.aborted / rep.completed if rep.completed else 0.0
        rep.aborts_by_reason = dict(sorted(self.reasons.items()))
        if self.lat_all:
            a = np.asarray(self.lat_all) / US
            rep.latency_mean_ms = float(a.mean())
            rep.latency_median_ms = float(np.median(a))
            rep.latency_p99_ms = float(np.percentile(a, 99))
        if self.lat_commit:
            rep.commit_latency_mean_ms = float(np.mean(self.lat_commit) / US)
        if self.lat_write:
            rep.write_latency_mean_ms = float(np.mean(self.lat_write) / US)
        if self.n_phase:
            rep.breakdown_ms = {k: v / self.n_phase / US for k, v in sorted(self.phases.items())}
        lo = int(cfg.warmup_ms // cfg.epoch_ms) + 1
        hi = int(cfg.duration_ms // cfg.epoch_ms) - int(max(max(r) for r in self.delay) // cfg.epoch_ms) - 2
        rep.per_epoch = {"first": lo, "commits": [self.per_epoch_commits.get(e, 0) for e in range(lo, hi + 1)],
                         "aborts": [self.per_epoch_aborts.get(e, 0) for e in range(lo, hi + 1)],
                         "commits_by_cen": [self.per_epoch_by_cen.get(e, 0) for e in range(lo, hi + 1)]}
        rep.lag_mean = self.lag_sum / self.lag_n if self.lag_n else 0.0
        rep.lag_samples = self.lag_n
        rep.wan_bytes = self.wan_bytes
        rep.wan_bytes_per_txn = self.wan_bytes / good if good else 0.0
        rep.outbound_batches = self.outbound_batches
        rep.outbound_nonempty = self.outbound_nonempty
        live = [n for n in self.nodes if n.alive and not n.removed]
        rep.fingerprints = {str(n.id): n.replica.snapshots for n in live}
        rep.final_fingerprints = {str(n.id): n.replica.store.fingerprint() for n in live}
        rep.commit_logs = {str(n.id): {str(e): sorted(map(list, v)) for e, v in n.replica.commit_log.items()}
                           for n in live}
        conv = check_convergence({n.id: n.replica.snapshots for n in live},
                                 {n.id: dict(n.replica.commit_log) for n in live},
                                 {n.id: n.replica.store for n in live})
        if self.mode is ExecutionMode.GEOG_A:
            fps = set(rep.final_fingerprints.values())
            conv = ConvergenceReport(len(fps) <= 1, 1, message="final state" if len(fps) <= 1 else "final states differ")
        rep.convergence = {"ok": conv.ok, "epochs_checked": conv.epochs_checked,
                           "first_divergent_epoch": conv.first_divergent_epoch, "message": str(conv)}
        rep.oracle_checked = self.oracle_checked
        rep.oracle_mismatches = self.oracle_mismatches
        rep.missing_commits = self._missing_commits(live)
        rep.data_lost = self.data_lost
        rep.views = [{"view_id": v.view_id, "live": sorted(v.live), "from": v.effective_from_epoch}
                     for v in self.views]
        rep.resume_ms = sorted(self.resume_ms)
        rep.initial_fingerprint = self.initial_fingerprint
        rep.events = self.events
        rep.trace = self.trace or []
        return rep

    def _missing_commits(self, live) -> int:
        """Client-acknowledged write transactions absent from a member's commit log."""
        if self.mode is ExecutionMode.GEOG_A:
            return 0
        logs = {n.id: {e: set(v) for e, v in n.replica.commit_log.items()} for n in live}
        missing = 0
        for cen, csn, origin in self.reported_commits:
            for n in live:
                r = n.replica
                if cen <= r.first_epoch or cen > r.lsn:
                    continue
                if csn not in logs[n.id].get(cen, ()):
                    missing += 1
                    break
        return missing


def run(cfg: SimConfig) -> SimReport:
    return Simulation(cfg).run()
