"""Simulation configuration, loadable from YAML."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .txn import ExecutionMode, IsolationLevel
from .workload import WorkloadSpec

FAULT_MODES = ("none", "local_backup", "remote_backup", "quorum_ack")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FailureSpec:
    """A scripted crash.

    ``region`` also takes down the region's local backup server.
    Outbound batch messages sent in the last ``lose_outbound_ms`` before the
    crash reach only the nodes in ``deliver_to``.
    """

    node: int
    at_ms: float
    recover_at_ms: Optional[float] = None
    region: bool = False
    lose_outbound_ms: float = 0.0
    deliver_to: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> FailureSpec:
        d = dict(d)
        if "deliver_to" in d:
            d["deliver_to"] = tuple(d["deliver_to"])
        return cls(**d)


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 3
    # one-way delay: a scalar for a uniform mesh or an n x n matrix
    delay_ms: Union[float, tuple] = 30.0
    jitter_ms: float = 1.0
    reorder_window: int = 0
    reorder_step_ms: float = 0.5
    duplicate_prob: float = 0.0
    drop_prob: float = 0.0
    rto_ms: float = 100.0
    skew_ms: float = 0.0
    epoch_ms: float = 10.0
    batch_size: int = 32
    connections_per_node: int = 64
    cores: int = 4
    exec_us_per_op: float = 100.0
    merge_us_per_record: float = 2.0
    batch_overhead_us: float = 50.0
    epoch_overhead_us: float = 1200.0
    parse_us: float = 0.0
    log_us: float = 0.0
    client_think_ms: float = 2.0
    isolation: str = "SI"
    mode: str = "geogauss"
    fault_tolerance: str = "none"
    local_rtt_ms: float = 0.2
    membership_timeout_ms: float = 500.0
    membership_delay_ms: float = 5.0
    duration_ms: float = 2000.0
    warmup_ms: float = 300.0
    drain_ms: Optional[float] = None
    seed: int = 0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    failures: tuple = ()
    check_oracle: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be at least 1")
        if self.epoch_ms <= 0:
            raise ConfigError("epoch_ms must be positive")
        if self.mode not in {m.value for m in ExecutionMode}:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.isolation not in {l.value for l in IsolationLevel}:
            raise ConfigError(f"unknown isolation {self.isolation!r}")
        if self.fault_tolerance not in FAULT_MODES:
            raise ConfigError(f"unknown fault_tolerance {self.fault_tolerance!r}")
        for name in ("duplicate_prob", "drop_prob"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.cores < 1 or self.connections_per_node < 0 or self.batch_size < 1:
            raise ConfigError("cores and batch_size must be positive")
        if self.duration_ms <= self.warmup_ms:
            raise ConfigError("duration_ms must exceed warmup_ms")
        m = self.delay_matrix()
        if len(m) != self.n_nodes or any(len(r) != self.n_nodes for r in m):
            raise ConfigError("delay matrix must be n_nodes x n_nodes")
        if self.failures:
            worst = max(max(r) for r in m) + self.jitter_ms + self.reorder_window * self.reorder_step_ms
            if worst >= self.membership_timeout_ms:
                raise ConfigError("worst-case link delay must be below the membership timeout")
            if self.membership_delay_ms >= self.membership_timeout_ms:
                raise ConfigError("membership_delay_ms must be below the timeout")
        for f in self.failures:
            if not 0 <= f.node < self.n_nodes:
                raise ConfigError(f"failure names unknown node {f.node}")

    def delay_matrix(self) -> list[list[float]]:
        if isinstance(self.delay_ms, (int, float)):
            d = float(self.delay_ms)
            return [[0.0 if i == j else d for j in range(self.n_nodes)] for i in range(self.n_nodes)]
        return [[float(x) for x in row] for row in self.delay_ms]

    @property
    def execution_mode(self) -> ExecutionMode:
        return ExecutionMode(self.mode)

    @property
    def isolation_level(self) -> IsolationLevel:
        return IsolationLevel(self.isolation)

    def with_(self, **kw) -> SimConfig:
        if "workload" in kw and isinstance(kw["workload"], dict):
            kw["workload"] = replace(self.workload, **kw["workload"])
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failures"] = [asdict(f) for f in self.failures]
        if not isinstance(self.delay_ms, (int, float)):
            d["delay_ms"] = [list(r) for r in self.delay_ms]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "workload" in d:
            w = d["workload"]
            d["workload"] = WorkloadSpec.from_dict(w if isinstance(w, dict) else {"preset": w})
        if "failures" in d:
            d["failures"] = tuple(FailureSpec.from_dict(f) for f in d["failures"] or ())
        if isinstance(d.get("delay_ms"), list):
            d["delay_ms"] = tuple(tuple(r) for r in d["delay_ms"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: Union[str, Path]) -> SimConfig:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return SimConfig.from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
