"""Epoch-based multi-master optimistic replication with delta-state merge."""

from .config import FailureSpec, SimConfig, load_config
from .coordinator import EpochBatch, MembershipView, Replica, Update, package_outbound
from .core import Csn, CsnClock, OpKind, TxnMeta, WriteRecord, new_csn, precedes
from .merge import ProtocolViolation, delta_crdt_merge, merge_insert
from .sim import SimReport, Simulation, run
from .storage import Store
from .txn import ExecutionMode, IsolationLevel, Status, Transaction, validate_reads
from .workload import PRESETS, WorkloadSpec

__all__ = [
    "Csn", "CsnClock", "EpochBatch", "ExecutionMode", "FailureSpec", "IsolationLevel",
    "MembershipView", "OpKind", "PRESETS", "ProtocolViolation", "Replica", "SimConfig",
    "SimReport", "Simulation", "Status", "Store", "Transaction", "TxnMeta", "Update",
    "WorkloadSpec", "WriteRecord", "delta_crdt_merge", "load_config", "merge_insert",
    "new_csn", "package_outbound", "precedes", "run", "validate_reads",
]
