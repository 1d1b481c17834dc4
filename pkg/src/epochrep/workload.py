"""YCSB-style transaction scripts with zipfian key choice."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .txn import Op

KEY_WIDTH = 10


def key_of(i: int) -> bytes:
    return b"k%0*d" % (KEY_WIDTH, i)


@dataclass(frozen=True)
class WorkloadSpec:
    table_rows: int = 100_000
    ops_per_txn: int = 10
    read_fraction: float = 0.8
    zipf_theta: float = 0.8
    long_txn_fraction: float = 0.0
    long_txn_delay_ms: float = 0.0
    composite_txn_fraction: float = 0.0
    value_size: int = 16

    def __post_init__(self):
        for name in ("read_fraction", "long_txn_fraction", "composite_txn_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 <= self.zipf_theta <= 0.99:
            raise ValueError(f"zipf_theta must be in [0, 0.99], got {self.zipf_theta}")
        if self.table_rows < 1 or self.ops_per_txn < 1:
            raise ValueError("table_rows and ops_per_txn must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> WorkloadSpec:
        d = dict(d)
        base = PRESETS[d.pop("preset")] if "preset" in d else cls()
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown workload keys: {sorted(unknown)}")
        return replace(base, **d)


PRESETS = {
    "YCSB-RO": WorkloadSpec(read_fraction=1.0, zipf_theta=0.0),
    "YCSB-MC": WorkloadSpec(read_fraction=0.8, zipf_theta=0.8),
    "YCSB-HC": WorkloadSpec(read_fraction=0.5, zipf_theta=0.9),
}


def zipf_probabilities(n: int, theta: float) -> np.ndarray:
    """P(rank i) proportional to 1 / i**theta for ranks 1..n."""
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return w / w.sum()


class ZipfSampler:
    """Draws ranks 0..n-1 (0 is hottest) by inverse-CDF search, buffered."""

    def __init__(self, n: int, theta: float, rng: np.random.Generator, block: int = 4096):
        self.n = n
        self.rng = rng
        self.block = block
        self._cdf = None if theta == 0 else np.cumsum(zipf_probabilities(n, theta))
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def sample(self, size: int) -> np.ndarray:
        if self._cdf is None:
            return self.rng.integers(0, self.n, size=size)
        u = self.rng.random(size)
        return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.n - 1)

    def __call__(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self.sample(self.block)
            self._pos = 0
        r = int(self._buf[self._pos])
        self._pos += 1
        return r


@dataclass
class TxnScript:
    ops: list
    think_us: float = 0.0
    kind: str = "ycsb"

    @property
    def read_only(self) -> bool:
        return all(op.kind == "read" for op in self.ops)


class WorkloadGenerator:
    """One seeded stream per client region.

    Ranks are scattered over the key space with a fixed permutation so hot
    keys are not adjacent.
    """

    def __init__(self, spec: WorkloadSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.zipf = ZipfSampler(spec.table_rows, spec.zipf_theta, rng)
        perm_rng = np.random.default_rng(spec.table_rows)
        self._perm = perm_rng.permutation(spec.table_rows)

    def _value(self) -> bytes:
        return self.rng.bytes(self.spec.value_size)

    def _ycsb(self) -> list[Op]:
        ops = []
        for _ in range(self.spec.ops_per_txn):
            k = key_of(int(self._perm[self.zipf()]))
            if self.rng.random() < self.spec.read_fraction:
                ops.append(Op("read", k))
            else:
                ops.append(Op("update", k, self._value()))
        return ops

    def _composite(self) -> list[Op]:
        # read-modify-write over a contiguous "warehouse" block of keys
        n = int(self.rng.integers(5, 16))
        n = min(n, self.spec.table_rows)
        base = int(self._perm[self.zipf()])
        start = min(base - base % 16, self.spec.table_rows - n)
        ops = []
        for i in range(start, start + n):
            k = key_of(i)
            ops.append(Op("read", k))
            ops.append(Op("update", k, self._value()))
        return ops

    def next_txn(self) -> TxnScript:
        s = self.spec
        if s.composite_txn_fraction and self.rng.random() < s.composite_txn_fraction:
            script = TxnScript(self._composite(), kind="composite")
        else:
            script = TxnScript(self._ycsb())
        if s.long_txn_fraction and self.rng.random() < s.long_txn_fraction:
            script.think_us = s.long_txn_delay_ms * 1000.0
            script.kind = "long"
        return script


def next_txn(spec: WorkloadSpec, rng: np.random.Generator) -> TxnScript:
    """Convenience one-shot generator (builds a fresh sampler each call)."""
    return WorkloadGenerator(spec, rng).next_txn()


def preload_items(spec: WorkloadSpec, value: bytes = b"\x00" * 16):
    return ((key_of(i), value) for i in range(spec.table_rows))
