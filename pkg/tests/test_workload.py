import numpy as np
import pytest

from epochrep.workload import PRESETS, WorkloadGenerator, WorkloadSpec, ZipfSampler, key_of, zipf_probabilities


def hot_share(spec: WorkloadSpec, draws: int = 200_000, seed: int = 1) -> float:
    z = ZipfSampler(spec.table_rows, spec.zipf_theta, np.random.default_rng(seed))
    return float(np.mean(z.sample(draws) < spec.table_rows // 10))


# The hotspot shares are quoted for large tables; 1M rows reproduces them.
@pytest.mark.parametrize("preset,target", [("YCSB-MC", 0.60), ("YCSB-HC", 0.75)])
def test_preset_hotspot_share(preset, target):
    spec = PRESETS[preset]
    spec = WorkloadSpec(**{**spec.__dict__, "table_rows": 1_000_000})
    assert abs(hot_share(spec) - target) <= 0.03


def test_preset_mix():
    assert (PRESETS["YCSB-MC"].read_fraction, PRESETS["YCSB-MC"].zipf_theta) == (0.8, 0.8)
    assert (PRESETS["YCSB-HC"].read_fraction, PRESETS["YCSB-HC"].zipf_theta) == (0.5, 0.9)
    assert PRESETS["YCSB-RO"].read_fraction == 1.0


def test_sampler_matches_closed_form():
    n, draws = 1000, 1_000_000
    z = ZipfSampler(n, 0.8, np.random.default_rng(2))
    freq = np.bincount(z.sample(draws), minlength=n) / draws
    p = zipf_probabilities(n, 0.8)
    # per-rank frequencies of the cold tail are too noisy; the CDF is not
    err = np.abs(np.cumsum(freq) - np.cumsum(p)) / np.cumsum(p)
    assert err.max() < 0.02
    assert abs(freq[0] - p[0]) / p[0] < 0.02


def test_theta_zero_is_uniform():
    from scipy.stats import chisquare
    z = ZipfSampler(100, 0.0, np.random.default_rng(3))
    counts = np.bincount(z.sample(200_000), minlength=100)
    assert chisquare(counts).pvalue > 0.001


def test_txn_shape_and_read_fraction():
    g = WorkloadGenerator(PRESETS["YCSB-MC"], np.random.default_rng(4))
    ops = [op for _ in range(2000) for op in g.next_txn().ops]
    assert len(ops) == 20_000
    reads = sum(op.kind == "read" for op in ops) / len(ops)
    assert abs(reads - 0.8) < 0.02
    assert all(op.key.startswith(b"k") and len(op.key) == 11 for op in ops)


def test_long_txn_fraction():
    spec = WorkloadSpec(long_txn_fraction=0.1, long_txn_delay_ms=100)
    g = WorkloadGenerator(spec, np.random.default_rng(5))
    scripts = [g.next_txn() for _ in range(5000)]
    longs = [s for s in scripts if s.kind == "long"]
    assert abs(len(longs) / 5000 - 0.1) < 0.02
    assert all(s.think_us == 100_000 for s in longs)


def test_composite_block():
    g = WorkloadGenerator(WorkloadSpec(composite_txn_fraction=1.0, table_rows=1000), np.random.default_rng(6))
    s = g.next_txn()
    keys = [op.key for op in s.ops if op.kind == "update"]
    idx = [int(k[1:]) for k in keys]
    assert 5 <= len(idx) <= 15 and idx == list(range(idx[0], idx[0] + len(idx)))


def test_same_seed_same_stream():
    a = WorkloadGenerator(PRESETS["YCSB-HC"], np.random.default_rng(9))
    b = WorkloadGenerator(PRESETS["YCSB-HC"], np.random.default_rng(9))
    assert [a.next_txn().ops for _ in range(50)] == [b.next_txn().ops for _ in range(50)]


@pytest.mark.parametrize("bad", [dict(read_fraction=1.5), dict(zipf_theta=1.0), dict(table_rows=0)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        WorkloadSpec(**bad)


def test_from_dict_preset():
    spec = WorkloadSpec.from_dict({"preset": "YCSB-HC", "table_rows": 50})
    assert spec.zipf_theta == 0.9 and spec.table_rows == 50
    assert key_of(7) == b"k0000000007"
