import pytest

from epochrep import merge
from epochrep.config import FailureSpec, SimConfig
from epochrep.sim import run
from epochrep.workload import PRESETS, WorkloadSpec

SMALL = dict(duration_ms=800.0, warmup_ms=100.0, connections_per_node=16, workload=WorkloadSpec(table_rows=10_000))
FAULT = dict(n_nodes=3, duration_ms=1600.0, warmup_ms=200.0, connections_per_node=16,
             workload=WorkloadSpec(table_rows=10_000), check_oracle=True)


def test_same_seed_identical_report():
    cfg = SimConfig(**SMALL, jitter_ms=3, reorder_window=3, duplicate_prob=0.05, seed=4)
    assert run(cfg).to_json() == run(cfg).to_json()


def test_different_seed_differs():
    a = run(SimConfig(**SMALL, seed=1))
    b = run(SimConfig(**SMALL, seed=2))
    assert a.fingerprints != b.fingerprints


def test_report_invariants():
    r = run(SimConfig(**{**SMALL, "workload": PRESETS["YCSB-HC"]}))
    assert r.committed + r.aborted == r.completed and r.accepted == 0
    lens = {len(seq) for seq in r.fingerprints.values()}
    assert len(lens) == 1
    assert r.convergence["ok"]


def test_single_writer_never_aborts():
    cfg = SimConfig(n_nodes=2, delay_ms=0.0, jitter_ms=0.0, connections_per_node=1, duration_ms=1000.0,
                    warmup_ms=100.0, workload=WorkloadSpec(read_fraction=0.5, zipf_theta=0.0))
    r = run(cfg)
    assert r.committed > 100 and r.aborted == 0


def test_single_node_converges_trivially():
    r = run(SimConfig(n_nodes=1, **SMALL))
    assert r.convergence["ok"] and r.committed > 0


def test_snapshot_lag_at_30ms():
    r = run(SimConfig(duration_ms=1500.0, warmup_ms=300.0, workload=PRESETS["YCSB-MC"]))
    assert 3.0 <= r.lag_mean <= 5.0


def test_async_mode_converges_without_aborts():
    r = run(SimConfig(**{**SMALL, "workload": PRESETS["YCSB-HC"]}, mode="geog_a"))
    assert r.aborted == 0 and r.accepted > 0
    assert len(set(r.final_fingerprints.values())) == 1


def test_mutated_merge_caught_by_online_oracle(monkeypatch):
    cfg = SimConfig(duration_ms=600.0, warmup_ms=100.0, connections_per_node=32, workload=PRESETS["YCSB-HC"],
                    check_oracle=True)
    assert run(cfg).oracle_mismatches == 0
    monkeypatch.setattr(merge, "_same_sen_wins", lambda header_csn, meta_csn: header_csn < meta_csn)
    r = run(cfg)
    assert r.oracle_mismatches > 0 or not r.convergence["ok"]


class TestFaults:
    def test_crash_mid_epoch_stalls_then_resumes(self):
        r = run(SimConfig(**FAULT, fault_tolerance="remote_backup", failures=(FailureSpec(1, 603.3),)))
        assert [v["live"] for v in r.views] == [[0, 1, 2], [0, 2]]
        assert r.resume_ms and max(r.resume_ms) <= 510.0
        assert r.missing_commits == 0 and r.convergence["ok"] and r.oracle_mismatches == 0

    def test_recovery_inside_timeout_keeps_view(self):
        r = run(SimConfig(**FAULT, fault_tolerance="local_backup", failures=(FailureSpec(1, 603.3, recover_at_ms=800.0),)))
        assert len(r.views) == 1 and r.convergence["ok"] and r.missing_commits == 0

    def test_rejoin_after_removal(self):
        r = run(SimConfig(**FAULT, fault_tolerance="quorum_ack", failures=(FailureSpec(1, 603.3, recover_at_ms=1200.0),)))
        assert [v["live"] for v in r.views] == [[0, 1, 2], [0, 2], [0, 1, 2]]
        assert set(r.fingerprints) == {"0", "1", "2"}
        assert r.convergence["ok"] and r.missing_commits == 0

    def test_lost_outbound_without_backup_loses_commits(self):
        r = run(SimConfig(**FAULT, failures=(FailureSpec(1, 603.3, lose_outbound_ms=40.0),)))
        assert r.data_lost and r.missing_commits > 0

    @pytest.mark.parametrize("ft", ["local_backup", "remote_backup", "quorum_ack"])
    def test_lost_outbound_recovered_with_backup(self, ft):
        r = run(SimConfig(**FAULT, fault_tolerance=ft,
                          failures=(FailureSpec(2, 603.3, lose_outbound_ms=25.0, deliver_to=(0,)),)))
        assert not r.data_lost and r.missing_commits == 0 and r.convergence["ok"]

    def test_latency_costs(self):
        lat = {ft: run(SimConfig(**{**FAULT, "check_oracle": False}, fault_tolerance=ft)).write_latency_mean_ms
               for ft in ("none", "local_backup", "remote_backup", "quorum_ack")}
        rtt = 2 * SimConfig().delay_ms
        assert abs(lat["local_backup"] - lat["none"]) < 1.0
        assert lat["remote_backup"] >= rtt
        assert lat["quorum_ack"] >= 1.5 * rtt
