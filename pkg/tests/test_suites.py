import pytest

from epochrep.suites import SUITES, fault_scenarios, run_cells, run_suite
from epochrep.config import SimConfig
from epochrep.workload import WorkloadSpec


def test_all_suite_names():
    assert set(SUITES) == {"convergence", "isolation", "epoch-sweep", "contention-sweep", "long-txn",
                           "breakdown", "fault", "scalability"}


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suite("nope")


def test_fault_grid_size():
    names = {n for s in range(5) for n, _ in fault_scenarios(s)}
    assert len(names) * 3 >= 20


def test_parallel_matches_sequential():
    cfg = SimConfig(n_nodes=2, duration_ms=300.0, warmup_ms=50.0, connections_per_node=4,
                    workload=WorkloadSpec(table_rows=1000))
    cells = [({"i": i}, cfg.with_(seed=i)) for i in range(2)]
    seq = [r for r, _ in run_cells(cells)]
    par = [r for r, _ in run_cells(cells, parallel=True, workers=2)]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_s"} for r in rows]
    assert strip(seq) == strip(par)
