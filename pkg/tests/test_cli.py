import csv
import json

import pytest

from epochrep.cli import main


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("n_nodes: 2\nduration_ms: 400\nwarmup_ms: 100\nconnections_per_node: 8\n"
                 "workload: {preset: YCSB-MC, table_rows: 5000}\n")
    return p


def test_run_writes_outputs(tmp_path, small_config, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(small_config), "--seed", "2", "--out", str(out), "--trace"]) == 0
    rows = list(csv.DictReader(open(out / "run.csv")))
    assert len(rows) == 1 and rows[0]["seed"] == "2" and rows[0]["converged"] == "True"
    assert (out / "epochs.csv").read_text().startswith("epoch,commits")
    lines = (out / "fingerprints.log").read_text().splitlines()
    assert lines and all(len(l.split(",")) == 3 for l in lines)
    assert json.loads((out / "summary.json").read_text())["committed"] > 0
    assert "txn/s" in capsys.readouterr().out

    trace = out / "trace.json"
    assert main(["check", "--trace", str(trace)]) == 0
    data = json.loads(trace.read_text())
    data["fingerprints"]["1"][3][1] = "corrupt"
    trace.write_text(json.dumps(data))
    assert main(["check", "--trace", str(trace), "--no-replay"]) == 1


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("mode: nope\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_run_suite(tmp_path, capsys):
    assert main(["run-suite", "isolation", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "isolation.csv").exists()
    assert json.loads((tmp_path / "isolation_summary.json").read_text())["ok"] is True
    assert "suite isolation: PASS" in capsys.readouterr().out


def test_unknown_suite_rejected():
    with pytest.raises(SystemExit):
        main(["run-suite", "nope"])
