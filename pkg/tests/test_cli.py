import json
from pathlib import Path

import pytest

from semmap.cli import main


@pytest.fixture(scope="module")
def sim_outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    log = out / "lab.jsonl"
    assert main(["simulate", "--seed", "11", "--out", str(log)]) == 0
    assert main(["replay", str(log), "--out", str(out / "result")]) == 0
    return out


def test_simulate_writes_log_and_truth(sim_outputs):
    log = sim_outputs / "lab.jsonl"
    truth = sim_outputs / "lab.truth.json"
    assert log.exists() and truth.exists()
    doc = json.loads(truth.read_text())
    assert len(doc["objects"]) == 4


def test_replay_outputs_four_objects(sim_outputs):
    snapshot = json.loads((sim_outputs / "result" / "snapshot.json").read_text())
    assert snapshot["format_version"] == 1
    assert len(snapshot["objects"]) == 4
    assert {o["class"] for o in snapshot["objects"]} == {"chair", "person"}


def test_replay_writes_all_artifacts(sim_outputs):
    result = sim_outputs / "result"
    for name in ("snapshot.json", "events.jsonl", "report.json", "map.pgm", "map.yaml"):
        assert (result / name).exists(), name
    events = (result / "events.jsonl").read_text().splitlines()
    assert all(json.loads(line)["kind"] for line in events)


def test_score_round_trip(sim_outputs, capsys):
    code = main(
        [
            "score",
            str(sim_outputs / "result" / "snapshot.json"),
            str(sim_outputs / "lab.truth.json"),
            "--match-radius",
            "0.5",
        ]
    )
    assert code == 0
    metrics = json.loads(capsys.readouterr().out.strip())
    assert metrics["true_positives"] == 4
    assert metrics["duplicates"] == 0
    assert metrics["false_objects"] == 0
    assert metrics["mean_position_error"] <= 0.15


def test_missing_log_exits_3_and_names_path(capsys):
    code = main(["replay", "/no/such/run.jsonl", "--out", "/tmp/semmap_cli_x"])
    assert code == 3
    assert "/no/such/run.jsonl" in capsys.readouterr().err


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text("{not json")
    log = tmp_path / "log.jsonl"
    log.write_text("")
    assert main(["replay", str(log), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_unknown_config_key_exits_2(tmp_path):
    bad = tmp_path / "cfg.json"
    bad.write_text('{"layer": {"promote_min_hits": 5}, "wat": 1}')
    log = tmp_path / "log.jsonl"
    log.write_text("")
    assert main(["replay", str(log), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_corrupt_log_exits_3(tmp_path):
    log = tmp_path / "log.jsonl"
    log.write_text('{"t": 1.0, "type": "pose", "p": [0,0,0]}\n')  # missing q
    assert main(["replay", str(log), "--out", str(tmp_path / "o")]) == 3


def test_invalid_scenario_exits_2(tmp_path):
    sc = tmp_path / "scenario.json"
    sc.write_text(json.dumps({"trajectory": [], "rates": {"pose_hz": 0}}))
    assert main(["simulate", str(sc), "--out", str(tmp_path / "log.jsonl")]) == 2


def test_scenario_rate_zero_exits_2(tmp_path):
    from semmap.simulator import Scenario

    doc = Scenario.lab_scene().to_doc()
    doc["rates"]["detection_hz"] = 0.0
    sc = tmp_path / "scenario.json"
    sc.write_text(json.dumps(doc))
    assert main(["simulate", str(sc), "--out", str(tmp_path / "log.jsonl")]) == 2


def test_custom_scenario_file_round_trip(tmp_path, capsys):
    from semmap.simulator import Scenario

    doc = Scenario.lab_scene(duration=6.0).to_doc()
    sc = tmp_path / "scenario.json"
    sc.write_text(json.dumps(doc))
    assert main(["simulate", str(sc), "--seed", "2", "--out", str(tmp_path / "log.jsonl")]) == 0
    assert (tmp_path / "log.jsonl").exists()


def test_score_unreadable_inputs_exit_3(tmp_path):
    assert main(["score", "/no/snapshot.json", "/no/truth.json"]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["score", str(bad), str(bad)]) == 3


def test_serve_unreadable_snapshot_exits_3(capsys):
    assert main(["serve", "--snapshot", "/no/such/snapshot.json"]) == 3
    assert "snapshot" in capsys.readouterr().err


def test_serve_bind_failure_exits_4(capsys):
    from semmap.queryserver import SnapshotStore, serve_queries

    blocker = serve_queries(SnapshotStore(), ("127.0.0.1", 0))
    try:
        port = blocker.server_address[1]
        assert main(["serve", "--addr", f"127.0.0.1:{port}"]) == 4
    finally:
        blocker.stop()


def test_replay_without_scans_skips_map(tmp_path):
    from semmap.geometry import Pose3
    from semmap.ingestion import pose_line

    log = tmp_path / "poses.jsonl"
    log.write_text("\n".join(pose_line(0.1 * k, Pose3()) for k in range(5)) + "\n")
    out = tmp_path / "out"
    assert main(["replay", str(log), "--out", str(out)]) == 0
    assert (out / "snapshot.json").exists()
    assert not (out / "map.pgm").exists()
