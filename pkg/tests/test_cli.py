import json

import pytest

from guardsift.cli import main
from guardsift.metrics import NONMON, ScoreRecord, write_scores
from guardsift.simulate import ScenarioConfig
from guardsift.trace import read_dataset


@pytest.fixture()
def dataset_dir(tmp_path):
    config = ScenarioConfig(
        seed=21, n_pages=2, n_visits_per_page=2, n_nonmon_channels=3,
        relay_auth_channels=1, nonmon_small_fraction=0.3,
    )
    cfg_path = tmp_path / "scenario.json"
    config.to_json(cfg_path)
    out = tmp_path / "data"
    assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_generate_emits_expected_files(dataset_dir):
    for name in ("guard.csv", "client.csv", "visits.csv", "truth.json"):
        assert (dataset_dir / name).exists()


def test_ingest_summary(dataset_dir, tmp_path, capsys):
    report = tmp_path / "ingest.json"
    assert main(["ingest", "--in", str(dataset_dir), "--report", str(report)]) == 0
    summary = json.loads(report.read_text())
    assert summary["relay_channels_dropped"] == 1
    assert summary["circuits"] > 0


def test_sanitize_writes_traces_and_report(dataset_dir, tmp_path):
    out = tmp_path / "clean"
    report = tmp_path / "report.json"
    code = main([
        "sanitize", "--in", str(dataset_dir), "--phase", "pre",
        "--out", str(out), "--report", str(report), "--seed", "5",
    ])
    assert code == 0
    payload = json.loads(report.read_text())
    dropped = (
        payload["spam_circuits_dropped"] + payload["visit_extra_dropped"]
        + payload["handshake_dropped"] + payload["conflux_heuristic_dropped"]
        + payload["small_dropped"] + payload["trim_dropped"]
    )
    assert payload["retained"] + dropped == payload["input_circuits"]
    traces = read_dataset(out / "traces.ndjson")
    assert len(traces) == payload["retained"]
    assert any(t.label for t in traces)


def test_segment_path(dataset_dir, tmp_path):
    out = tmp_path / "seg"
    assert main(["segment", "--in", str(dataset_dir), "--out", str(out)]) == 0
    traces = read_dataset(out / "traces.ndjson")
    assert traces
    assert all(t.cells[0][1] == 1 for t in traces)


def test_transform_and_featurize(dataset_dir, tmp_path):
    clean = tmp_path / "clean"
    main(["sanitize", "--in", str(dataset_dir), "--phase", "pre", "--out", str(clean)])
    jittered = tmp_path / "jittered.ndjson"
    assert main([
        "transform", "--in", str(clean / "traces.ndjson"), "--out", str(jittered),
        "--jitter-ms", "10", "--seed", "3",
    ]) == 0
    assert read_dataset(jittered)
    feats = tmp_path / "feats"
    assert main([
        "featurize", "--in", str(jittered), "--out", str(feats), "--kind", "tam",
        "--t-max-s", "45", "--n-slots", "300", "--csv",
    ]) == 0
    header = json.loads((feats / "features.bin.json").read_text())
    assert header["shape"][1:] == [2, 300]
    assert (feats / "features.csv").exists()
    assert (feats / "labels.csv").exists()


def test_conflux_subcommand(tmp_path):
    config = ScenarioConfig(seed=31, phase="post", n_pages=2, n_visits_per_page=3,
                            n_nonmon_channels=2)
    cfg_path = tmp_path / "scenario.json"
    config.to_json(cfg_path)
    data = tmp_path / "data"
    main(["generate", "--config", str(cfg_path), "--out", str(data)])
    out_csv = tmp_path / "analysis.csv"
    report = tmp_path / "cfx.json"
    assert main([
        "conflux", "--in", str(data), "--out", str(out_csv), "--report", str(report),
    ]) == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "set_id,client_primary,exit_primary,fs_detected,fs_truth,coverage"
    assert len(lines) == 1 + 6
    summary = json.loads(report.read_text())
    assert summary["sets"] == 6


def test_eval_max_f1(tmp_path):
    scores = tmp_path / "scores.csv"
    records = (
        [ScoreRecord(f"m{i}", 1, 1, 0.9) for i in range(9)]
        + [ScoreRecord("miss", 1, NONMON, 0.9)]
        + [ScoreRecord(f"n{i}", NONMON, 1, 0.1) for i in range(50)]
    )
    write_scores(records, scores)
    report = tmp_path / "eval.json"
    # the default Wilson bound kicks in below 10 false positives,
    # reporting a conservative lower bound on precision
    assert main([
        "eval", "--scores", str(scores), "--r", "10", "--max-f1", "--report", str(report),
    ]) == 0
    corrected = json.loads(report.read_text())
    assert corrected["recall"] == 0.9
    assert corrected["pi_10"] < 1.0
    assert main([
        "eval", "--scores", str(scores), "--r", "10", "--max-f1",
        "--wilson-z", "0", "--report", str(report),
    ]) == 0
    plain = json.loads(report.read_text())
    assert plain["pi_10"] == 1.0
    assert plain["f1"] == pytest.approx(2 * 0.9 / 1.9)
    assert corrected["pi_10"] < plain["pi_10"]


def test_eval_target_fpr(tmp_path):
    scores = tmp_path / "scores.csv"
    records = [ScoreRecord(f"m{i}", 1, 1, 0.8) for i in range(8)] + [
        ScoreRecord(f"n{i}", NONMON, 1, 0.2) for i in range(400)
    ]
    write_scores(records, scores)
    report = tmp_path / "eval.json"
    assert main([
        "eval", "--scores", str(scores), "--target-fpr", "0.005", "--report", str(report),
    ]) == 0
    assert json.loads(report.read_text())["recall"] == 1.0


def test_generate_rtt_sweep(tmp_path):
    config = ScenarioConfig(seed=41, phase="post", n_pages=2, n_visits_per_page=5,
                            page_cell_range=(240, 400))
    cfg_path = tmp_path / "scenario.json"
    config.to_json(cfg_path)
    out = tmp_path / "sweep"
    assert main([
        "generate", "--config", str(cfg_path), "--out", str(out),
        "--rtt-sweep", "0,64", "--sweep-visits", "10",
    ]) == 0
    lines = (out / "rtt_sweep.csv").read_text().splitlines()
    assert lines[0].startswith("delta_ms,")
    assert len(lines) == 3


def test_stage_error_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,100,0\n")
    assert main(["ingest", "--guard", str(bad)]) == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        main(["sanitize", "--unknown-flag"])
    assert err.value.code == 2
