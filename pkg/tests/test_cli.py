import hashlib
import json
from pathlib import Path

import pytest

from edgemal import cli


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("--seed", 1, "--quiet", "gen-corpus", "--out", out,
               "--per-class", 3, "--top-events", 4) == 0
    return out


@pytest.fixture(scope="module")
def tiny_weights(tmp_path_factory, small_corpus):
    out = tmp_path_factory.mktemp("weights") / "w.json"
    assert run("--seed", 1, "--quiet", "train", "--corpus", small_corpus,
               "--epochs", 1, "--batch-size", 4, "--out", out) == 0
    return out


def test_gen_corpus_layout(small_corpus):
    manifest = json.loads((small_corpus / "manifest.json").read_text())
    assert len(manifest["samples"]) == 18
    assert len(manifest["class_names"]) == 6
    assert len(list((small_corpus / "images").glob("*.pgm"))) == 18
    assert (small_corpus / "traces.csv").exists()
    assert (small_corpus / "ranked_events.json").exists()
    assert len(manifest["selected_events"]) == 4


def test_gen_corpus_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert run("--seed", 5, "--quiet", "gen-corpus", "--out", out,
                   "--per-class", 2) == 0
    assert tree_digest(a) == tree_digest(b)


def test_gen_corpus_missing_out_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run("gen-corpus", "--per-class", 2)
    assert exc.value.code == 2


def test_rank_events_cmd(small_corpus, tmp_path):
    out = tmp_path / "ranked.json"
    assert run("--quiet", "rank-events", "--traces", small_corpus / "traces.csv",
               "--out", out) == 0
    ranked = json.loads(out.read_text())
    assert ranked[0]["rank"] == 1
    assert all(abs(r["rho"]) <= 1.0 for r in ranked)


def test_train_writes_history(small_corpus, tmp_path):
    weights = tmp_path / "w.json"
    history = tmp_path / "h.json"
    assert run("--seed", 1, "--quiet", "train", "--corpus", small_corpus,
               "--epochs", 1, "--batch-size", 4, "--out", weights,
               "--history", history) == 0
    doc = json.loads(history.read_text())
    assert len(doc["epoch_loss"]) == 1
    assert 0.0 <= doc["test_accuracy"] <= 1.0
    assert json.loads(weights.read_text())["layers"]


def test_estimate_verdict_fields(tmp_path, capsys):
    out = tmp_path / "d.json"
    assert run("--quiet", "estimate", "--node-free", 100_000_000,
               "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["verdict"] == "OnDevice"
    assert doc["ground_truth_comparator"] == "OnDevice"
    assert doc["model_bytes"] == 8_953_856
    assert run("--quiet", "estimate", "--node-free", 1000, "--out", out) == 0
    assert json.loads(out.read_text())["verdict"] == "Offload"


def test_partition_and_simulate_demo(small_corpus, tiny_weights, tmp_path):
    scenario = cli.data_path("scenarios", "demo_fleet.json")
    placement = tmp_path / "placement.json"
    assert run("--quiet", "partition", "--scenario", scenario,
               "--out", placement) == 0
    doc = json.loads(placement.read_text())
    assert doc["parent_id"] == "gw0"
    assert len(doc["assignments"]) == 3

    report = tmp_path / "report.json"
    log = tmp_path / "events.csv"
    assert run("--quiet", "simulate", "--scenario", scenario,
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--placement", placement, "--limit", 6, "--out", report,
               "--event-log", log) == 0
    doc = json.loads(report.read_text())
    assert len(doc["outputs"]) == 6
    assert log.read_text().startswith("time_sec,node_id,kind,bytes")


def test_distributed_outputs_match_parent_only(small_corpus, tiny_weights,
                                               tmp_path):
    reference = cli.data_path("scenarios", "reference_fleet.json")
    placement = cli.data_path("scenarios", "reference_fleet_nodes4.json")
    dist = tmp_path / "dist.json"
    solo = tmp_path / "solo.json"
    assert run("--quiet", "simulate", "--scenario", reference,
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--placement", placement, "--limit", 4, "--out", dist) == 0
    assert run("--quiet", "simulate", "--scenario", reference,
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--nodes", "parent-only", "--limit", 4, "--out", solo) == 0
    a = json.loads(dist.read_text())
    b = json.loads(solo.read_text())
    assert a["outputs"] == b["outputs"]
    assert a["total_latency_max_sec"] < b["total_latency_max_sec"]


def test_report_metrics_perfect_predictions(tmp_path):
    report = {
        "parent_id": "p",
        "total_latency_max_sec": 1.0,
        "total_latency_pipeline_sec": 1.0,
        "per_node": {"p": {"busy_sec": 1.0, "transfer_sec": 0.0,
                           "bytes_consumed": 10, "layers_executed": 4}},
        "outputs": [[0.9, 0.1], [0.2, 0.8]],
        "predictions": [0, 1],
        "input_labels": [0, 1],
    }
    path = tmp_path / "r.json"
    path.write_text(json.dumps(report))
    out = tmp_path / "metrics.json"
    assert run("--quiet", "report", "--report", path, "--out", out) == 0
    metrics = json.loads(out.read_text())["metrics"]
    assert metrics["accuracy"] == 1.0
    assert metrics["macro_f1"] == 1.0
    assert metrics["macro_recall"] == 1.0


def test_simulate_fan_out_multiple_scenarios(small_corpus, tiny_weights,
                                             tmp_path):
    demo = cli.data_path("scenarios", "demo_fleet.json")
    reference = cli.data_path("scenarios", "reference_fleet.json")
    out_dir = tmp_path / "reports"
    assert run("--quiet", "simulate", "--scenario", demo, reference,
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--nodes", "3", "--limit", 2, "--out", out_dir) == 0
    assert (out_dir / "demo_fleet_report.json").exists()
    assert (out_dir / "reference_fleet_report.json").exists()


def test_simulate_faults_flag(small_corpus, tiny_weights, tmp_path):
    reference = cli.data_path("scenarios", "reference_fleet.json")
    placement = cli.data_path("scenarios", "reference_fleet_nodes2.json")
    faults = tmp_path / "faults.json"
    faults.write_text(json.dumps([{"node_id": "c1", "time_sec": 0.0}]))
    report = tmp_path / "r.json"
    assert run("--quiet", "simulate", "--scenario", reference,
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--placement", placement, "--limit", 2, "--faults", faults,
               "--out", report) == 0
    assert json.loads(report.read_text())["faults_handled"] == 1


def test_missing_file_exits_2(small_corpus, tiny_weights, tmp_path):
    assert run("--quiet", "simulate", "--scenario", "missing.json",
               "--weights", tiny_weights, "--corpus", small_corpus,
               "--out", tmp_path / "x.json") == 2


def test_domain_error_exits_3(small_corpus, tmp_path):
    # demo fleet parent cannot host the whole model on-device
    scenario = cli.data_path("scenarios", "demo_fleet.json")
    assert run("--quiet", "partition", "--scenario", scenario,
               "--nodes", "parent-only", "--out", tmp_path / "p.json") == 3


def test_no_partial_files_on_failure(small_corpus, tmp_path):
    scenario = cli.data_path("scenarios", "demo_fleet.json")
    target = tmp_path / "p.json"
    assert run("--quiet", "partition", "--scenario", scenario,
               "--nodes", "parent-only", "--out", target) == 3
    assert not target.exists()
    assert not target.with_name(target.name + ".tmp").exists()
