from __future__ import annotations
import json
import logging

import pandas as pd
import pytest

from app.main import main
from app.models import ForestModelFile, ForestParams, PipelineConfig, SynthProfile, TreeNode
from app.services.features import read_feature_file
from app.services.forest import ForestModel, save_model
from app.services.ingest import read_csv, write_csv
from app.services.pipeline_engine import PipelineEngine
from app.services.synth import mixed_dataset
from tests.helpers import make_records, random_string


@pytest.fixture
def small_mixed(tmp_path):
    path = tmp_path / "mixed.csv"
    write_csv(mixed_dataset(benign_queries=1000, tunnel_queries=1000, domains_per_side=5, seed=4), str(path))
    return path


def _cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


def test_compare_identical_strings():
    result = PipelineEngine.compare("abcdef", "abcdef", PipelineConfig())
    assert result["score"] == 128
    assert [s["slot"] for s in result["slots"]] == ["global", "seg1", "seg2"]
    assert all(s["score"] == 128 for s in result["slots"])


def test_compare_cli_strips_delimiters(capsys):
    code, result = _cli(capsys, "compare", "ab-cd.ef", "abcdef", "--segments", "3")
    assert code == 0
    assert result["a"] == "abcdef"
    assert result["score"] == 128
    assert len(result["slots"]) == 4


def test_featurize_single_domain(tmp_path, rng):
    queries = tmp_path / "q.csv"
    write_csv(make_records([random_string(rng, 24) for _ in range(400)], family="iodine", behavior="upload"), str(queries))
    out = tmp_path / "f.csv"
    config = PipelineConfig(input=str(queries), output=str(out))
    result = PipelineEngine.featurize(config)
    assert result["windows"] == 20
    assert result["streams"] == {"run1|example.com": 20}
    first = out.read_bytes()
    PipelineEngine.featurize(config)
    assert out.read_bytes() == first
    features = read_feature_file(str(out))
    assert features.X.shape == (20, 24)
    assert features.meta.config["seed"] == 42


def test_featurize_cli_config_file_and_flag_override(tmp_path, small_mixed, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"window_size": 10, "segments": 1, "include_global": False}), encoding="utf-8")
    out = tmp_path / "f.csv"
    code, result = _cli(capsys, "featurize", small_mixed, "-o", out, "--config", cfg, "--window-size", "25")
    assert code == 0
    meta = read_feature_file(str(out)).meta
    assert (meta.window_size, meta.segments, meta.include_global) == (25, 1, False)
    assert meta.slot_layout == ["seg1"]
    assert result["windows"] == 2000 // 25


def test_train_predict_evaluate_cli(tmp_path, small_mixed, capsys):
    features = tmp_path / "f.csv"
    model = tmp_path / "m.json"
    preds = tmp_path / "p.csv"
    report = tmp_path / "r.json"
    assert _cli(capsys, "featurize", small_mixed, "-o", features)[0] == 0
    code, trained = _cli(capsys, "train", features, "-o", model, "--n-trees", "20", "--seed", "3")
    assert code == 0
    assert trained["classes"] == ["malicious", "legitimate"]
    code, predicted = _cli(capsys, "predict", features, "--model", model, "-o", preds)
    assert code == 0
    df = pd.read_csv(preds)
    assert list(df.columns) == ["stream_key", "window_index", "predicted", "probability_max"]
    assert len(df) == predicted["windows"] == 100
    code, evaluated = _cli(capsys, "evaluate", features, "--model", model, "-o", report)
    assert code == 0
    assert evaluated["metrics"]["windows"] == 100
    assert json.loads(report.read_text(encoding="utf-8"))["config"]["window_size"] == 20


def test_per_file_evaluation(tmp_path, small_mixed):
    features = tmp_path / "f.csv"
    model = tmp_path / "m.json"
    PipelineEngine.featurize(PipelineConfig(input=str(small_mixed), output=str(features)))
    PipelineEngine.train(PipelineConfig(input=str(features), model=str(model), forest=ForestParams(n_trees=10)))
    report = PipelineEngine.evaluate(PipelineConfig(input=str(features)), str(model), mode="per-file")
    assert [row["source"] for row in report["per_file"]] == ["synth"]
    assert report["per_file"][0]["windows"] == 100


def test_two_step_with_silent_binary_model(tmp_path, small_mixed):
    features = tmp_path / "f.csv"
    PipelineEngine.featurize(PipelineConfig(input=str(small_mixed), output=str(features)))
    meta = read_feature_file(str(features)).meta

    def hand_model(task, classes, counts, path):
        model_file = ForestModelFile(task=task, classes=classes, params=ForestParams(n_trees=1),
                               featurization=meta, seed=0, trees=[TreeNode(counts=counts)])
        save_model(ForestModel(model_file), str(path))

    hand_model("binary", ["malicious", "legitimate"], [0, 4], tmp_path / "b.json")
    hand_model("family", ["synthetic", "legitimate"], [4, 0], tmp_path / "fam.json")
    report = PipelineEngine.evaluate(PipelineConfig(input=str(features)), str(tmp_path / "b.json"),
                                     mode="two-step", family_model_path=str(tmp_path / "fam.json"))
    m = report["metrics"]
    legit = m["classes"].index("legitimate")
    assert all(v == 0 for row in m["confusion"] for j, v in enumerate(row) if j != legit)
    assert m["fpr"] == 0.0


def test_synth_and_ingest_cli(tmp_path, capsys):
    csv_path = tmp_path / "s.csv"
    pcap_path = tmp_path / "s.pcap"
    code, result = _cli(capsys, "synth", "--kind", "tunnel-upload", "--count", "30", "--domain", "c2.example.net",
                        "--pcap", pcap_path, "-o", csv_path)
    assert code == 0 and result["records"] == 30
    ingested = tmp_path / "i.csv"
    code, result = _cli(capsys, "ingest", pcap_path, "-o", ingested)
    assert code == 0
    assert result["captures"][str(pcap_path)]["queries"] == 30
    assert [r.qname for r in read_csv(str(ingested))] == [r.qname for r in read_csv(str(csv_path))]


def test_sweep_writes_one_row_per_point(tmp_path, small_mixed):
    out = tmp_path / "sweep.csv"
    config = PipelineConfig(forest=ForestParams(n_trees=10))
    result = PipelineEngine.sweep(config, str(small_mixed), str(out), window_sizes=[10, 20], segment_counts=[1, 2])
    assert result["points"] == 4
    df = pd.read_csv(out)
    assert df[["window_size", "segments"]].values.tolist() == [[10, 1], [10, 2], [20, 1], [20, 2]]
    assert df.loc[df.window_size == 10, "windows"].tolist() == [200, 200]


def test_exit_code_missing_input(tmp_path, capsys):
    code, _ = _cli(capsys, "train", tmp_path / "nope.csv", "-o", tmp_path / "m.json")
    assert code == 3


def test_exit_code_malformed_csv_row(tmp_path, capsys):
    queries = tmp_path / "q.csv"
    queries.write_text("ts,qname,qtype,family,behavior,source\n1,a.example.com,A,,,x,extra\n", encoding="utf-8")
    code, _ = _cli(capsys, "featurize", queries, "-o", tmp_path / "f.csv")
    assert code == 3


def test_exit_code_corrupt_feature_sidecar(tmp_path, small_mixed, capsys):
    features = tmp_path / "f.csv"
    assert _cli(capsys, "featurize", small_mixed, "-o", features)[0] == 0
    (tmp_path / "f.csv.meta.json").write_text("{}", encoding="utf-8")
    code, _ = _cli(capsys, "train", features, "-o", tmp_path / "m.json")
    assert code == 3


def test_every_command_logs_resolved_config(tmp_path, small_mixed, caplog):
    caplog.set_level(logging.INFO, logger="app.services.pipeline_engine")
    features, model = tmp_path / "f.csv", tmp_path / "m.json"
    PipelineEngine.featurize(PipelineConfig(input=str(small_mixed), output=str(features)))
    PipelineEngine.train(PipelineConfig(input=str(features), model=str(model), forest=ForestParams(n_trees=5)))
    caplog.clear()
    PipelineEngine.ingest([str(small_mixed)], str(tmp_path / "i.csv"), PipelineConfig())
    PipelineEngine.predict(str(model), str(features), str(tmp_path / "p.csv"))
    PipelineEngine.synth(str(tmp_path / "s.csv"), profile=SynthProfile(kind="tunnel-idle", query_count=5))
    PipelineEngine.synth(str(tmp_path / "m.csv"), preset="mixed", benign_queries=10, tunnel_queries=10,
                         domains_per_side=1, seed=1)
    PipelineEngine.compare("abc", "abd", PipelineConfig())
    resolved = [r.getMessage() for r in caplog.records if r.getMessage().startswith("Resolved config")]
    assert len(resolved) == 5
    assert '"window_size": 20' in resolved[1]


def test_exit_code_invalid_config(tmp_path, small_mixed, capsys):
    code, _ = _cli(capsys, "featurize", small_mixed, "-o", tmp_path / "f.csv", "--window-size", "1")
    assert code == 2


def test_exit_code_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["featurize"])
    assert exc.value.code == 2


def test_exit_code_featurization_mismatch(tmp_path, small_mixed, capsys):
    f20, f10, model = tmp_path / "f20.csv", tmp_path / "f10.csv", tmp_path / "m.json"
    assert _cli(capsys, "featurize", small_mixed, "-o", f20)[0] == 0
    assert _cli(capsys, "featurize", small_mixed, "-o", f10, "--window-size", "10")[0] == 0
    assert _cli(capsys, "train", f20, "-o", model, "--n-trees", "5")[0] == 0
    code, _ = _cli(capsys, "predict", f10, "--model", model, "-o", tmp_path / "p.csv")
    assert code == 4


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_binary_detection_on_synthetic_traffic(seed):
    records = mixed_dataset(benign_queries=5000, tunnel_queries=5000, domains_per_side=5, seed=seed)
    config = PipelineConfig(window_size=20, segments=2, seed=seed)
    features, summary, _ = PipelineEngine.build_features(records, config)
    assert summary.windows == 500
    _, metrics = PipelineEngine.holdout(features, config)
    assert metrics.f1 >= 0.95
    assert metrics.fpr <= 0.02


@pytest.mark.slow
def test_behavior_actions_on_synthetic_traffic():
    records = mixed_dataset(benign_queries=5000, tunnel_queries=5000, domains_per_side=5, seed=7)
    config = PipelineConfig(window_size=20, task="behavior-action", seed=7)
    features, _, _ = PipelineEngine.build_features(records, config)
    assert features.meta.segments == 3
    _, metrics = PipelineEngine.holdout(features, config)
    assert set(metrics.classes) == {"download", "idle", "upload", "legitimate"}
    assert metrics.f1_weighted >= 0.85
