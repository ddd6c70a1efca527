"""End-to-end command-line flows on a tiny synthetic dataset."""

import json

import numpy as np

from relprompt.cli import main
from relprompt.objective import auc_score


def _write_spec(path, **overrides):
    doc = {
        "node_count": 40,
        "relation_count": 2,
        "feature_dim": 3,
        "fraud_rate": 0.2,
        "signal_strengths": [0.9, 0.2],
        "noise_edge_prob": 0.03,
        "seed": 5,
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))


def _write_config(path, **overrides):
    doc = {
        "epochs": 1,
        "seed": 0,
        "decoder": {"n_layers": 1, "n_heads": 2, "d_emb": 16, "d_ff": 32,
                    "max_len": 256, "lora_rank": 2, "lora_alpha": 4.0},
        "encoder_hidden": [16, 16],
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))


def test_gen_data_writes_dataset(tmp_path):
    spec = tmp_path / "spec.json"
    _write_spec(spec)
    out = tmp_path / "data"
    assert main(["gen-data", "--spec", str(spec), "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()
    assert (out / "features.csv").exists()
    assert (out / "template.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["relations"]) == 2


def test_train_eval_cycle(tmp_path):
    spec = tmp_path / "spec.json"
    _write_spec(spec)
    data = tmp_path / "data"
    main(["gen-data", "--spec", str(spec), "--out", str(data)])
    config = tmp_path / "config.json"
    _write_config(config)
    ckpt = tmp_path / "ckpt"
    assert main(["train", "--manifest", str(data / "manifest.json"),
                 "--config", str(config), "--out", str(ckpt)]) == 0
    assert (ckpt / "checkpoint.json").exists()
    assert (ckpt / "history.json").exists()

    report_path = tmp_path / "report.json"
    scores_path = tmp_path / "scores.csv"
    assert main(["eval", "--ckpt", str(ckpt), "--split", "test",
                 "--json", str(report_path), "--scores", str(scores_path)]) == 0
    report = json.loads(report_path.read_text())
    assert set(report) == {"auc", "recall", "g_mean", "tp", "fp", "tn", "fn", "n_eval"}

    # the dumped scores reproduce the reported AUC
    rows = scores_path.read_text().strip().splitlines()[1:]
    scores = np.array([float(r.split(",")[1]) for r in rows])
    labels = np.array([int(r.split(",")[3]) for r in rows])
    assert abs(auc_score(scores, labels) - report["auc"]) <= 1e-12


def test_eval_reports_identical_across_runs(tmp_path):
    spec = tmp_path / "spec.json"
    _write_spec(spec)
    data = tmp_path / "data"
    main(["gen-data", "--spec", str(spec), "--out", str(data)])
    config = tmp_path / "config.json"
    _write_config(config)
    ckpt = tmp_path / "ckpt"
    main(["train", "--manifest", str(data / "manifest.json"),
          "--config", str(config), "--out", str(ckpt)])
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    main(["eval", "--ckpt", str(ckpt), "--json", str(r1)])
    main(["eval", "--ckpt", str(ckpt), "--json", str(r2)])
    assert r1.read_text() == r2.read_text()


def test_ablate_writes_summary(tmp_path):
    spec = tmp_path / "spec.json"
    _write_spec(spec)
    data = tmp_path / "data"
    main(["gen-data", "--spec", str(spec), "--out", str(data)])
    config = tmp_path / "config.json"
    _write_config(config)
    out = tmp_path / "ablation"
    assert main(["ablate", "--manifest", str(data / "manifest.json"),
                 "--config", str(config), "--modes", "wo_llm,wo_joint",
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"wo_llm", "wo_joint"}
    assert (out / "wo_llm.json").exists()


def test_single_view_command(tmp_path):
    spec = tmp_path / "spec.json"
    _write_spec(spec)
    data = tmp_path / "data"
    main(["gen-data", "--spec", str(spec), "--out", str(data)])
    config = tmp_path / "config.json"
    _write_config(config)
    out = tmp_path / "sv"
    assert main(["single-view", "--view", "1", "--manifest", str(data / "manifest.json"),
                 "--config", str(config), "--out", str(out)]) == 0
    report = json.loads((out / "single_view_1.json").read_text())
    assert "auc" in report


def test_cli_errors_exit_nonzero(tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "missing"),
                 "--json", str(tmp_path / "r.json")]) == 1
    assert main(["gen-data", "--spec", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "d")]) == 1
