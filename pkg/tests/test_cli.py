"""Command-line pipeline: build, run, postprocess, metrics, decide, report."""

import json

import pytest

from streamtrap import store, synthetic
from streamtrap.cli import main
from streamtrap.config import load_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    fleet = synthetic.make_fleet(
        2,
        n_intervals=5,
        images_per_interval=130,
        seed=11,
        min_interval_images=40,
        center_drift=0.25,
    )
    (tmp / "dataset.json").write_text(json.dumps(synthetic.dataset_document(fleet)))
    emb = tmp / "emb"
    emb.mkdir()
    for cam in fleet:
        store.write_store(cam.store, emb / f"{cam.camera_id}.stem")
        store.write_text_head(cam.text_head, emb / f"{cam.camera_id}.stth")
    config = {
        "dataset": str(tmp / "dataset.json"),
        "embeddings_dir": str(emb),
        "out_root": str(tmp / "out"),
        "min_camera_images": 50,
        "min_span_days": 30,
        "min_interval_images": 40,
        "regimes": ["zero_shot", "accumulated", "accumulated_star", "oracle_star"],
        "freeze_fractions": [0.0, 1.0],
        "max_lr": 0.05,
        "min_lr": 1e-4,
        "max_epochs": 10,
        "schedule_period": 10,
        "workers": 2,
        "seed": 3,
    }
    config_path = tmp / "config.json"
    config_path.write_text(json.dumps(config))
    out_dir = load_config(str(config_path)).out_dir()
    return tmp, config_path, out_dir


def test_full_pipeline(workspace, capsys):
    tmp, config_path, out_dir = workspace
    for command in ("build", "run", "postprocess", "metrics", "decide", "report"):
        rc = main([command, "--config", str(config_path)])
        assert rc == 0, f"{command}: {capsys.readouterr().err}"

    assert (out_dir / "drop_report.json").exists()
    assert (out_dir / "manifest.json").exists()
    benchmarks = sorted((out_dir / "benchmarks").glob("*.json"))
    assert len(benchmarks) == 2
    results = (out_dir / "runs" / "accumulated_star" / "results.jsonl").read_text()
    assert all(json.loads(line)["regime"] == "accumulated_star" for line in results.splitlines())
    checkpoints = list((out_dir / "checkpoints").rglob("*.sthd"))
    assert checkpoints
    reports = {p.name for p in (out_dir / "reports").iterdir()}
    assert {"regime_summary.csv", "zs_histogram.csv", "freeze_study.csv", "plots.json"} <= reports
    wide = (out_dir / "reports" / "table_regimes.csv").read_text().splitlines()
    assert wide[1].split(",") == ["regime", "cam-00", "cam-01", "avg"]
    assert {line.split(",")[0] for line in wide[2:]} >= {
        "zero_shot",
        "accumulated",
        "accumulated_star",
        "oracle_star",
    }


def test_rebuild_is_byte_identical(workspace):
    tmp, config_path, out_dir = workspace
    before = {p.name: p.read_bytes() for p in (out_dir / "benchmarks").glob("*.json")}
    assert main(["build", "--config", str(config_path)]) == 0
    after = {p.name: p.read_bytes() for p in (out_dir / "benchmarks").glob("*.json")}
    assert before == after
    drop_before = (out_dir / "drop_report.json").read_bytes()
    assert main(["build", "--config", str(config_path)]) == 0
    assert (out_dir / "drop_report.json").read_bytes() == drop_before


def test_run_resumes_from_checkpoints(workspace, capsys):
    _, config_path, _ = workspace
    assert main(["run", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "reused" in out and ": ok" not in out


def test_outputs_embed_config_hash(workspace):
    _, config_path, out_dir = workspace
    config_hash = out_dir.name
    summary = (out_dir / "reports" / "regime_summary.csv").read_text()
    assert summary.startswith(f"# config_hash={config_hash} seed=3")
    gains = json.loads(next((out_dir / "gains").glob("*.json")).read_text())
    assert gains["config_hash"] == config_hash
    row = json.loads(
        (out_dir / "runs" / "zero_shot" / "results.jsonl").read_text().splitlines()[0]
    )
    assert row["config_hash"] == config_hash and row["seed"] == 3


def test_failed_admission_listed_in_drop_report(tmp_path):
    fleet = synthetic.make_fleet(1, n_intervals=2, images_per_interval=60, seed=0)
    (tmp_path / "dataset.json").write_text(json.dumps(synthetic.dataset_document(fleet)))
    config = {
        "dataset": str(tmp_path / "dataset.json"),
        "out_root": str(tmp_path / "out"),
        "min_camera_images": 1000,
        "min_span_days": 180,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    assert main(["build", "--config", str(tmp_path / "config.json")]) == 0
    out_dir = load_config(str(tmp_path / "config.json")).out_dir()
    report = json.loads((out_dir / "drop_report.json").read_text())
    assert report["cameras"]["cam-00"].startswith("failed_admission")
    assert not (out_dir / "benchmarks" / "cam-00.json").exists()


def test_report_on_empty_directory_fails_with_json_error(tmp_path, capsys):
    config = {"out_root": str(tmp_path / "fresh")}
    (tmp_path / "config.json").write_text(json.dumps(config))
    rc = main(["report", "--config", str(tmp_path / "config.json")])
    assert rc != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ReportError"
    assert "run" in err["message"]


def test_env_var_overrides_out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("STREAMTRAP_OUT", str(tmp_path / "envout"))
    config = load_config(None, {"seed": 1})
    assert str(config.out_dir()).startswith(str(tmp_path / "envout"))


def test_unknown_config_key_rejected(tmp_path, capsys):
    (tmp_path / "config.json").write_text(json.dumps({"not_a_field": 1}))
    rc = main(["build", "--config", str(tmp_path / "config.json")])
    assert rc != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"


def test_shared_text_head_open_set_run(workspace, tmp_path):
    import numpy as np

    from streamtrap.store import TextHead, read_text_head, write_text_head

    tmp, config_path, out_dir = workspace
    # widen cam-00's head with an extra class: an open-set vocabulary
    base = read_text_head(tmp / "emb" / "cam-00.stth")
    extra = np.ones((1, base.dim), dtype=np.float32) / np.sqrt(base.dim)
    wide = TextHead(
        labels=base.labels + ["wolverine"],
        vectors=np.vstack([base.vectors, extra]),
    )
    head_path = tmp_path / "open_set.stth"
    write_text_head(wide, head_path)

    overrides = json.loads(config_path.read_text())
    overrides["shared_text_head"] = str(head_path)
    overrides["regimes"] = ["zero_shot", "accumulated"]
    overrides["freeze_fractions"] = []
    open_config = tmp_path / "open.json"
    open_config.write_text(json.dumps(overrides))
    assert main(["build", "--config", str(open_config)]) == 0
    assert main(["run", "--config", str(open_config)]) == 0
    open_out = load_config(str(open_config)).out_dir()
    assert open_out != out_dir  # different config hash
    rows = [
        json.loads(line)
        for line in (open_out / "runs" / "zero_shot" / "results.jsonl").read_text().splitlines()
    ]
    assert rows  # every camera scored against the shared vocabulary


def test_cli_flag_overrides_config_file(tmp_path):
    (tmp_path / "config.json").write_text(json.dumps({"seed": 1, "out_root": str(tmp_path)}))
    base = load_config(str(tmp_path / "config.json"))
    overridden = load_config(str(tmp_path / "config.json"), {"seed": 42})
    assert base.seed == 1 and overridden.seed == 42
    assert base.config_hash != overridden.config_hash
