import hashlib
import json
import subprocess
from pathlib import Path

import numpy as np
import pytest

from upass.curation import SelectionManifest
from upass.pipeline import ConfigError, PipelineConfig, run_pipeline
from conftest import random_log


def small_config(tmp_path, **overrides) -> PipelineConfig:
    defaults = dict(
        seed=0,
        out_dir=str(tmp_path / "out"),
        epochs=4,
        logging_hyperparams={"hidden_units": 32, "learning_rate": 0.15, "batch_size": 8, "init_scale": 0.7},
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestSingleStages:
    def test_select_stage_alone_with_log_file(self, tmp_path, rng):
        log = random_log(rng, n_samples=120, n_epochs=4)
        log_path = tmp_path / "dyn.jsonl"
        log.to_jsonl(log_path)
        config = small_config(tmp_path, dynamics_log=str(log_path))
        reports = run_pipeline(config, ["select"])
        assert [r.stage for r in reports] == ["select"]
        out = Path(config.out_dir)
        manifest = SelectionManifest.from_json(out / "select" / "manifest.json")
        assert manifest.source_digest == log.digest()
        assert (out / "summary.json").exists()
        assert (out / "select" / "metrics.csv").exists()

    def test_unknown_stage_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown stages"):
            run_pipeline(small_config(tmp_path), ["collect", "nonsense"])

    def test_invalid_config_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="drop_pct"):
            run_pipeline(small_config(tmp_path, drop_pct=100.0), ["select"])
        with pytest.raises(ConfigError, match="metric_id"):
            run_pipeline(small_config(tmp_path, metric_id="bogus"), ["defer"])

    def test_missing_input_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            run_pipeline(small_config(tmp_path, train_features="nope.csv"), ["select"])


class TestFullPipeline:
    def test_full_run_structure(self, tmp_path):
        config = small_config(tmp_path)
        reports = run_pipeline(config)
        assert [r.stage for r in reports] == ["collect", "select", "active", "defer"]
        out = Path(config.out_dir)
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["staged_accuracy"]) == {"collect", "select", "active", "defer"}
        for report in reports:
            for artifact in report.artifacts:
                assert (out / artifact).exists(), artifact
        workspace = json.loads((out / "workspace.json").read_text())
        assert workspace["simulation"] is True
        assert (out / workspace["scores"]).exists()
        assert (out / workspace["model"]).exists()

    def test_headline_accuracy_recomputable_from_artifacts(self, tmp_path):
        from upass.pipeline import read_outputs_csv

        config = small_config(tmp_path)
        reports = {r.stage: r for r in run_pipeline(config)}
        out = Path(config.out_dir)
        ids, rids, probs = read_outputs_csv(out / "active" / "outputs.csv")
        from upass.refmodel import FeatureTable

        test = FeatureTable.from_csv(out / "benchmark" / "test_features.csv")
        label_of = {sid: int(l) for sid, l in zip(test.sample_ids, test.labels)}
        acc = np.mean([probs[i].argmax() == label_of[sid] for i, sid in enumerate(ids)])
        assert acc == pytest.approx(reports["active"].headline_accuracy, abs=1e-12)

    def test_byte_identical_rerun(self, tmp_path):
        config_a = small_config(tmp_path, out_dir=str(tmp_path / "a"))
        config_b = small_config(tmp_path, out_dir=str(tmp_path / "b"))
        run_pipeline(config_a)
        run_pipeline(config_b)
        da = tree_digest(Path(config_a.out_dir))
        db = tree_digest(Path(config_b.out_dir))
        assert da == db

    def test_unreachable_target_recorded(self, tmp_path):
        config = small_config(tmp_path, target_accuracy=1.0)
        reports = {r.stage: r for r in run_pipeline(config)}
        defer = reports["defer"]
        out = Path(config.out_dir)
        threshold = json.loads((out / "defer" / "threshold.json").read_text())
        if threshold["result"] == "unreachable":
            assert defer.parameters["result"] == "unreachable"
        else:  # perfectly separable run: the criterion is that it is recorded either way
            assert threshold["result"]["accuracy"] >= 1.0


class TestCLI:
    def run_cli(self, *args, env=None):
        import os

        full_env = dict(os.environ)
        if env:
            full_env.update(env)
        return subprocess.run(
            ["upass", *args], capture_output=True, text=True, env=full_env
        )

    def test_run_and_report_and_exit_codes(self, tmp_path):
        out = tmp_path / "run"
        res = self.run_cli(
            "run",
            "--stages",
            "collect,select",
            "--out-dir",
            str(out),
            "--seed",
            "0",
        )
        assert res.returncode == 0, res.stderr
        rep = self.run_cli("report", "--run-dir", str(out))
        assert rep.returncode == 0
        assert "collect" in rep.stdout and "select" in rep.stdout

    def test_missing_config_exits_2(self, tmp_path):
        res = self.run_cli("run", "--config", str(tmp_path / "none.json"))
        assert res.returncode == 2
        assert "error" in res.stderr

    def test_invalid_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"drop_pct": 150.0}))
        res = self.run_cli("run", "--config", str(bad), "--out-dir", str(tmp_path / "o"))
        assert res.returncode == 2

    def test_upass_out_env_override(self, tmp_path):
        env_dir = tmp_path / "env-out"
        res = self.run_cli(
            "run",
            "--stages",
            "select",
            "--out-dir",
            str(tmp_path / "ignored"),
            env={"UPASS_OUT": str(env_dir)},
        )
        assert res.returncode == 0, res.stderr
        assert (env_dir / "summary.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_ingest_metrics_select_round_trip(self, tmp_path, rng):
        log = random_log(rng, n_samples=60, n_epochs=3)
        log_path = tmp_path / "log.jsonl"
        log.to_jsonl(log_path)
        res = self.run_cli("ingest", "--input", str(log_path))
        assert res.returncode == 0
        assert "60 samples" in res.stdout

        metrics_path = tmp_path / "metrics.csv"
        res = self.run_cli("metrics", "--log", str(log_path), "--out", str(metrics_path))
        assert res.returncode == 0

        manifest_path = tmp_path / "manifest.json"
        res = self.run_cli(
            "select",
            "--metrics",
            str(metrics_path),
            "--drop-pct",
            "5",
            "--out",
            str(manifest_path),
        )
        assert res.returncode == 0
        manifest = SelectionManifest.from_json(manifest_path)
        assert len(manifest.dropped) == 3  # ceil(60 * 5%)

    def test_ingest_bad_file_exits_2(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"sample_id": "a", "recording_id": "r", "epoch": 0, "probs": [0.9, 0.2], "label": 0}\n')
        res = self.run_cli("ingest", "--input", str(bad))
        assert res.returncode == 2
        assert "probability sum" in res.stderr

    def test_rank_cli(self, tmp_path, rng):
        log = random_log(
            rng, n_samples=9, labeled=False,
            recording_ids=tuple(f"r{i % 3}" for i in range(9)),
        )
        log_path = tmp_path / "adapt.jsonl"
        log.to_jsonl(log_path)
        res = self.run_cli("rank", "--log", str(log_path), "--select-pct", "34")
        assert res.returncode == 0
        assert res.stdout.count("*") == 2

    def test_select_sweep_cli(self, tmp_path):
        # sweep retrains per drop value and reports the trade-off curve
        out = tmp_path / "run"
        res = self.run_cli("run", "--stages", "select", "--out-dir", str(out), "--seed", "0")
        assert res.returncode == 0, res.stderr
        manifest_path = tmp_path / "m.json"
        res = self.run_cli(
            "select",
            "--metrics", str(out / "select" / "metrics.csv"),
            "--out", str(manifest_path),
            "--sweep", "0,5,10",
            "--train-features", str(out / "benchmark" / "train_features.csv"),
            "--test-features", str(out / "benchmark" / "test_features.csv"),
            "--epochs", "4",
        )
        assert res.returncode == 0, res.stderr
        sweep_csv = (tmp_path / "sweep.csv").read_text().splitlines()
        assert sweep_csv[0] == "drop_pct,accuracy"
        assert len(sweep_csv) == 4
        assert (tmp_path / "sweep.svg").exists()

    def test_al_and_defer_cli_flow(self, tmp_path):
        # pipeline artifacts feed the standalone subcommands
        out = tmp_path / "run"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 0,
                    "out_dir": str(out),
                    "epochs": 4,
                    "logging_hyperparams": {
                        "hidden_units": 32,
                        "learning_rate": 0.15,
                        "batch_size": 8,
                        "init_scale": 0.7,
                    },
                }
            )
        )
        assert self.run_cli("run", "--config", str(cfg)).returncode == 0

        from upass.refmodel import FeatureTable

        test = FeatureTable.from_csv(out / "benchmark" / "test_features.csv")
        rec = test.group_by_recording()["r000"]
        rec_path = tmp_path / "rec.csv"
        rec.to_csv(rec_path)
        session_path = tmp_path / "session.json"
        res = self.run_cli(
            "al",
            "--features", str(rec_path),
            "--model", str(out / "select" / "model.json"),
            "--epochs", "3",
            "--out", str(session_path),
        )
        assert res.returncode == 0, res.stderr
        assert session_path.exists()
        assert "accuracy" in res.stdout

        defer_dir = tmp_path / "defer"
        res = self.run_cli(
            "defer",
            "--outputs", str(out / "active" / "outputs.csv"),
            "--test-features", str(out / "benchmark" / "test_features.csv"),
            "--metric", "output_entropy",
            "--target-accuracy", "0.8",
            "--out-dir", str(defer_dir),
        )
        assert res.returncode == 0, res.stderr
        for name in ("scores.csv", "curve.csv", "curve_uncertain.csv", "curve.svg", "threshold.json"):
            assert (defer_dir / name).exists()

        res = self.run_cli(
            "defer",
            "--outputs", str(out / "active" / "outputs.csv"),
            "--test-embeddings", str(tmp_path / "missing.csv"),
            "--metric", "wknn_confidence",
            "--out-dir", str(defer_dir),
        )
        assert res.returncode == 2  # neighbor metric without index inputs
