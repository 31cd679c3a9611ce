import json
from pathlib import Path

import numpy as np
import pytest

import vistad.cli as cli
from vistad.config import PipelineConfig
from vistad.errors import ConfigurationError
from vistad.synthetic import write_suite
from vistad.verify import ScriptedClient


@pytest.fixture
def suite(tmp_path):
    manifest = write_suite(tmp_path / "data", n_series=3, T=400, seed=21, period=100)
    return manifest


def small_flags():
    return [
        "--window-length", "64",
        "--stride", "16",
        "--patch-grid", "8",
        "--quantile-q", "0.75",
    ]


def run_cli(*args):
    return cli.main([str(a) for a in args])


class TestConfig:
    def test_defaults_validate(self):
        PipelineConfig().validate()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown configuration keys"):
            PipelineConfig.from_dict({"window_size": 128})

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"window_length": 64, "quantile_q": 0.5, "patch_grid": 8}))
        config = PipelineConfig.from_file(cfg_file)
        assert config.window_length == 64 and config.quantile_q == 0.5
        overridden = config.with_overrides({"quantile_q": 0.75})
        assert overridden.quantile_q == 0.75
        assert overridden.window_length == 64

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigurationError):
            PipelineConfig(alpha_list=[0.9]).validate()
        with pytest.raises(ConfigurationError):
            PipelineConfig(window_length=224, patch_grid=15).validate()
        with pytest.raises(ConfigurationError):
            PipelineConfig(provider="remote").validate()


class TestScreenCommand:
    def test_writes_proposals_and_scores(self, suite, tmp_path):
        out = tmp_path / "out"
        rc = run_cli("screen", "--manifest", suite, "--outdir", out, *small_flags())
        assert rc == 0
        doc = json.loads((out / "proposals.json").read_text())
        assert set(doc["series"]) == {"series_000", "series_001", "series_002"}
        for sid, row in doc["series"].items():
            assert row["error"] is None
            score = np.frombuffer((out / row["scores"]).read_bytes(), dtype="<f8")
            assert score.shape == (row["T"],)
            assert set(row["alphas"]) == {"0.1", "0.01", "0.001"}
        assert doc["config"]["window_length"] == 64

    def test_empty_manifest_is_noop_success(self, tmp_path):
        manifest = tmp_path / "m.json"
        manifest.write_text("[]")
        rc = run_cli("screen", "--manifest", manifest, "--outdir", tmp_path / "out")
        assert rc == 0

    def test_unreachable_provider_cold_cache_fails(self, suite, tmp_path):
        rc = run_cli(
            "screen", "--manifest", suite, "--outdir", tmp_path / "out",
            *small_flags(),
            "--provider", "remote",
            "--provider-url", "http://127.0.0.1:1",
            "--provider-retries", "0",
            "--embed-dim", "4",
        )
        assert rc == 1
        doc = json.loads((tmp_path / "out" / "proposals.json").read_text())
        assert all(row["error"] for row in doc["series"].values())

    def test_save_rasters_writes_window_files(self, suite, tmp_path):
        out = tmp_path / "out"
        rc = run_cli("screen", "--manifest", suite, "--outdir", out, *small_flags(), "--save-rasters")
        assert rc == 0
        wins = list((out / "series_000").glob("win_*.png"))
        assert len(wins) > 1


class TestVerifyCommand:
    def test_mock_echo_final_equals_proposals(self, suite, tmp_path):
        out = tmp_path / "out"
        assert run_cli("screen", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        assert run_cli("verify", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        proposals = json.loads((out / "proposals.json").read_text())
        final = json.loads((out / "final.json").read_text())
        for sid, row in proposals["series"].items():
            for akey, info in row["alphas"].items():
                assert final["series"][sid]["alphas"][akey]["intervals"] == info["intervals"]
        tokens = json.loads((out / "tokens.json").read_text())
        assert tokens["totals"]["calls"] == sum(
            u["calls"] for u in tokens["series"].values()
        )

    def test_parse_failure_falls_back_and_run_continues(self, suite, tmp_path, monkeypatch):
        out = tmp_path / "out"
        assert run_cli("screen", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        # first series gets garbage replies, the rest echo normally
        garbage = ["not json"] * 3
        ok = json.dumps({"interval_index": [], "confidence": [], "abnormal_description": "x"})
        script = ScriptedClient(garbage + [ok] * 6)
        monkeypatch.setattr(cli, "build_client", lambda config: script)
        config = PipelineConfig(window_length=64, stride=16, patch_grid=8, quantile_q=0.75)
        rc = cli.cmd_verify(str(suite), config, out)
        assert rc == 0
        final = json.loads((out / "final.json").read_text())
        first = final["series"]["series_000"]["alphas"]
        proposals = json.loads((out / "proposals.json").read_text())
        for akey, info in first.items():
            assert info["fallback"] is True
            assert info["intervals"] == proposals["series"]["series_000"]["alphas"][akey]["intervals"]


class TestEvalCommand:
    def test_scores_mode_report(self, suite, tmp_path):
        out = tmp_path / "out"
        assert run_cli("screen", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        rc = run_cli("eval", "--manifest", suite, "--outdir", out, *small_flags())
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["mode"] == "scores"
        assert "synthetic" in report["datasets"]
        assert (out / "report.txt").read_text().startswith("dataset")
        assert "f1_max_mean" in report["summary"]

    def test_perfect_detections_score_one(self, suite, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        entries = json.loads(Path(suite).read_text())
        series = {}
        for e in entries:
            labels = json.loads((Path(suite).parent / e["labels"]).read_text())
            intervals = [[l["start"], l["end"]] for l in labels]
            sid = Path(e["series"]).stem
            series[sid] = {
                "T": 400,
                "dataset": e["dataset"],
                "alphas": {"0.01": {"intervals": intervals}},
                "error": None,
            }
        results = out / "synthetic_final.json"
        results.write_text(json.dumps({"config": {}, "series": series}))
        rc = run_cli(
            "eval", "--manifest", suite, "--outdir", out, "--results", results,
            "--mode", "binary", *small_flags(),
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["datasets"]["synthetic"]["f1_max"] == 1.0

    def test_missing_labels_skipped_with_warning(self, tmp_path):
        data = tmp_path / "data"
        manifest = write_suite(data, n_series=2, T=400, seed=3, period=100)
        entries = json.loads(manifest.read_text())
        del entries[0]["labels"]
        manifest.write_text(json.dumps(entries))
        out = tmp_path / "out"
        assert run_cli("screen", "--manifest", manifest, "--outdir", out, *small_flags()) == 0
        rc = run_cli("eval", "--manifest", manifest, "--outdir", out, *small_flags())
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["series"]["series_000"] == {"skipped": "no labels"}
        assert report["datasets"]["synthetic"]["n_series"] == 1


class TestRunCommand:
    def test_stage1_only_equals_screen_plus_eval(self, suite, tmp_path):
        out_run = tmp_path / "run"
        out_steps = tmp_path / "steps"
        assert run_cli("run", "--manifest", suite, "--outdir", out_run, "--stage1-only", *small_flags()) == 0
        assert run_cli("screen", "--manifest", suite, "--outdir", out_steps, *small_flags()) == 0
        assert run_cli("eval", "--manifest", suite, "--outdir", out_steps, *small_flags()) == 0
        assert (out_run / "report.json").read_text() == (out_steps / "report.json").read_text()

    def test_full_run_mock_matches_stage1_report(self, suite, tmp_path):
        out = tmp_path / "out"
        assert run_cli("run", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        screen_report = json.loads((out / "report_screen.json").read_text())
        final_report = json.loads((out / "report.json").read_text())
        # echo verifier keeps the proposals, so per-alpha F1 matches the sweep
        for name, info in final_report["datasets"].items():
            for akey, row in info["per_alpha"].items():
                sweep_row = screen_report["datasets"][name]["per_alpha"][akey]
                assert row["f1"] == pytest.approx(sweep_row["f1"])

    def test_two_runs_byte_identical(self, suite, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert run_cli("run", "--manifest", suite, "--outdir", out, *small_flags()) == 0
        for name in ("proposals.json", "final.json", "tokens.json", "report.json",
                     "report.txt", "report_screen.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
        for sid in ("series_000", "series_001", "series_002"):
            assert (out_a / sid / "scores.bin").read_bytes() == (out_b / sid / "scores.bin").read_bytes()


class TestRenderCommand:
    def test_writes_window_and_full_rasters(self, suite, tmp_path):
        out = tmp_path / "out"
        rc = run_cli("render", "--manifest", suite, "--outdir", out, *small_flags())
        assert rc == 0
        for sid in ("series_000", "series_001", "series_002"):
            assert (out / sid / "full.png").exists()
            assert (out / sid / "win_0.png").exists()


class TestWorkers:
    def test_parallel_workers_match_serial_output(self, suite, tmp_path):
        out_serial = tmp_path / "serial"
        out_parallel = tmp_path / "parallel"
        assert run_cli("screen", "--manifest", suite, "--outdir", out_serial, *small_flags()) == 0
        assert run_cli("screen", "--manifest", suite, "--outdir", out_parallel,
                       *small_flags(), "--workers", "3") == 0
        # identical results; only the echoed workers knob may differ
        a = json.loads((out_serial / "proposals.json").read_text())
        b = json.loads((out_parallel / "proposals.json").read_text())
        assert a["series"] == b["series"]
