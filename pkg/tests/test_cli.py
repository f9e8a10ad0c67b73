"""Command-line surface: artifacts, determinism, exit codes."""

import json
import os

import pytest
import yaml

from modlab import cli


def write_config(tmp_path, **extra):
    cfg = {
        "seed": 0,
        "out_dir": str(tmp_path / "run"),
        "synth": {
            "n_pairs": 120,
            "n_scenes": 40,
            "matched_fraction": 0.5,
            "presence_fraction": 0.7,
            "world_seed": 5,
            "out": "dataset.jsonl",
            "eval_items": {"n_items": 80, "matched_fraction": 0.5, "out": "eval_items.jsonl"},
        },
        "train": {"preset": "modpp", "lr": 0.2, "epochs": 1, "warmup_steps": 30},
        "eval": {"shift": {"kind": "diffusion", "t": 100}},
    }
    cfg.update(extra)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path, cfg


class TestPipeline:
    def test_synth_train_eval_report(self, tmp_path):
        config_path, cfg = write_config(tmp_path)
        out = tmp_path / "run"

        assert cli.run("synth", config_path) == 0
        assert (out / "dataset.jsonl").exists()
        assert (out / "dataset.jsonl.stats.json").exists()
        assert (out / "eval_items.jsonl").exists()
        assert (out / "synth.config.yaml").exists()

        assert cli.run("train", config_path) == 0
        assert (out / "policy.ckpt").exists() and (out / "reference.ckpt").exists()
        assert (out / "loss_trace.csv").exists()
        counters = json.loads((out / "counters.json").read_text())
        assert counters["per_pair_counters"] == [
            {"bwd_policy": 2, "bwd_ref": 0, "fwd_policy": 6, "fwd_ref": 4}]

        assert cli.run("eval", config_path) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "metrics_shift_relevant.csv").exists()
        assert (out / "metrics_shift_irrelevant.csv").exists()

        assert cli.run("report", config_path) == 0
        assert (out / "comparison.csv").exists() and (out / "comparison.txt").exists()

    def test_dpo_counters_via_override(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert cli.run("synth", config_path) == 0
        assert cli.run("train", config_path, ["train.preset=dpo"]) == 0
        counters = json.loads((tmp_path / "run" / "counters.json").read_text())
        assert counters["per_pair_counters"] == [
            {"bwd_policy": 2, "bwd_ref": 0, "fwd_policy": 2, "fwd_ref": 2}]


class TestDeterminism:
    def test_synth_byte_identical(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert cli.run("synth", config_path) == 0
        first = (tmp_path / "run" / "dataset.jsonl").read_bytes()
        assert cli.run("synth", config_path) == 0
        assert (tmp_path / "run" / "dataset.jsonl").read_bytes() == first

    def test_train_byte_identical(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        cli.run("synth", config_path)
        assert cli.run("train", config_path) == 0
        first = (tmp_path / "run" / "policy.ckpt").read_bytes()
        assert cli.run("train", config_path) == 0
        assert (tmp_path / "run" / "policy.ckpt").read_bytes() == first


class TestOverridesAndErrors:
    def test_dotted_override_changes_output(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert cli.run("synth", config_path, ["synth.n_pairs=60"]) == 0
        stats = json.loads((tmp_path / "run" / "dataset.jsonl.stats.json").read_text())
        assert stats["n_records"] == 60

    def test_bad_override_is_config_error(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert cli.run("synth", config_path, ["nonsense"]) == cli.EXIT_CONFIG

    def test_missing_dataset_is_missing_input(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert cli.run("train", config_path) == cli.EXIT_MISSING

    def test_unparsable_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: [unclosed")
        assert cli.run("synth", bad) == cli.EXIT_CONFIG

    def test_nonexistent_config(self, tmp_path):
        assert cli.run("synth", tmp_path / "absent.yaml") == cli.EXIT_MISSING

    def test_unknown_preset(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        cli.run("synth", config_path)
        assert cli.run("train", config_path, ["train.preset=alchemy"]) == cli.EXIT_CONFIG

    def test_unknown_command(self):
        assert cli.run("fly") == cli.EXIT_CONFIG

    def test_config_via_environment(self, tmp_path, monkeypatch, capsys):
        config_path, _ = write_config(tmp_path)
        monkeypatch.setenv(cli.CONFIG_ENV_VAR, str(config_path))
        assert cli.main(["synth"]) == 0
        assert (tmp_path / "run" / "dataset.jsonl").exists()


class TestMatchingItems:
    def test_eval_handles_audiovisual_matching_probes(self, tmp_path, capsys):
        config_path, _ = write_config(tmp_path)
        overrides = ["synth.eval_items.matching_fraction=0.1",
                     "synth.eval_items.dominance_fraction=0.1"]
        assert cli.run("synth", config_path, overrides) == 0
        assert cli.run("train", config_path) == 0
        assert cli.run("eval", config_path) == 0
        metrics = (tmp_path / "run" / "metrics.csv").read_text()
        assert "matching" in metrics and "dominance" in metrics


class TestVerifyCommand:
    def test_verify_passes_on_clean_build(self, capsys):
        # trimmed suite sizes keep this test quick; the acceptance module
        # runs the full-size battery
        code = cli.run("verify", None, ["verify.fast=true"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.count("[PASS]") == 6
        assert "[FAIL]" not in out
