import json
import os

import numpy as np
import pytest

from robustprune.cli import main
from robustprune.config import ExperimentConfig, apply_overrides
from robustprune.errors import ConfigError
from robustprune.evaluate import load_report
from robustprune.recipes import toy_linear


def write_config(tmp_path, **changes):
    cfg = toy_linear(seed=0, out_dir=str(tmp_path / "run")).to_dict()
    for key, value in changes.items():
        cfg[key] = value
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_missing_seed_rejected(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"out_dir": "x",
                                        "dataset": {"kind": "digits"},
                                        "architecture": {"kind": "mlp"}})
        assert err.value.field == "seed"

    def test_missing_idx_paths_named(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"seed": 0, "out_dir": "x",
                                        "dataset": {"kind": "idx"},
                                        "architecture": {"kind": "mlp"}})
        assert err.value.field == "dataset.images"

    def test_unknown_architecture_named(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"seed": 0, "out_dir": "x",
                                        "dataset": {"kind": "digits"},
                                        "architecture": {"kind": "transformer"}})
        assert err.value.field == "architecture.kind"

    def test_overrides_dotted_paths(self):
        raw = {"prune": {"lr": 0.01}}
        out = apply_overrides(raw, ["prune.lr=0.5", "prune.max_epochs=7",
                                    "dataset.kind=digits"])
        assert out["prune"]["lr"] == 0.5
        assert out["prune"]["max_epochs"] == 7
        assert out["dataset"]["kind"] == "digits"
        assert raw["prune"]["lr"] == 0.01  # original untouched

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["no-equals-sign"])


class TestCli:
    def test_usage_error_exit_64(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["definitely-not-a-command"])
        assert err.value.code == 64

    def test_config_error_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"out_dir": "x"}))
        assert main(["pretrain", "--config", str(path)]) == 2
        assert "seed" in capsys.readouterr().err

    def test_stage_order_violation_exit_3(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["finetune", "--config", str(path)]) == 3
        assert "pruned" in capsys.readouterr().err

    def test_full_chain_and_artifacts(self, tmp_path):
        path = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["pretrain", "--config", str(path)]) == 0
        assert main(["prune", "--config", str(path)]) == 0
        assert main(["finetune", "--config", str(path)]) == 0
        assert main(["eval", "--config", str(path)]) == 0
        for name in ("config_snapshot.json", "pretrained.dwd", "pruned.dwd",
                     "finetuned.dwd", "prune_trace.csv", "finetune_trace.csv",
                     "prune_trace.png", "finetune_trace.png"):
            assert (out / name).exists(), name
        for report_dir in ("report-pretrain", "report-prune",
                           "report-finetune", "report-eval"):
            assert (out / report_dir / "report.json").exists()
        report = load_report(out / "report-eval")
        assert 0 <= report.era <= report.eba + 1.0

    def test_zero_epsilon_eval_matches_eba(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["pretrain", "--config", str(path)]) == 0
        assert main(["prune", "--config", str(path)]) == 0
        assert main(["eval", "--config", str(path), "--override",
                     "evaluate.attack.epsilon_max=0.0", "--override",
                     "evaluate.sweep=false"]) == 0
        report = load_report(tmp_path / "run" / "report-eval")
        assert report.era == report.eba

    def test_override_lands_in_snapshot(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["pretrain", "--config", str(path), "--override",
                     "pretrain.epochs=1"]) == 0
        snap = json.loads((tmp_path / "run" / "config_snapshot.json").read_text())
        assert snap["pretrain"]["epochs"] == 1

    def test_unknown_ablation_exit_3(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["pretrain", "--config", str(path)]) == 0
        assert main(["ablate", "nonsense", "--config", str(path)]) == 3

    def test_rerun_reproduces_metrics_bit_exactly(self, tmp_path):
        results = []
        for tag in ("a", "b"):
            cfg_path = write_config(tmp_path, out_dir=str(tmp_path / tag))
            cfg_path = cfg_path.rename(tmp_path / f"exp-{tag}.json")
            assert main(["pretrain", "--config", str(cfg_path)]) == 0
            assert main(["prune", "--config", str(cfg_path)]) == 0
            assert main(["eval", "--config", str(cfg_path)]) == 0
            report = load_report(tmp_path / tag / "report-eval")
            results.append((report.eba, report.era, tuple(report.sweep["era"])))
        assert results[0] == results[1]
