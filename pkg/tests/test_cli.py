import json
import os
from pathlib import Path

import numpy as np
import pytest

from evokg.cli import main
from evokg.data import write_quadruple_files
from evokg.synthetic import repeating_store


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    store = repeating_store(num_entities=5, num_relations=2, num_timestamps=8)
    store.entity_names = [f"Thing{i} (Land{i % 2})" for i in range(5)]
    write_quadruple_files(store, str(root / "toy"))
    return str(root / "toy")


def run(args):
    return main(args)


TRAIN_ARGS = ["--dim", "8", "--layers", "1", "--history", "2", "--epochs", "2",
              "--kernels", "4", "--seed", "7", "--patience", "0"]


class TestTrain:
    def test_basic_run_writes_artifacts(self, dataset, tmp_path):
        out = tmp_path / "run"
        code = run(["train", "--data", dataset, "--out", str(out)] + TRAIN_ARGS)
        assert code == 0
        assert (out / "checkpoint.evkg").exists()
        assert (out / "curve.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert "train" in manifest["timings"]
        assert manifest["config"]["history"] == 2

    def test_zero_epochs_writes_initialized_checkpoint(self, dataset, tmp_path):
        out = tmp_path / "zero"
        code = run(["train", "--data", dataset, "--out", str(out),
                    "--dim", "8", "--layers", "1", "--history", "2",
                    "--epochs", "0", "--kernels", "4"])
        assert code == 0
        assert (out / "checkpoint.evkg").exists()
        curve = (out / "curve.csv").read_text().strip().splitlines()
        assert len(curve) == 1  # header only, no epoch rows

    def test_no_static_drops_curve_column(self, dataset, tmp_path):
        out_a = tmp_path / "with_static"
        run(["train", "--data", dataset, "--out", str(out_a)] + TRAIN_ARGS)
        header_a = (out_a / "curve.csv").read_text().splitlines()[0]
        assert "static_loss" in header_a

        out_b = tmp_path / "no_static"
        run(["train", "--data", dataset, "--out", str(out_b), "--no-static"]
            + TRAIN_ARGS)
        header_b = (out_b / "curve.csv").read_text().splitlines()[0]
        assert "static_loss" not in header_b

    def test_static_without_names_is_usage_error(self, tmp_path):
        bare = tmp_path / "bare"
        store = repeating_store(num_timestamps=6)
        write_quadruple_files(store, str(bare))
        code = run(["train", "--data", str(bare), "--out", str(tmp_path / "x"),
                    "--static"] + TRAIN_ARGS)
        assert code == 1

    def test_missing_dataset_is_data_error(self, tmp_path):
        code = run(["train", "--data", str(tmp_path / "nowhere"),
                    "--out", str(tmp_path / "x")] + TRAIN_ARGS)
        assert code == 2

    def test_bad_flag_is_usage_error(self, dataset, tmp_path):
        code = run(["train", "--data", dataset, "--task", "nonsense"])
        assert code == 1

    def test_data_root_env(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("EVOKG_DATA", str(Path(dataset).parent))
        out = tmp_path / "env_run"
        code = run(["train", "--data", "toy", "--out", str(out)] + TRAIN_ARGS)
        assert code == 0


@pytest.fixture(scope="module")
def trained_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert run(["train", "--data", dataset, "--out", str(out)] + TRAIN_ARGS) == 0
    return out


class TestEvalAndReport:
    def test_eval_writes_reports(self, dataset, trained_run, tmp_path):
        out = tmp_path / "eval"
        code = run(["eval", "--checkpoint", str(trained_run / "checkpoint.evkg"),
                    "--data", dataset, "--out", str(out), "--mode", "frozen",
                    "--split", "test", "--task", "both"])
        assert code == 0
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + entity + relation
        assert (out / "eval_entity_test_frozen.json").exists()
        assert (out / "eval_relation_test_frozen.json").exists()
        breakdown = json.loads((out / "eval_entity_test_frozen.json").read_text())
        assert breakdown["per_timestamp"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert rows[1].endswith(manifest["manifest_id"])

    def test_eval_gt_mode(self, dataset, trained_run, tmp_path):
        out = tmp_path / "eval_gt"
        code = run(["eval", "--checkpoint", str(trained_run / "checkpoint.evkg"),
                    "--data", dataset, "--out", str(out), "--mode", "gt",
                    "--task", "entity"])
        assert code == 0
        rows = (out / "metrics.csv").read_text()
        assert "ground_truth" in rows

    def test_eval_missing_checkpoint(self, dataset, tmp_path):
        code = run(["eval", "--checkpoint", str(tmp_path / "none.evkg"),
                    "--data", dataset, "--out", str(tmp_path / "x")])
        assert code == 2

    def test_eval_dimension_mismatch(self, trained_run, tmp_path):
        other = tmp_path / "other_data"
        write_quadruple_files(repeating_store(num_entities=9, num_relations=3,
                                              num_timestamps=8), str(other))
        code = run(["eval", "--checkpoint", str(trained_run / "checkpoint.evkg"),
                    "--data", str(other), "--out", str(tmp_path / "x")])
        assert code == 2

    def test_report_renders_svgs(self, dataset, trained_run, tmp_path):
        eval_out = tmp_path / "eval"
        run(["eval", "--checkpoint", str(trained_run / "checkpoint.evkg"),
             "--data", dataset, "--out", str(eval_out), "--task", "both"])
        report_out = tmp_path / "report"
        code = run(["report", str(trained_run / "curve.csv"),
                    str(eval_out / "metrics.csv"),
                    str(eval_out / "eval_entity_test_frozen.json"),
                    str(eval_out / "manifest.json"),
                    "--out", str(report_out)])
        assert code == 0
        for name in ("training_curve.svg", "metrics.svg",
                     "per_timestamp_mrr.svg", "timings.svg", "summary.md"):
            path = report_out / name
            assert path.exists() and path.stat().st_size > 0, name
        assert "<svg" in (report_out / "metrics.svg").read_text()[:500]
        assert "| task |" in (report_out / "summary.md").read_text()

    def test_report_without_inputs_is_usage_error(self, tmp_path):
        assert run(["report", "--out", str(tmp_path / "r")]) == 1

    def test_reproducible_metric_csv(self, dataset, tmp_path):
        csvs = []
        for name in ("a", "b"):
            train_out = tmp_path / f"train_{name}"
            assert run(["train", "--data", dataset, "--out", str(train_out)]
                       + TRAIN_ARGS) == 0
            eval_out = tmp_path / f"eval_{name}"
            assert run(["eval", "--checkpoint", str(train_out / "checkpoint.evkg"),
                        "--data", dataset, "--out", str(eval_out),
                        "--task", "both"]) == 0
            csvs.append((eval_out / "metrics.csv").read_bytes())
        assert csvs[0] == csvs[1]


class TestStats:
    def test_prints_counts(self, dataset, capsys):
        assert run(["stats", "--data", dataset]) == 0
        out = capsys.readouterr().out
        assert "entities:   5" in out
        assert "relations:  2" in out

    def test_expectations(self, dataset):
        assert run(["stats", "--data", dataset, "--expect", "5,2"]) == 0
        assert run(["stats", "--data", dataset, "--expect", "9,9"]) == 2
