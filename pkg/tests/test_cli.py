"""Command-line interface: subcommand wiring and exit codes."""
import json
from pathlib import Path

import numpy as np
import pytest

import helpers
from greenflow import features, forest
from greenflow.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_MEASUREMENT, EXIT_OK,
                           main)

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN_PCAP = str(FIXTURES / "golden_capture.pcap")
GOLDEN_TSV = str(FIXTURES / "golden_labels.tsv")

TIGHT_SEARCH = ["--trials", "3",
                "--max-depth-range", "1", "5",
                "--max-features-range", "1", "10",
                "--n-estimators-range", "2", "4"]


@pytest.fixture(scope="module")
def datadir(tmp_path_factory):
    """A dataset CSV plus an 80/20 split, shared across the module."""
    root = tmp_path_factory.mktemp("data")
    dataset = helpers.synthetic_dataset(220, seed=2)
    features.write_dataset(root / "data.csv", dataset)
    assert main(["split", "-i", str(root / "data.csv"), "-o", str(root),
                 "--ratio", "0.8", "--seed", "0"]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def rundir(datadir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["optimize", "-i", str(datadir / "data.csv"),
                 "-o", str(out), "--seed", "5"] + TIGHT_SEARCH)
    assert code == EXIT_OK
    return out


class TestBuild:
    def test_build_golden_dataset(self, tmp_path):
        out = tmp_path / "golden.csv"
        drop = tmp_path / "drops.json"
        code = main(["build", "--capture", GOLDEN_PCAP,
                     "--labels", GOLDEN_TSV, "-o", str(out),
                     "--drop-report", str(drop)])
        assert code == EXIT_OK
        dataset, comments = features.read_dataset(out)
        assert np.array_equal(dataset.X, helpers.GOLDEN_VECTORS)
        assert np.array_equal(dataset.y, helpers.GOLDEN_CLASSES)
        assert comments["seed"] == "0"
        assert comments["tool"].startswith("greenflow ")
        assert "source_sha256_golden_capture.pcap" in comments
        report = json.loads(drop.read_text())
        assert report["flows_labeled"] == 3
        assert report["drops"] == {"conflicting": 0, "unmatched": 0,
                                   "malformed_rows": 0}

    def test_missing_capture_is_data_error(self, tmp_path):
        code = main(["build", "--capture", str(tmp_path / "nope.pcap"),
                     "--labels", GOLDEN_TSV, "-o", str(tmp_path / "out.csv")])
        assert code == EXIT_DATA

    def test_attack_map_override(self, tmp_path):
        mapping = tmp_path / "map.json"
        mapping.write_text(json.dumps({"rules": [["c&c", "beacon"]],
                                       "default": "other"}))
        out = tmp_path / "out.csv"
        code = main(["build", "--capture", GOLDEN_PCAP,
                     "--labels", GOLDEN_TSV, "-o", str(out),
                     "--attack-map", str(mapping)])
        assert code == EXIT_OK
        dataset, _ = features.read_dataset(out)
        assert dataset.meta[0]["attack_type"] == "beacon"
        assert dataset.meta[1]["attack_type"] == "other"


class TestSplit:
    def test_writes_train_and_test(self, datadir):
        train, _ = features.read_dataset(datadir / "train.csv")
        test, _ = features.read_dataset(datadir / "test.csv")
        assert len(train) == 176 and len(test) == 44

    def test_bad_ratio_is_config_error(self, datadir, tmp_path):
        code = main(["split", "-i", str(datadir / "data.csv"),
                     "-o", str(tmp_path), "--ratio", "1.5"])
        assert code == EXIT_CONFIG

    def test_missing_input_is_data_error(self, tmp_path):
        code = main(["split", "-i", str(tmp_path / "absent.csv"),
                     "-o", str(tmp_path)])
        assert code == EXIT_DATA


class TestOptimize:
    def test_artifacts_and_log(self, rundir):
        for name in ("config.json", "summary.json", "summary.csv", "run.log",
                     "single-tree/trials.csv", "single-tree/front.json",
                     "single-tree/plot_points.csv",
                     "single-tree/variants.json"):
            assert (rundir / name).exists(), name
        assert len(list(rundir.glob("single-tree/variants/*.model.json"))) == 4

    def test_rerun_identical_except_log(self, datadir, rundir, tmp_path):
        again = tmp_path / "again"
        code = main(["optimize", "-i", str(datadir / "data.csv"),
                     "-o", str(again), "--seed", "5"] + TIGHT_SEARCH)
        assert code == EXIT_OK
        names = sorted(p.relative_to(rundir)
                       for p in rundir.rglob("*") if p.is_file())
        assert names == sorted(p.relative_to(again)
                               for p in again.rglob("*") if p.is_file())
        for name in names:
            if name.name == "run.log":
                continue  # the log alone carries timestamps
            assert (rundir / name).read_bytes() == \
                (again / name).read_bytes(), name

    def test_zero_trials_is_config_error(self, datadir, tmp_path):
        code = main(["optimize", "-i", str(datadir / "data.csv"),
                     "-o", str(tmp_path / "r"), "--trials", "0"])
        assert code == EXIT_CONFIG

    def test_unavailable_hardware_meter(self, datadir, tmp_path, monkeypatch):
        monkeypatch.setenv("GREENFLOW_RAPL_ROOT", str(tmp_path / "empty"))
        code = main(["optimize", "-i", str(datadir / "data.csv"),
                     "-o", str(tmp_path / "r"), "--meter", "hardware"])
        assert code == EXIT_MEASUREMENT
        assert not (tmp_path / "r" / "summary.json").exists()


class TestEvaluate:
    def test_train_and_save_model(self, datadir, tmp_path):
        report_path = tmp_path / "report.json"
        model_path = tmp_path / "model.json"
        code = main(["evaluate", "--train", str(datadir / "train.csv"),
                     "--test", str(datadir / "test.csv"),
                     "--algorithm", "single-tree", "--max-depth", "4",
                     "-o", str(report_path), "--save-model", str(model_path)])
        assert code == EXIT_OK
        report = json.loads(report_path.read_text())
        assert report["algorithm"] == "single-tree"
        assert report["variant"] == "custom"
        assert -1.0 <= report["mcc"] <= 1.0
        assert report["meter"] == "proxy"
        model = forest.deserialize(model_path.read_bytes())
        assert model.hyperparams.max_depth == 4

    def test_saved_model_scores_identically(self, datadir, tmp_path):
        model_path = tmp_path / "model.json"
        first = tmp_path / "first.json"
        second = tmp_path / "second.json"
        args = ["evaluate", "--train", str(datadir / "train.csv"),
                "--test", str(datadir / "test.csv"), "--max-depth", "4"]
        assert main(args + ["-o", str(first),
                            "--save-model", str(model_path)]) == EXIT_OK
        assert main(["evaluate", "--model", str(model_path),
                     "--test", str(datadir / "test.csv"),
                     "-o", str(second)]) == EXIT_OK
        a = json.loads(first.read_text())
        b = json.loads(second.read_text())
        assert a["mcc"] == b["mcc"]
        assert a["uwh_per_sample"] == b["uwh_per_sample"]
        assert a["confusion"] == b["confusion"]

    def test_variants_rerun(self, datadir, rundir, tmp_path):
        out = tmp_path / "ablation-run"
        code = main(["evaluate",
                     "--variants", str(rundir / "single-tree/variants.json"),
                     "-i", str(datadir / "data.csv"), "-o", str(out),
                     "--seed", "5"])
        assert code == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert {r["variant"] for r in summary["rows"]} == \
            {"default", "max-green", "max-mcc", "balanced"}

    def test_variants_without_input_is_config_error(self, rundir, tmp_path):
        code = main(["evaluate",
                     "--variants", str(rundir / "single-tree/variants.json"),
                     "-o", str(tmp_path / "x")])
        assert code == EXIT_CONFIG

    def test_no_test_split_is_config_error(self):
        assert main(["evaluate"]) == EXIT_CONFIG

    def test_no_model_source_is_config_error(self, datadir):
        code = main(["evaluate", "--test", str(datadir / "test.csv")])
        assert code == EXIT_CONFIG


class TestErrors:
    def test_breakdown_written(self, datadir, tmp_path):
        model_path = tmp_path / "model.json"
        assert main(["evaluate", "--train", str(datadir / "train.csv"),
                     "--test", str(datadir / "test.csv"),
                     "--save-model", str(model_path)]) == EXIT_OK
        out = tmp_path / "errors.json"
        code = main(["errors", "--model", str(model_path),
                     "--test", str(datadir / "test.csv"), "-o", str(out)])
        assert code == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["confusion"]["fn"] == \
            sum(e["count"] for e in payload["fn_by_family_attack"])
        assert 0.0 <= payload["pair_detection_rate"] <= 1.0

    def test_corrupt_model_is_data_error(self, datadir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_bytes(b"not a model")
        code = main(["errors", "--model", str(bad),
                     "--test", str(datadir / "test.csv")])
        assert code == EXIT_DATA


class TestAblate:
    def test_rows_removed_and_noted(self, datadir, tmp_path):
        out = tmp_path / "ablated.csv"
        code = main(["ablate", "-i", str(datadir / "data.csv"),
                     "-o", str(out), "--where", "attack_type=DoS"])
        assert code == EXIT_OK
        before, _ = features.read_dataset(datadir / "data.csv")
        after, comments = features.read_dataset(out)
        removed = sum(1 for m in before.meta if m["attack_type"] == "DoS")
        assert removed > 0
        assert len(after) == len(before) - removed
        assert all(m["attack_type"] != "DoS" for m in after.meta)
        assert comments["ablated"].startswith("attack_type=DoS")

    def test_bad_predicate_is_config_error(self, datadir, tmp_path):
        code = main(["ablate", "-i", str(datadir / "data.csv"),
                     "-o", str(tmp_path / "x.csv"), "--where", "nonsense"])
        assert code == EXIT_CONFIG


class TestReport:
    def test_table_and_csv(self, rundir, tmp_path, capsys):
        out = tmp_path / "summary.csv"
        code = main(["report", "--run-dir", str(rundir), "-o", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split()[:2] == ["algorithm", "variant"]
        assert len(lines) == 2 + 4  # header, rule, four variants
        assert out.read_text() == (rundir / "summary.csv").read_text()

    def test_empty_run_dir_is_data_error(self, tmp_path):
        assert main(["report", "--run-dir", str(tmp_path)]) == EXIT_DATA


class TestParser:
    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert capsys.readouterr().out.startswith("greenflow ")
