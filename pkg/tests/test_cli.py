"""CLI subcommands: file contracts, determinism, exit codes."""

import csv
import json

import numpy as np
import pytest

from decoupled_tpp.cli import main
from decoupled_tpp.hawkes import HawkesSpec
from decoupled_tpp.nets import load_params, save_params
from decoupled_tpp.model import DecoupledModel, ModelConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = HawkesSpec(
        np.array([0.4, 0.3]), np.array([[0.3, 0.1], [0.2, 0.3]]), np.full((2, 2), 1.2)
    )
    (root / "spec.json").write_text(json.dumps(spec.to_dict()))
    cfg = {
        "model": {"hidden_dim": 6, "width": 12, "depth": 2, "combiner": "linear"},
        "train": {"epochs": 2, "batch_size": 8, "solver_method": "euler", "solver_steps": 6, "seed": 1},
        "eval": {
            "lambda_method": "rk4",
            "lambda_steps": 12,
            "mark_method": "euler",
            "mark_steps": 6,
            "density_method": "rk4",
            "density_steps": 8,
            "bootstrap": 100,
        },
        "horizon": {"max_density_segments": 40},
        "seed": 1,
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def run(args):
    return main([str(a) for a in args])


class TestPipeline:
    def test_simulate_is_deterministic(self, workdir):
        a, b = workdir / "a.jsonl", workdir / "b.jsonl"
        assert run(["simulate", "--spec", workdir / "spec.json", "--n", 30, "--horizon", 10,
                    "--seed", 7, "--out", a]) == 0
        assert run(["simulate", "--spec", workdir / "spec.json", "--n", 30, "--horizon", 10,
                    "--seed", 7, "--out", b]) == 0
        assert a.read_text() == b.read_text()
        header = json.loads((workdir / "a.jsonl.header.json").read_text())
        assert header["num_marks"] == 2

    def test_preprocess_train_evaluate_chain(self, workdir):
        assert run(["preprocess", "--data", workdir / "a.jsonl", "--split", "0.7,0.15,0.15",
                    "--seed", 3, "--out", workdir / "splits"]) == 0
        header = json.loads((workdir / "splits/train.jsonl.header.json").read_text())
        assert header["time_scale"] > 0
        assert run(["train", "--train", workdir / "splits/train.jsonl", "--val", workdir / "splits/val.jsonl",
                    "--config", workdir / "cfg.json", "--log", workdir / "log.csv", "--quiet",
                    "--out", workdir / "ckpt.json"]) == 0
        with open(workdir / "log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {"epoch", "split", "nll", "nll_lambda", "nll_mark", "sec_per_iter"} <= set(rows[0])
        assert any(r["split"] == "train" for r in rows)

        assert run(["evaluate", "--data", workdir / "splits/test.jsonl", "--checkpoint", workdir / "ckpt.json",
                    "--config", workdir / "cfg.json", "--bootstrap", 50, "--out", workdir / "report.json"]) == 0
        report = json.loads((workdir / "report.json").read_text())
        assert {"nll", "rmse", "acc"} <= set(report["metrics"])
        assert report["checkpoint_hash"] == report["config_hash"]  # same config file

    def test_sample_and_export(self, workdir):
        assert run(["sample", "--data", workdir / "splits/test.jsonl", "--checkpoint", workdir / "ckpt.json",
                    "--config", workdir / "cfg.json", "--num", 2, "--seed", 5,
                    "--out", workdir / "samples.jsonl"]) == 0
        lines = (workdir / "samples.jsonl").read_text().strip().splitlines()
        first = json.loads(lines[0])
        assert "samples" in first and all("t" in s and "k" in s for s in first["samples"])

        assert run(["export-trajectories", "--data", workdir / "splits/test.jsonl",
                    "--checkpoint", workdir / "ckpt.json", "--config", workdir / "cfg.json",
                    "--limit", 2, "--out", workdir / "traj.csv"]) == 0
        with open(workdir / "traj.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["seq_id", "event_idx", "mark", "t", "mu", "fhat_0", "fhat_1"]
        assert len(rows) > 1

    def test_benchmark_csv(self, workdir):
        assert run(["benchmark", "--data", workdir / "splits/val.jsonl", "--config", workdir / "cfg.json",
                    "--iters", 2, "--out", workdir / "bench.csv"]) == 0
        with open(workdir / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {"dataset", "kernels", "mode", "sec_per_iter", "ratio"} == set(rows[0])
        modes = {r["mode"] for r in rows}
        assert modes == {"parallel", "sequential"}


class TestErrors:
    def test_missing_file_exits_two_with_usage(self, workdir, capsys):
        assert run(["evaluate", "--data", "nope.jsonl", "--checkpoint", "nope.json",
                    "--out", workdir / "x.json"]) == 2
        err = capsys.readouterr().err
        assert "error:" in err and "usage:" in err

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "--out", "x"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_two(self, workdir):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--spec", str(workdir / "spec.json"), "--wat", "--out", "x"])
        assert exc.value.code == 2


class TestCheckpointFormat:
    def test_roundtrip_and_version_guard(self, tmp_path):
        model = DecoupledModel(ModelConfig(num_marks=2, hidden_dim=4, width=6, depth=2), seed=0)
        path = tmp_path / "ckpt.json"
        save_params(str(path), model.parameters(), extra={"model_config": model.config.to_dict()})
        blob = json.loads(path.read_text())
        assert blob["version"] == 1
        fresh = DecoupledModel(ModelConfig(num_marks=2, hidden_dim=4, width=6, depth=2), seed=99)
        extra = load_params(str(path), fresh.parameters())
        assert extra["model_config"]["hidden_dim"] == 4
        for a, b in zip(model.parameters(), fresh.parameters()):
            np.testing.assert_array_equal(a.value, b.value)

        blob["version"] = 99
        path.write_text(json.dumps(blob))
        with pytest.raises(ValueError, match="version"):
            load_params(str(path), fresh.parameters())

    def test_shape_mismatch_rejected(self, tmp_path):
        model = DecoupledModel(ModelConfig(num_marks=2, hidden_dim=4, width=6, depth=2), seed=0)
        path = tmp_path / "ckpt.json"
        save_params(str(path), model.parameters())
        other = DecoupledModel(ModelConfig(num_marks=2, hidden_dim=6, width=6, depth=2), seed=0)
        with pytest.raises((ValueError, KeyError)):
            load_params(str(path), other.parameters())
