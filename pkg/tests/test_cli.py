import csv
import json

import numpy as np
import pytest

from appex.cli import builtin_specs, main
from appex.experiments import ExperimentSpec
from appex.io import read_dataset
from appex.loop import AppexConfig, run_appex


def _run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "ds.csv"
    code, _, _ = _run(capsys, "simulate", "--kind", "example2b", "--M", 40, "--out", path)
    assert code == 0
    return path


class TestSimulate:
    def test_example2_protocol(self, tmp_path, capsys):
        path = tmp_path / "ex2.csv"
        code, out, _ = _run(capsys, "simulate", "--kind", "example2b", "--out", path)
        assert code == 0
        data = read_dataset(path)
        assert len(data) == 20 and data.counts == [500] * 20
        params = json.loads((tmp_path / "ex2_params.json").read_text())
        assert params["A"] == [[0.0, 1.0], [-1.0, 0.0]]
        assert json.loads(out)["times"] == 20

    def test_params_file_and_trajectories(self, tmp_path, capsys):
        (tmp_path / "p.json").write_text(json.dumps({"A": [[-1.0]], "H": [[1.0]]}))
        (tmp_path / "x0.json").write_text("[[1.0], [2.0]]")
        code, _, _ = _run(capsys, "simulate", "--params", tmp_path / "p.json", "--initial",
                          tmp_path / "x0.json", "--M", 5, "--out", tmp_path / "d.csv",
                          "--trajectories", tmp_path / "t.csv")
        assert code == 0
        with open(tmp_path / "t.csv") as fh:
            assert next(csv.reader(fh)) == ["time", "path_id", "x1"]

    def test_random_kind_needs_d(self, tmp_path, capsys):
        code, _, err = _run(capsys, "simulate", "--kind", "random_dense", "--out", tmp_path / "x.csv")
        assert code == 2 and "--d" in json.loads(err)["message"]

    def test_unwritable(self, tmp_path, capsys):
        (tmp_path / "file").write_text("")
        code, _, err = _run(capsys, "simulate", "--kind", "example1a", "--M", 2,
                            "--out", tmp_path / "file" / "x.csv")
        assert code == 1
        assert "file" in json.loads(err)["message"]


class TestEstimate:
    def test_outputs(self, dataset, tmp_path, capsys):
        hist = tmp_path / "h.jsonl"
        code, out, _ = _run(capsys, "estimate", dataset, "--sigma0-sq", 1, "--iters", 2, "--out", hist)
        assert code == 0
        res = json.loads(out)
        assert np.array(res["A_hat"]).shape == (2, 2)
        assert len(hist.read_text().splitlines()) == 2

    def test_one_iteration_is_wot(self, dataset, capsys):
        code, out, _ = _run(capsys, "estimate", dataset, "--sigma0-sq", 0.5, "--iters", 1)
        assert code == 0
        ref = run_appex(read_dataset(dataset), AppexConfig(sigma0_sq=0.5, n_iters=1))
        np.testing.assert_array_equal(np.array(json.loads(out)["A_hat"]), ref.history[0].A_hat)

    def test_sigma_required(self, dataset, capsys):
        code, _, err = _run(capsys, "estimate", dataset)
        assert code == 2 and json.loads(err)["error"] == "UsageError"

    def test_malformed_header(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("time,sample,x1\n0,0,1\n")
        code, _, err = _run(capsys, "estimate", bad, "--sigma0-sq", 1)
        obj = json.loads(err)
        assert code == 2
        assert obj["column"] == "sample_id" and "sample_id" in obj["message"]

    def test_single_snapshot(self, tmp_path, capsys):
        path = tmp_path / "one.csv"
        _run(capsys, "simulate", "--kind", "example1a", "--M", 5, "--n-marginals", 1, "--out", path)
        code, _, err = _run(capsys, "estimate", path, "--sigma0-sq", 1)
        assert code == 2 and json.loads(err)["message"] == "N ≥ 2 required"

    def test_bad_config(self, dataset, capsys):
        code, _, _ = _run(capsys, "estimate", dataset, "--sigma0-sq", -1)
        assert code == 2


class TestGraph:
    def test_zero_matrices(self, tmp_path, capsys):
        est = tmp_path / "z.json"
        est.write_text(json.dumps({"A_hat": [[0, 0], [0, 0]], "H_hat": [[0, 0], [0, 0]]}))
        code, out, _ = _run(capsys, "graph", est, "--out", tmp_path / "g")
        assert code == 0
        g = json.loads((tmp_path / "g.json").read_text())
        assert g["edges"] == [] and g["confounders"] == []
        assert "->" not in (tmp_path / "g.dot").read_text()

    def test_shd_against_truth(self, tmp_path, capsys):
        est = tmp_path / "e.json"
        truth = tmp_path / "t.json"
        est.write_text(json.dumps({"A_hat": [[0, 0, 0], [1, 0, 0], [0, 0, 0]], "H_hat": np.eye(3).tolist()}))
        truth.write_text(json.dumps({"A": [[0, 0, 0], [1, 0, 0], [0, -1, 0]], "H": np.eye(3).tolist()}))
        code, out, _ = _run(capsys, "graph", est, "--truth", truth)
        res = json.loads(out)
        assert code == 0 and res["shd_drift"] == 1 and res["shd_confounders"] == 0

    @pytest.mark.parametrize("eps", ["0", "-1"])
    def test_eps_positive(self, tmp_path, capsys, eps):
        est = tmp_path / "e.json"
        est.write_text(json.dumps({"A": [[0]], "H": [[1]]}))
        code, _, err = _run(capsys, "graph", est, "--eps", eps)
        assert code == 2 and json.loads(err)["message"] == "eps must be positive"

    def test_shape_mismatch(self, tmp_path, capsys):
        est = tmp_path / "e.json"
        est.write_text(json.dumps({"A": [[0]], "H": [[1, 0], [0, 1]]}))
        code, _, _ = _run(capsys, "graph", est)
        assert code == 2


class TestExperiment:
    def test_builtin_specs_load(self):
        names = builtin_specs()
        for n in ("example1a", "example3b", "table1_d3", "table1_d10", "table3_d3_p025",
                  "table4_d3", "table4_d5", "consistency_d2"):
            assert n in names

    def test_spec_file(self, tmp_path, capsys):
        spec = ExperimentSpec(name="tiny", kind="example2a", n_replicates=2, M=20, n_steps=20,
                              n_marginals=4, appex={"n_iters": 2})
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(spec.to_dict()))
        code, out, _ = _run(capsys, "experiment", path, "--out", tmp_path / "res", "--replicates", 1)
        assert code == 0
        bundle = json.loads((tmp_path / "res" / "tiny.json").read_text())
        assert len(bundle["replicates"]) == 1 and bundle["se_warning"]
        assert (tmp_path / "res" / "tiny_curves.csv").exists()

    def test_unknown_spec(self, capsys):
        code, _, err = _run(capsys, "experiment", "no_such_spec")
        assert code == 2 and "built-in specs" in json.loads(err)["message"]

    def test_invalid_spec(self, tmp_path, capsys):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"name": "x", "kind": "example1a", "M": 0}))
        code, _, _ = _run(capsys, "experiment", path)
        assert code == 2
