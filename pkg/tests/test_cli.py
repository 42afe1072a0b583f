import csv
import json

import numpy as np
import pytest

from hcpi.cli import RunConfig, ValidationError, main, parse_echo
from hcpi.cluster import DendrogramTree
from hcpi.core import read_dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def toy(tmp_path):
    assert run("simulate", "--n", 80, "--blocks", "3,3", "--support-size", 2, "--rho", 0.5, "--seed", 1,
               "--name", "toy", "--out-dir", tmp_path) == 0
    return tmp_path / "toy.csv"


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


class TestSimulate:
    def test_defaults(self, tmp_path, capsys):
        assert run("simulate", "--out-dir", tmp_path) == 0
        d = read_dataset(tmp_path / "sim_0.csv")
        assert d.p == 124 and d.n == 400
        assert d.meta["blocks"] == [4, 8, 16, 32, 64]
        out = capsys.readouterr().out
        assert "p=124" in out and "n=400" in out and "realized_snr=2" in out

    def test_nonlinear(self, tmp_path):
        assert run("simulate", "--scenario", "nonlinear", "--n", 50, "--out-dir", tmp_path, "--name", "nl") == 0
        meta = json.loads((tmp_path / "nl.meta.json").read_text())
        assert len(meta["support"]) == 5

    def test_byte_identical_rerun(self, tmp_path):
        for sub in ("a", "b"):
            assert run("simulate", "--n", 30, "--blocks", "4,4", "--support-size", 3, "--seed", 5,
                       "--out-dir", tmp_path / sub) == 0
        for name in ("sim_5.csv", "sim_5.meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("simulate", "--n", 30, "--blocks", "4,4", "--support-size", 1, "--out-dir", blocker / "sub") == 2
        assert str(blocker) in capsys.readouterr().err

    def test_invalid_config_values(self, tmp_path):
        assert run("simulate", "--rho", 1.5, "--out-dir", tmp_path) == 1
        assert run("simulate", "--blocks", "2,2", "--out-dir", tmp_path) == 1


class TestAnalyze:
    def test_schema(self, toy, tmp_path):
        assert run("analyze", toy, "--folds", 5, "--n-perm", 5, "--out-dir", tmp_path / "out") == 0
        res = json.loads((tmp_path / "out" / "toy_results.json").read_text())
        p = res["tree"]["p"]
        assert p == 6 and len(res["inference"]["nodes"]) == 2 * p - 1
        for rec in res["inference"]["nodes"]:
            assert {"p_raw", "p_h", "p_tilde", "selected", "members"} <= set(rec)
            assert rec["selected"] == (rec["p_tilde"] <= 0.05)
        assert res["task_type"] == "regression"
        assert len(res["training_reports"]) == 5 and res["training_reports"][0]["kind"] == "ridge"
        echo, rows = read_csv(tmp_path / "out" / "toy_importance.csv")
        assert len(rows) == 11 * 5
        assert parse_echo(echo) == RunConfig.from_dict(res["config"])

    def test_alpha(self, toy, tmp_path):
        assert run("analyze", toy, "--folds", 4, "--n-perm", 3, "--alpha", 0.3, "--out-dir", tmp_path) == 0
        res = json.loads((tmp_path / "toy_results.json").read_text())
        assert res["inference"]["alpha"] == 0.3
        assert all(r["selected"] == (r["p_tilde"] <= 0.3) for r in res["inference"]["nodes"])

    def test_conserve(self, toy, tmp_path):
        assert run("analyze", toy, "--folds", 4, "--n-perm", 3, "--conserve", "--epsilon", 1.6449,
                   "--out-dir", tmp_path) == 0
        res = json.loads((tmp_path / "toy_results.json").read_text())
        tree = DendrogramTree.from_dict(res["tree"])
        c = np.array(res["importance"]["psi_corrected"])
        for nid in range(tree.p, tree.n_nodes):
            left, right = tree.children(nid)
            np.testing.assert_allclose(c[nid], c[left] + c[right], atol=1e-12)
        assert res["inference_conserved"]["corrected"] is True
        assert res["config"]["epsilon"] == 1.6449
        _, rows = read_csv(tmp_path / "toy_nodes_conserved.csv")
        assert len(rows) == 11

    def test_leaves_only(self, toy, tmp_path):
        assert run("analyze", toy, "--folds", 3, "--n-perm", 2, "--leaves-only", "--out-dir", tmp_path) == 0
        res = json.loads((tmp_path / "toy_results.json").read_text())
        assert [r["id"] for r in res["inference"]["nodes"]] == list(range(6))
        assert run("analyze", toy, "--leaves-only", "--conserve", "--folds", 3, "--out-dir", tmp_path) == 1

    def test_classification_detected(self, tmp_path):
        gen = np.random.default_rng(0)
        X = gen.standard_normal((60, 3))
        y = (X[:, 0] > 0).astype(int)
        path = tmp_path / "cls.csv"
        rows = ["a,b,c,target"] + [f"{r[0]},{r[1]},{r[2]},{t}" for r, t in zip(X, y)]
        path.write_text("\n".join(rows) + "\n")
        assert run("analyze", path, "--folds", 3, "--n-perm", 2, "--out-dir", tmp_path) == 0
        res = json.loads((tmp_path / "cls_results.json").read_text())
        assert res["task_type"] == "classification"
        assert res["importance"]["config"]["loss"] == "cross_entropy"
        assert run("analyze", path, "--folds", 3, "--n-perm", 2, "--model", "logistic", "--loss", "hinge",
                   "--out-dir", tmp_path) == 0
        assert run("analyze", path, "--model", "mlp", "--out-dir", tmp_path) == 1

    @pytest.mark.parametrize(
        "content, message",
        [("a,target\n1,2\n2,3\n3,1\n", "p="), ("a,b,target\n1,2,0\n2,3,0\n3,1,0\n", "constant")],
    )
    def test_diagnostics(self, tmp_path, capsys, content, message):
        path = tmp_path / "bad.csv"
        path.write_text(content)
        assert run("analyze", path, "--out-dir", tmp_path) == 1
        assert message in capsys.readouterr().err

    def test_validation_errors(self, toy, tmp_path):
        assert run("analyze", toy, "--alpha", 2, "--out-dir", tmp_path) == 1
        assert run("analyze", toy, "--folds", 1, "--out-dir", tmp_path) == 1
        assert run("analyze", tmp_path / "missing.csv") == 1
        assert run("analyze", toy, "--bogus") == 1
        assert run("analyze", toy, "--model", "svm") == 1
        assert run("frobnicate") == 1

    def test_config_file_and_flag_precedence(self, toy, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"input": str(toy), "folds": 3, "n_perm": 2, "alpha": 0.2}))
        assert run("analyze", "--config", cfg, "--alpha", 0.1, "--out-dir", tmp_path) == 0
        res = json.loads((tmp_path / "toy_results.json").read_text())
        assert res["config"]["folds"] == 3 and res["config"]["alpha"] == 0.1
        cfg.write_text(json.dumps({"folds": 3, "colour": "red"}))
        assert run("analyze", toy, "--config", cfg) == 1
        cfg.write_text("{not json")
        assert run("analyze", toy, "--config", cfg) == 1
        assert run("analyze", toy, "--config", tmp_path / "nope.json") == 2


class TestBench:
    ARGS = ("bench", "--n", 60, "--blocks", "3,3", "--support-size", 2, "--folds", 3, "--n-perm", 2)

    def test_single_point(self, tmp_path, capsys):
        assert run(*self.ARGS, "--rho-grid", "0.3", "--reps", 1, "--methods", "hcpi", "--out-dir", tmp_path) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["bench_rows.csv", "bench_summary.json"]
        echo, rows = read_csv(tmp_path / "bench_rows.csv")
        assert len(rows) == 1 and parse_echo(echo).task == "bench"
        assert "hcpi rho=0.3" in capsys.readouterr().out

    def test_grid_and_methods(self, tmp_path):
        assert run(*self.ARGS, "--rho-grid", "0.3,0.9", "--reps", 1, "--methods", "hcpi,cpi_flat",
                   "--out-dir", tmp_path) == 0
        summary = json.loads((tmp_path / "bench_summary.json").read_text())["summary"]
        assert {s["rho_max"] for s in summary} == {0.3, 0.9}
        _, rows = read_csv(tmp_path / "bench_rows.csv")
        assert {r["method"] for r in rows} == {"hcpi", "cpi_flat"}

    def test_unknown_method(self, tmp_path):
        assert run(*self.ARGS, "--methods", "sage", "--out-dir", tmp_path) == 1


class TestExport:
    @pytest.fixture
    def results(self, toy, tmp_path):
        assert run("analyze", toy, "--folds", 4, "--n-perm", 3, "--alpha", 0.5, "--out-dir", tmp_path) == 0
        return tmp_path / "toy_results.json"

    def test_outputs(self, results, tmp_path):
        assert run("export", results, "--out-dir", tmp_path) == 0
        text = (tmp_path / "toy_tree.txt").read_text().splitlines()
        assert parse_echo(text[0]).task == "export"
        leaves = [line.split()[-2] for line in text[1:] if " x" in line and "node" not in line]
        assert sorted(leaves) == sorted(f"x{j}" for j in range(6))
        _, rows = read_csv(tmp_path / "toy_dendrogram.csv")
        assert len(rows) == 11
        res = json.loads(results.read_text())
        chosen = {r["id"] for r in res["inference"]["nodes"] if r["selected"]}
        tree = DendrogramTree.from_dict(res["tree"])
        for row in rows:
            nid = int(row["node_id"])
            assert (row["selected"] == "true") == (nid in chosen)
            if row["frontier"] == "true":
                assert nid in chosen and not set(tree.children(nid)) & chosen

    def test_nothing_significant(self, results, tmp_path):
        res = json.loads(results.read_text())
        for r in res["inference"]["nodes"]:
            r["p_tilde"], r["selected"] = 1.0, False
        res["inference"]["frontier"] = []
        results.write_text(json.dumps(res))
        assert run("export", results, "--out-dir", tmp_path) == 0
        text = (tmp_path / "toy_tree.txt").read_text().splitlines()[1:]
        assert not any(line.startswith("*") for line in text)
        _, rows = read_csv(tmp_path / "toy_dendrogram.csv")
        assert all(r["selected"] == "false" for r in rows)

    def test_malformed(self, results, tmp_path, capsys):
        res = json.loads(results.read_text())
        del res["tree"]
        results.write_text(json.dumps(res))
        assert run("export", results, "--out-dir", tmp_path) == 1
        assert "'tree'" in capsys.readouterr().err


class TestRunConfig:
    def test_echo_round_trip(self):
        cfg = RunConfig(task="bench", rho_grid=(0.1, 0.5), methods=("hcpi_ic",), seed=3, conserve=True)
        assert parse_echo(cfg.echo()) == cfg

    def test_unknown_keys(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"foo": 1})
        with pytest.raises(ValidationError):
            parse_echo("not an echo")
