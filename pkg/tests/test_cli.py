import json
import subprocess
import sys

import numpy as np
import pytest

from circaudit.cli import main
from circaudit.data import read_csv
from circaudit.teacher import write_predictions

ARTIFACTS = ("report.json", "ranking.csv", "shapes_with.svg", "shapes_without.svg", "manifest.json")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def liver_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("generate", "--rule", "liver", "--n", 4000, "--seed", 7, "--out-dir", out) == 0
    return out / "data.csv"


class TestGenerate:
    def test_writes_csv_and_sidecar(self, liver_csv):
        d = read_csv(liver_csv, "liver_sofa")
        assert d.n_rows == 4000
        for c in ("bili", "asat", "quinr", "alat", "hzv"):
            assert c in d.columns
        side = json.loads(liver_csv.with_suffix(".json").read_text())
        assert side["rule"] == "liver-sofa" and side["target"] == "liver_sofa"
        assert side["config"]["seed"] == 7 and side["config"]["n_rows"] == 4000

    def test_same_flags_same_bytes(self, tmp_path, liver_csv):
        assert run("generate", "--rule", "liver", "--n", 4000, "--seed", 7, "--out-dir", tmp_path) == 0
        assert (tmp_path / "data.csv").read_bytes() == liver_csv.read_bytes()
        assert (tmp_path / "data.json").read_bytes() == liver_csv.with_suffix(".json").read_bytes()

    def test_invalid_rule_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("generate", "--rule", "spleen")
        assert exc.value.code == 2
        assert "invalid choice" in capsys.readouterr().err

    def test_explicit_out_path(self, tmp_path):
        assert run("generate", "--rule", "patent", "--n", 450, "--out", tmp_path / "p.csv") == 0
        assert read_csv(tmp_path / "p.csv", "relevance").n_rows == 450


class TestAudit:
    def test_liver_is_circular(self, tmp_path, liver_csv):
        code = run("audit", "--data", liver_csv, "--out-dir", tmp_path)
        assert code == 10
        for name in ARTIFACTS:
            assert (tmp_path / name).exists()
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["selected"]["features"] == ["bili"]
        assert rep["outcome"] == "circular"
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest["inputs"]) == {"data.csv"}
        assert set(manifest["outputs"]) >= {"report.json", "ranking.csv", "shapes_with.svg"}

    def test_without_bilirubin(self, tmp_path, liver_csv):
        code = run("audit", "--data", liver_csv, "--exclude", "bili", "--out-dir", tmp_path)
        assert code == 0

    def test_missing_file(self, tmp_path, capsys):
        assert run("audit", "--data", tmp_path / "nope.csv", "--target", "y", "--out-dir", tmp_path) == 1
        assert "not found" in capsys.readouterr().err

    def test_needs_a_target(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,y\n1,2\n2,3\n")
        assert run("audit", "--data", tmp_path / "d.csv", "--out-dir", tmp_path) == 1

    def test_bad_lambda_flag(self):
        with pytest.raises(SystemExit):
            run("audit", "--rule", "liver", "--lambda", "sometimes")

    def test_generated_on_the_fly_with_fixed_lambda(self, tmp_path):
        code = run("audit", "--rule", "kidney", "--n", 3000, "--lambda", "fixed:1e-6",
                   "--features", "crea,urine24,bun", "--out-dir", tmp_path)
        assert code == 10
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["config"]["lam"] == 1e-6

    def test_too_few_knots_for_a_step_rule(self, tmp_path):
        code = run("audit", "--rule", "kidney", "--n", 3000, "--knots", 10, "--features", "crea,urine24,bun",
                   "--out-dir", tmp_path)
        assert code == 0
        assert json.loads((tmp_path / "report.json").read_text())["config"]["knots"] == 10

    def test_byte_identical_reruns(self, tmp_path, liver_csv):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run("audit", "--data", liver_csv, "--features", "bili,asat,hzv", "--out-dir", out)
        for name in ARTIFACTS:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestDistill:
    def test_trained_teacher_with_ablation(self, tmp_path):
        code = run("distill", "--rule", "patent-binary", "--n", 6000, "--ablate", "inventor,examiner,family",
                   "--out-dir", tmp_path)
        assert code == 10
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["f1"] >= 0.99
        assert metrics["ablated"]["f1"] < 0.5
        assert metrics["ablated"]["features"] == ["inventor", "examiner", "family"]
        assert (tmp_path / "teacher.json").exists()
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["config"]["family"] == "binomial"

    def test_external_predictions(self, tmp_path):
        assert run("generate", "--rule", "patent-binary", "--n", 2000, "--out-dir", tmp_path) == 0
        d = read_csv(tmp_path / "data.csv", "relevance")
        write_predictions(tmp_path / "pred.csv", 0.2 + 0.6 * d["family"])
        code = run("distill", "--data", tmp_path / "data.csv", "--predictions", tmp_path / "pred.csv",
                   "--known-rule", "family", "--out-dir", tmp_path / "out")
        assert code == 10
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert rep["selected"]["features"] == ["family"]
        assert not (tmp_path / "out" / "teacher.json").exists()

    def test_prediction_row_mismatch(self, tmp_path):
        assert run("generate", "--rule", "patent-binary", "--n", 500, "--out-dir", tmp_path) == 0
        write_predictions(tmp_path / "pred.csv", np.zeros(499))
        assert run("distill", "--data", tmp_path / "data.csv", "--predictions", tmp_path / "pred.csv",
                   "--out-dir", tmp_path) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "circaudit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "circaudit" in proc.stdout
