import csv
import json
import math

import numpy as np
import pytest

from ctrc import io
from ctrc.cli import main


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--shape", "6,6,5", "--shape", "6,6,4", "--rank", "2",
                 "--shared-modes", "2", "--sr", "0.5,0.6", "--seed", "3",
                 "--out-dir", str(out)]) == 0
    return out


def test_generate_writes_a_loadable_problem(generated):
    names = {p.name for p in generated.iterdir()}
    assert {"manifest.json", "t1.coo", "t2.coo", "t1_truth.dense", "t2_truth.tr"} <= names
    problem, _, truths = io.read_manifest(generated / "manifest.json")
    assert [t.shape for t in truths] == [(6, 6, 5), (6, 6, 4)]
    assert len(problem.masks[0]) == round(0.5 * 180)
    f = io.read_factors(generated / "t1_truth.tr")
    assert f.ranks == (2, 2, 2)


def test_complete(generated, tmp_path, capsys):
    assert main(["complete", str(generated / "manifest.json"), "--max-iters", "4",
                 "--out-dir", str(tmp_path)]) == 0
    assert "iterations=4" in capsys.readouterr().out
    report = io.read_report(tmp_path / "report.json")
    assert len(report["objective"]) == 4 and set(report["rmse"]) == {"0", "1"}
    assert io.read_dense(tmp_path / "x2.dense").shape == (6, 6, 4)


def test_als(generated, tmp_path, capsys):
    assert main(["als", str(generated / "t1.coo"), "--rank", "2", "--truth",
                 str(generated / "t1_truth.dense"), "--max-iters", "3",
                 "--out-dir", str(tmp_path)]) == 0
    assert "rmse=" in capsys.readouterr().out
    assert io.read_factors(tmp_path / "als.tr").ranks == (2, 2, 2)


def test_compare(generated, tmp_path):
    assert main(["compare", str(generated / "manifest.json"), "--ranks", "2", "--reps", "1",
                 "--max-iters", "3", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "compare_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["method"], r["tensor"]) for r in rows} == {
        ("coupled", "1"), ("coupled", "2"), ("tr-als", "1"), ("tr-als", "2")}


def test_phase(tmp_path, capsys):
    assert main(["phase", "--sr1", "0.2", "--sr2", "0.3", "--ranks", "2", "--shared-modes", "1",
                 "--max-iters", "2", "--out-dir", str(tmp_path)]) == 0
    assert "1 runs, 0 failed" in capsys.readouterr().out
    assert (tmp_path / "phase_sr2-0.3_L-1.csv").exists()


def test_bound_sweep(tmp_path):
    assert main(["bound", "--sweep", "T1=300,3000", "--L", "4", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "bound.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["T1"] for r in rows] == ["300", "3000"]
    assert float(rows[0]["eps"]) == 0.0
    # with every mode coupled the series bound and the supremum coincide
    for r in rows:
        assert float(r["coupled"]) == pytest.approx(float(r["supremum"]), rel=1e-4)
    assert float(rows[1]["coupled"]) < float(rows[0]["coupled"])


def test_bound_records_domain_errors_as_nan(tmp_path):
    assert main(["bound", "--eps", "4", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "bound.csv") as fh:
        row = next(csv.DictReader(fh))
    assert math.isnan(float(row["coupled"])) and math.isnan(float(row["supremum"]))


@pytest.mark.parametrize("argv", [
    ["complete", "missing.json"],
    ["bound", "--sweep", "zz=1,2"],
    ["bound", "--L", "9"],
    ["generate", "--sr", "0.5", "--shape", "4,4", "--shape", "4,4", "--shared-modes", "1"],
])
def test_errors_exit_nonzero(argv, tmp_path, capsys):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_manifest_is_json(generated):
    doc = json.loads((generated / "manifest.json").read_text())
    assert doc["shared_modes"] == 2 and doc["coupled_distances"] == [2, 2, 2]
    assert np.array_equal(io.read_coo(generated / doc["tensors"][0]["file"])[1].dense().shape,
                          (6, 6, 5))
