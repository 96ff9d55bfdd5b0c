import json

import numpy as np
import pytest

from robust_cpd import tensor_io
from robust_cpd.cli import load_factors, main


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--dims", "10", "8", "8", "--rank", "2", "--outliers", "2",
                 "--sor", "0", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_gen_outputs(data_dir):
    t = tensor_io.load(data_dir / "tensor.bin", ndim=3)
    assert t.shape == (10, 8, 8)
    meta = json.loads((data_dir / "meta.json").read_text())
    assert len(meta["outliers"]) == 2 and meta["identifiable_bound"]
    assert meta["realized_sor_db"] == pytest.approx(0.0, abs=1e-9)
    assert load_factors(data_dir).shape == (10, 8, 8)


def test_fit_and_eval(data_dir, tmp_path, capsys):
    fit_dir = tmp_path / "fit"
    assert main(["fit", str(data_dir / "tensor.bin"), "--rank", "2", "--init", "tals",
                 "--out", str(fit_dir), "--truth", str(data_dir)]) == 0
    report = json.loads((fit_dir / "report.json").read_text())
    assert {"mse_db_B", "mse_db_C", "cost_trace", "weights"} <= set(report)
    assert len(report["weights"]) == 10
    assert report["mse_db_B"] < -60
    assert np.all(np.diff(report["cost_trace"]) <= 1e-9)
    capsys.readouterr()
    assert main(["eval", "--truth", str(data_dir), "--estimate", str(fit_dir),
                 "--report", str(tmp_path / "eval.json")]) == 0
    assert "MSE B" in capsys.readouterr().out
    ev = json.loads((tmp_path / "eval.json").read_text())
    assert ev["mse_db_B"] == pytest.approx(report["mse_db_B"])


def test_fit_csv_and_constrained_config(data_dir, tmp_path):
    csv_path = tmp_path / "t.csv"
    tensor_io.save(csv_path, tensor_io.load(data_dir / "tensor.bin"))
    cfg = tmp_path / "fit.yaml"
    cfg.write_text("solver:\n  max_iters: 50\nconstraints: nonnegative\nregularizers:\n  C: {kind: l1, lam: 0.01}\n")
    out = tmp_path / "fitnn"
    assert main(["fit", str(csv_path), "--rank", "2", "--config", str(cfg), "--format", "csv",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["algorithm"] == "irals_constrained" and report["iterations"] <= 50
    f = load_factors(out)
    assert np.all(f.A >= 0) and np.all(f.B >= 0) and np.all(f.C >= 0)


def test_fit_rejects_constraints_with_plain_irals(data_dir, tmp_path):
    with pytest.raises(SystemExit):
        main(["fit", str(data_dir / "tensor.bin"), "--rank", "2", "--algorithm", "irals", "--nonneg",
              "--out", str(tmp_path / "x")])


def test_sweep(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(
        "dims: [10, 8, 8]\nranks: [2]\noutlier_counts: [2]\nsor_dbs: [-5, 5]\ntrials: 3\n"
        "solver: {max_iters: 100}\n"
        "algorithms:\n  - tals\n  - irals\n"
    )
    prefix = tmp_path / "out" / "rep"
    assert main(["sweep", str(cfg), "--out", str(prefix), "--trials", "2"]) == 0
    d = json.loads((tmp_path / "out" / "rep.json").read_text())
    assert d["config"]["trials"] == 2
    assert [p["point"]["sor_db"] for p in d["points"]] == [-5.0, 5.0]
    assert (tmp_path / "out" / "rep_table.csv").exists() and (tmp_path / "out" / "rep_weights.csv").exists()
