import json
import shutil

import numpy as np
import pytest

from discourse_sheaves import catalog
from discourse_sheaves.cli import (
    EXIT_DIVERGED,
    EXIT_INVALID,
    EXIT_MISMATCH,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    main,
)
from discourse_sheaves.io import dumps_model, load_model


def model(name):
    return str(catalog.bundled_path(name))


def report(outdir):
    return json.loads((outdir / "report.json").read_text())


def test_validate(capsys):
    assert main(["validate", model("fig1")]) == EXIT_OK
    assert "H0 dim 1" in capsys.readouterr().out


def test_poisson_mode(tmp_path):
    out = tmp_path / "p"
    assert main(["run", "--mode", "poisson", model("fig2"), "--out", str(out), "--no-figures"]) == EXIT_OK
    rep = report(out)
    assert rep["energy"] == pytest.approx(0.5)
    resid = {row["edge"]: row["norm"] for row in rep["edges"]}
    assert resid["e41"] == pytest.approx(1.0)
    assert max(resid[e] for e in ("e12", "e23", "e34")) < 1e-12
    assert rep["obstruction"]["compatible"] is False
    assert np.allclose(load_model(out / "final.model").cochain,
                       catalog.four_cycle().stack0(catalog.CLAMPED_LIMIT))


def test_joint_run_structural_scenario(tmp_path):
    out = tmp_path / "j"
    assert main(["joint", "run", model("fig6_scenario2"), "--out", str(out), "--no-figures"]) == EXIT_OK
    rep = report(out)
    assert rep["final_state"][1:] == pytest.approx([0.2, 0.6], abs=1e-8)
    assert rep["parameter_sources"]["alpha"] == "model"
    assert (out / "trajectory.csv").exists()


def test_joint_writes_figures(tmp_path):
    out = tmp_path / "f"
    assert main(["joint", model("exC1"), "--out", str(out)]) == EXIT_OK
    assert {"energy.png", "frobenius.png", "ratios.png"} <= {p.name for p in out.iterdir()}


def test_diffuse_from_global_section(tmp_path):
    m = catalog.bundled_models()["fig1"]
    m.cochain = m.sheaf.stack0(catalog.FOUR_CYCLE_SECTION)
    path = tmp_path / "sec.model"
    path.write_text(dumps_model(m))
    out = tmp_path / "d"
    assert main(["diffuse", str(path), "--out", str(out), "--no-figures"]) == EXIT_OK
    assert report(out)["t_end"] == 0.0


def test_csv_output_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["diffuse", model("fig1"), "--out", str(tmp_path / name), "--no-figures"]) == EXIT_OK
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_exit_codes(tmp_path):
    assert main(["diffuse", model("fig1"), "--t-max", "0.01", "--out", str(tmp_path / "t"),
                 "--no-figures"]) == EXIT_NOT_CONVERGED
    assert main(["joint", model("fig6_scenario1"), "--delta-ceiling", "1e-3", "--out", str(tmp_path / "c"),
                 "--no-figures"]) == EXIT_DIVERGED
    assert main(["validate", str(tmp_path / "missing.model")]) == EXIT_INVALID
    broken = tmp_path / "broken.model"
    broken.write_text(catalog.bundled_path("fig2").read_text()[:100])
    assert main(["validate", str(broken)]) == EXIT_INVALID
    assert main(["diffuse", model("fig1"), "--alpha", "-1", "--out", str(tmp_path / "n")]) == EXIT_INVALID
    assert main(["poisson", model("fig1"), "--out", str(tmp_path / "s")]) == EXIT_INVALID


def test_learn_with_override(tmp_path):
    out = tmp_path / "l"
    code = main(["learn", model("fig3"), "--freeze", "v4:e34", "v4:e41", "--out", str(out), "--no-figures"])
    assert code == EXIT_OK
    assert report(out)["closed_form_sq_discrepancy"] == pytest.approx(1.0)


def test_analyze_reads_rates_from_sidecar(tmp_path):
    out = tmp_path / "j"
    assert main(["joint", model("exC1"), "--beta", "0.5", "--out", str(out), "--no-figures"]) == EXIT_OK
    an = tmp_path / "a"
    assert main(["analyze", str(out / "trajectory.csv"), "--out", str(an), "--no-figures"]) == EXIT_OK
    rep = report(an)
    assert rep["parameter_sources"]["beta"] == "report.json"
    assert rep["bounds"]["structural"]["passed"]


def test_audit(tmp_path):
    out = tmp_path / "a"
    assert main(["audit", model("fig2"), "--out", str(out)]) == EXIT_OK
    seq = report(out)["exact_sequence"]
    assert seq["alternating_sum"] == 0


def test_sweep(tmp_path, capsys):
    out = tmp_path / "s"
    code = main(["sweep", model("fig6_scenario4"), "--param", "beta", "--values", "0.5", "1.0",
                 "--workers", "2", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "sweep.csv").read_text().count("\n") == 3


def test_reproduce_paper(capsys):
    assert main(["reproduce-paper"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_reproduce_detects_corrupted_model(tmp_path, capsys):
    models = tmp_path / "models"
    shutil.copytree(catalog.bundled_path("fig1").parent, models)
    doc = json.loads((models / "fig3.model").read_text())
    doc["restrictions"][0]["data"] = [-3.0]
    (models / "fig3.model").write_text(json.dumps(doc))
    assert main(["reproduce-paper", "--models", str(models)]) == EXIT_MISMATCH
    failing = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert failing and all("fig3" in ln for ln in failing)
