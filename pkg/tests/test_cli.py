import csv
import json

import numpy as np
import pytest

from impulsive.builtins import builtin_system, singular_section_variant
from impulsive.cli import EXIT_BUDGET, EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main, run
from impulsive.config import emit_config


def _json(path):
    return json.loads(open(path).read())


def test_simulate(tmp_path):
    res = run(["simulate", "S1a", "--x0", "0,2,0", "--t", "10", "--dt", "0.5", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_OK
    np.testing.assert_allclose(res.summary["impulsive_times"], [1.5 * np.pi, 3 * np.pi], atol=1e-6)
    csv_path = next(p for p in res.outputs if p.endswith(".csv"))
    assert res.config_hash in csv_path and csv_path.endswith("_s0.csv")
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["t", "x1", "x2", "x3", "arc_index"]
    assert {r[-1] for r in rows[1:]} == {"0", "1", "2"}
    ev = _json(next(p for p in res.outputs if p.endswith(".json")))
    assert ev["schema_version"] == 1 and ev["config_hash"] == res.config_hash and ev["seed"] == 0
    manifest = _json(tmp_path / f"manifest_simulate_{res.config_hash}_s0.json")
    assert manifest["exit_code"] == 0 and manifest["outputs"] == res.outputs


def test_env_var_and_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("IMPULSIVE_OUTPUT_DIR", str(tmp_path / "a"))
    a = run(["poincare", "S2", "--x0", "0.5,0.2,0.2", "--seed", "4"])
    monkeypatch.setenv("IMPULSIVE_OUTPUT_DIR", str(tmp_path / "b"))
    b = run(["poincare", "S2", "--x0", "0.5,0.2,0.2", "--seed", "4"])
    assert a.exit_code == b.exit_code == EXIT_OK
    assert all(str(tmp_path / "a") in p for p in a.outputs)
    for pa, pb in zip(a.outputs, b.outputs):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_validate_config_file(tmp_path):
    good = tmp_path / "s1a.json"
    good.write_text(emit_config(builtin_system("S1a")))
    assert run(["validate", str(good), "--out", str(tmp_path)]).exit_code == EXIT_OK
    bad = tmp_path / "singular.json"
    bad.write_text(emit_config(singular_section_variant()))
    res = run(["validate", str(bad), "--out", str(tmp_path)])
    assert res.exit_code == EXIT_INVALID
    assert res.checks["singularity-free"] is False and res.checks["transversal-D_hat"] is True


def test_invalid_inputs(tmp_path):
    assert run(["validate", "S9", "--out", str(tmp_path)]).exit_code == EXIT_INVALID
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  oops\n}")
    res = run(["validate", str(broken), "--out", str(tmp_path)])
    assert res.exit_code == EXIT_INVALID and "line 2" in res.error
    res = run(["simulate", str(tmp_path / "singular.json"), "--x0", "0,2,0", "--t", "1", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_INVALID


def test_numerical_failure(tmp_path):
    # the identity return map has fixed points on every circle
    res = run(["index", "S1a", "--x0", "0,2,0", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_NUMERICAL
    assert "FixedPointOnBoundary" in res.error


def test_budget_exhausted(tmp_path):
    region = tmp_path / "region.json"
    region.write_text(json.dumps({"lower": [0.5, 0.2, 0.2], "upper": [0.55, 0.3, 0.3]}))
    res = run(["densify", "S2", "--mode", "impulse", "--eps", "0.1", "--budget", "0", "--region", str(region), "--out", str(tmp_path)])
    assert res.exit_code == EXIT_BUDGET
    rep = _json(next(p for p in res.outputs if "density_report" in p))
    assert rep["final_gap"] == "inf" and rep["config_hash"] == res.config_hash


def test_close_and_attract_write_configs(tmp_path):
    res = run(["close", "S2", "--mode", "impulse", "--target", "0.5,0.25,0.25", "--eps", "0.05", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_OK
    cfg = next(p for p in res.outputs if "system" in p)
    assert run(["validate", cfg, "--out", str(tmp_path)]).exit_code == EXIT_OK
    res = run(["attract", "S1a", "--mode", "impulse", "--x0", "0,2,0", "--eta", "0.1", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_OK


def test_main_prints_status(tmp_path, capsys):
    code = main(["hit", "S1a", "--x0", "0,2,0", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0 and out.startswith("hit: ok")


def test_bad_point_argument(tmp_path):
    with pytest.raises(SystemExit):
        run(["simulate", "S1a", "--x0", "a,b", "--t", "1"])
