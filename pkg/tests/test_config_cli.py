import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from evohom import cli
from evohom.config import DEFAULTS, SCHEMA, ExpressionError, compile_expression, load_config, problem_from
from evohom.io import read_csv, write_csv, write_json
from evohom.sweep import run_sweep
from evohom.verify import verify

DOCS = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"

SMALL = {
    "micro": {"eps": 0.5, "T": 0.03, "dt": 0.01, "output_stride": 1},
    "macro": {"n": 4, "T": 0.03, "dt": 0.01, "output_stride": 1},
    "cell": {"grid_size": 8, "h": 0.05},
    "sweep": {"eps": [0.5, 0.25], "T": 0.02, "dt": 0.01},
}


def write_cfg(tmp_path, extra=None):
    cfg = json.loads(json.dumps(SMALL))
    cfg["output"] = {"dir": str(tmp_path / "out"), "vtk": True, "matrix_dump": True}
    for k, v in (extra or {}).items():
        cfg.setdefault(k, {}).update(v)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_published_schema_is_current():
    assert json.loads(DOCS.read_text()) == SCHEMA


def test_defaults_validate():
    cfg = load_config()
    jsonschema.validate(DEFAULTS, SCHEMA)
    assert cfg["micro"]["eps"] == 0.25 and cfg["problem"]["rho"] == 2.0


@pytest.mark.parametrize("bad", [{"micro": {"eps": -1}}, {"extra": 1}, {"problem": {"D": [[1, 0]]}},
                                 {"macro": {"n": 2.5}}])
def test_schema_rejects(bad):
    with pytest.raises(jsonschema.ValidationError):
        load_config(bad)


@pytest.mark.parametrize("src", ["__import__('os')", "x.real", "open(1)", "lambda: 1", "[1][0]", "'a'",
                                 "sin(x, y)", "z + 1", "sin(x=1)"])
def test_expression_sandbox(src):
    with pytest.raises((ExpressionError, SyntaxError)):
        compile_expression(src)


def test_expression_values():
    X = np.array([[0.25, 0.5], [1.0, 0.0]])
    f = compile_expression("1 + 0.3*cos(pi*x) - y**2 + t")
    np.testing.assert_allclose(f(2.0, X), 1 + 0.3 * np.cos(np.pi * X[:, 0]) - X[:, 1] ** 2 + 2.0)
    np.testing.assert_array_equal(compile_expression(3)(0.0, X), [3.0, 3.0])
    np.testing.assert_allclose(compile_expression("exp(-abs(x))")(0.0, X), np.exp(-X[:, 0]))


def test_problem_from_config():
    cfg = load_config({"problem": {"D": [["1 + x", 0], [0, 1]], "f": "t*x"}, "kinetics": {"k_rate": 0.5}})
    d = problem_from(cfg)
    X = np.array([[0.5, 0.5]])
    np.testing.assert_allclose(d.D_at(X)[0], [[1.5, 0], [0, 1]])
    np.testing.assert_allclose(d.f_at(2.0, X), [1.0])
    assert d.kinetics.k_rate == 0.5


def test_csv_is_rfc4180(tmp_path):
    rows = [{"a": 0.1, "b": 'say "hi", ok'}, {"a": 1e-300, "b": "x"}]
    p = write_csv(tmp_path / "t.csv", rows)
    raw = p.read_bytes()
    assert raw.count(b"\r\n") == 3
    assert b'"say ""hi"", ok"' in raw
    back = read_csv(p)
    assert float(back[1]["a"]) == 1e-300 and back[0]["b"] == 'say "hi", ok'


def test_json_plain_types(tmp_path):
    p = write_json(tmp_path / "r.json", {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True)})
    assert json.loads(p.read_text()) == {"a": 1.5, "b": [0, 1, 2], "c": True}


def test_cli_pipeline(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["--config", cfg, "cell-table"]) == 0
    rows = read_csv(out / "table.csv")
    assert len(rows) == 8 and list(rows[0]) == ["R", "D11", "D12", "D22", "Jbar", "dJbar_dR", "gamma"]
    assert cli.main(["--config", cfg, "micro-run"]) == 0
    rep = json.loads((out / "micro_report.json").read_text())
    assert rep["eps"] == 0.5 and len(rep["R_final"]) == 2
    series = read_csv(out / "micro_timeseries.csv")
    assert len(series) == 3 and "R_1_1" in series[0]
    assert (out / "micro_00002.vtk").exists() and (out / "micro_stiffness.mtx").exists()
    assert cli.main(["--config", cfg, "macro-run", "--table", str(out / "table.json")]) == 0
    rep = json.loads((out / "macro_report.json").read_text())
    assert rep["mass_final"] > 0 and (out / "macro_00003.vtk").exists()
    assert cli.main(["--config", cfg, "sweep", "--table", str(out / "table.json")]) == 0
    rep = json.loads((out / "sweep_report.json").read_text())
    assert [r["eps"] for r in rep["rows"]] == [0.5, 0.25]


def test_cli_verify_and_schema(tmp_path, capsys):
    assert cli.main(["verify", "kinetics", "--out", str(tmp_path / "v.json")]) == 0
    assert json.loads((tmp_path / "v.json").read_text())["passed"] is True
    assert cli.main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == SCHEMA


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"micro": {"eps": "big"}}))
    assert cli.main(["--config", str(bad), "micro-run"]) == 2
    assert "micro/eps" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "missing.json"), "micro-run"]) == 2
    wild = write_cfg(tmp_path, {"kinetics": {"windowed": False}, "problem": {"u_init": 3.0},
                                "micro": {"T": 1.0}})
    assert cli.main(["--config", wild, "micro-run"]) == 3
    assert "RadiusBoundViolation" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_verify_quick_targets():
    for target in ("geometry", "mesh", "kinetics"):
        rep = verify(target)
        assert rep["passed"], rep


def test_sweep_report_shape():
    rep = run_sweep(problem_from(load_config()), [0.25, 0.5], 0.02, 0.01, h_cell=0.05, macro_n=8,
                    cell_h=0.05, grid_size=8)
    assert [r["eps"] for r in rep["rows"]] == [0.5, 0.25]
    assert len(rep["observed_rates"]) == 1 and rep["seconds"] > 0
