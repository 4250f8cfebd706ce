import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fve2l import stability
from fve2l.cli import main
from fve2l.mesh import build_structured, write_mesh


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "run-manifest.json").read_text())


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def check_outputs_parse(out):
    man = manifest(out)
    for name in man["outputs"]:
        p = out / name
        assert p.exists(), name
        if name.endswith(".json"):
            json.loads(p.read_text())
        elif name.endswith(".csv"):
            assert len(read_csv(p)) > 1
        elif name.endswith(".png"):
            assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    return man


def test_convergence_example(tmp_path):
    code, out = run(tmp_path, "convergence", "--order", "3", "--problem", "example1", "--n", "4,8,16,32")
    assert code == 0
    rows = read_csv(out / "convergence.csv")
    fitted = {r[0]: float(r[1]) for r in rows if r and r[0].startswith("fitted")}
    assert abs(fitted["fitted_L2_order"] - 4) <= 0.15
    assert abs(fitted["fitted_H1_order"] - 3) <= 0.15
    assert json.loads((out / "convergence.json").read_text())["order"] == 3
    man = check_outputs_parse(out)
    assert man["exit_code"] == 0 and man["config"]["ns"] == [4, 8, 16, 32]


def test_stability_example(tmp_path):
    code, out = run(tmp_path, "stability", "--order", "4", "--params", "table2")
    d = json.loads((out / "stability.json").read_text())
    assert set(d) >= {"order", "a", "b", "r1_lower", "BN_degrees", "feasible", "curve"}
    assert abs(d["BN_degrees"] - 28.85) <= 0.5
    # the tabulated quartic parameters leave H(1,1) indefinite
    assert d["feasible"] is False and code == 4
    assert manifest(out)["status"] == "infeasible"


def test_stability_feasible_exit_zero(tmp_path):
    code, out = run(tmp_path, "stability", "--order", "2", "--params", "table2", "--plots")
    assert code == 0
    check_outputs_parse(out)


def test_conservation_example(tmp_path):
    code, out = run(tmp_path, "conservation", "--order", "2", "--problem", "example1", "--n", "8", "--plots")
    assert code == 0
    rows = read_csv(out / "conservation.csv")
    assert rows[0] == ["layer", "element", "centroid_x", "centroid_y", "flux_residual", "equation_residual"]
    layer2 = [r for r in rows[1:] if r[0] == "2"]
    assert len(layer2) == 128
    assert max(abs(float(r[4])) for r in layer2) <= 1e-8
    assert max(abs(float(r[5])) for r in layer2) <= 1e-8
    check_outputs_parse(out)


def test_solve_writes_17_digits(tmp_path):
    code, out = run(tmp_path, "solve", "--order", "2", "--problem", "example1", "--n", "2")
    assert code == 0
    rows = read_csv(out / "solution.csv")
    assert rows[0] == ["dof", "x", "y", "value"]
    vals = [r[3] for r in rows[1:]]
    assert any(len(v.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) == 17 for v in vals)
    # exact at the boundary nodes
    x, y, v = (np.array([float(r[i]) for r in rows[1:]]) for i in (1, 2, 3))
    bnd = (np.abs(x) == 1) | (np.abs(y) == 1)
    np.testing.assert_allclose(v[bnd], np.exp(x[bnd] + 2 * y[bnd]), rtol=1e-15)


def test_solve_elasticity_and_mesh_file(tmp_path):
    mesh_path = tmp_path / "m.txt"
    write_mesh(build_structured(3), mesh_path)
    code, out = run(tmp_path, "solve", "--problem", "example2", "--mesh", str(mesh_path))
    assert code == 0
    rows = read_csv(out / "solution.csv")
    assert len(rows) - 1 == 2 * (7 ** 2 + 18)


def test_condnum(tmp_path):
    code, out = run(tmp_path, "condnum", "--order", "3", "--n", "2,4,8", "--plots")
    assert code == 0
    rows = read_csv(out / "condnum.csv")
    assert rows[0] == ["n", "h_bar", "dofs", "kappa_fve2l", "kappa_fem"]
    man = check_outputs_parse(out)
    assert 1.5 < man["summary"]["slope"] < 2.5


def test_numerical_failure_exit_3(tmp_path):
    # nodal map with the tabulated quadratic parameters loses coercivity at n = 16
    code, out = run(tmp_path, "condnum", "--order", "2", "--params", "table2", "--n", "8,16")
    assert code == 3
    diag = json.loads((out / "diagnostic.json").read_text())
    assert diag["type"] == "IndefiniteError"
    assert manifest(out)["status"] == "numerical_failure"


@pytest.mark.parametrize("argv", (
    ["solve", "--order", "5"],
    ["convergence", "--n", "4,8"],
    ["solve", "--n", "1"],
    ["solve", "--n", "a,b"],
    ["stability", "--params", "file"],
    ["bogus"],
    [],
))
def test_usage_errors(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == 2


def test_plots_without_matplotlib(tmp_path, monkeypatch):
    import importlib.util
    real = importlib.util.find_spec
    monkeypatch.setattr(importlib.util, "find_spec", lambda name, *a: None if name == "matplotlib" else real(name, *a))
    assert main(["stability", "--order", "2", "--plots", "--out", str(tmp_path / "p")]) == 2
    assert not (tmp_path / "p").exists()


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\norder = 3\nproblem = example2\nn = 2\n")
    code, out = run(tmp_path, "solve", "--config", str(cfg), "--order", "4")
    assert code == 0
    c = manifest(out)["config"]
    assert (c["order"], c["problem"], c["ns"]) == (4, "example2", [2])
    cfg.write_text("bogus = 1\n")
    assert main(["solve", "--config", str(cfg)]) == 2
    cfg.write_text("order = 7\n")
    assert main(["solve", "--config", str(cfg)]) == 2
    cfg.write_text("just text\n")
    assert main(["solve", "--config", str(cfg)]) == 2


def test_params_file(tmp_path):
    p = tmp_path / "p.json"
    a, b = stability.TABLE2[3]
    p.write_text(json.dumps({"a": a, "b": b}))
    code, out = run(tmp_path, "stability", "--order", "3", "--params", "file", "--params-file", str(p))
    assert code == 0
    ref = stability.evaluate(3, a, b)
    assert json.loads((out / "stability.json").read_text())["BN_degrees"] == ref.BN_degrees
    p.write_text("{}")
    assert main(["stability", "--params", "file", "--params-file", str(p), "--out", str(tmp_path / "x")]) == 2


def test_optimize_deterministic(tmp_path):
    args = ["stability", "--order", "2", "--params", "optimize", "--budget", "40", "--seed", "5",
            "--samples", "20"]
    c1, o1 = run(tmp_path, *args, name="a")
    c2, o2 = run(tmp_path, *args, name="b")
    assert c1 == c2 == 0
    assert (o1 / "stability.json").read_text() == (o2 / "stability.json").read_text()


def test_threads_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv("FVE2L_THREADS", "1")
    code, out = run(tmp_path, "convergence", "--n", "2,3,4")
    assert code == 0 and manifest(out)["threads"] == "1"


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fve2l.cli", "stability", "--order", "2", "--params", "table2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    help_text = subprocess.run([sys.executable, "-m", "fve2l.cli", "--help"], capture_output=True,
                               text=True).stdout
    assert "condnum.csv" in help_text and "Exit codes" in help_text
