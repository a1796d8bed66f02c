import csv
import subprocess
import sys

import numpy as np
import pytest

from varexp.cli import EXIT_BELOW, EXIT_CONFIG, EXIT_OK, EXIT_STAGNATION, fmt, main
from varexp.config import ConfigError, parse_config, parse_entries
from varexp.grid import read_grid_dump

SMALL_2D = """\
grid.dim = 2
grid.shape = 9, 9
grid.extents = 1, 1
exponent.family = radial
exponent.lo = 2.0
exponent.hi = 2.5
problem.operator = plaplace
problem.beta = 1.3
problem.gamma = 1.7
problem.lambda = 200
solver.hypothesis_samples = 500
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    lines = path.read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader([ln for ln in lines if not ln.startswith("#")]))
    return comments, rows


# --- config parsing ------------------------------------------------------------------------


def test_parse_defaults_and_lists():
    cfg = parse_config(SMALL_2D)
    assert cfg.grid.shape == (9, 9) and cfg.grid.extents == (1.0, 1.0)
    assert cfg.tol == 1e-8
    assert cfg.problem.lam == 200.0
    assert cfg.solver.hypothesis_samples == 500
    cfg3 = parse_config("grid.dim = 3\ngrid.shape = 5\nexponent.family = constant\nexponent.value = 2.2\n")
    assert cfg3.grid.shape == (5, 5, 5) and cfg3.tol == 1e-6


@pytest.mark.parametrize(
    "text",
    [
        "grid.dim = 2\ngrid.colour = red\n",
        "grid.dim = 2\ngrid.dim = 3\n",
        "grid.dim 2\n",
        "grid.dim = two\n",
        "grid.shape = 5\n",
        "grid.dim = 2\ngrid.shape = 2, 5\n",
        "grid.dim = 2\ngrid.shape = 5.5, 5\n",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_comments_ignored():
    assert parse_entries("# header\n\ngrid.dim = 1  # trailing\n") == {"grid.dim": "1"}


def test_tabulated_file(tmp_path):
    (tmp_path / "p.txt").write_text("# nodal exponents\n" + "\n".join(["2.1"] * 25))
    cfg = parse_config("grid.dim = 2\ngrid.shape = 5, 5\nexponent.family = tabulated\nexponent.file = p.txt\n", tmp_path)
    p = cfg.build_exponent(cfg.build_grid())
    assert np.all(p.node_values == 2.1)
    bad = parse_config("grid.dim = 2\ngrid.shape = 4, 4\nexponent.family = tabulated\nexponent.file = p.txt\n", tmp_path)
    with pytest.raises(ConfigError):
        bad.build_exponent(bad.build_grid())


def test_params_errors_become_config_errors():
    cfg = parse_config(SMALL_2D.replace("problem.beta = 1.3", "problem.beta = 1.8"))
    with pytest.raises(ConfigError):
        cfg.build_params()
    cfg = parse_config(SMALL_2D.replace("problem.operator = plaplace", "problem.operator = biharmonic"))
    with pytest.raises(ConfigError):
        cfg.build_params()


def test_echo_has_compliance():
    lines = parse_config(SMALL_2D).echo_lines()
    assert lines[-1] == "theorem_compliant = false"  # N = 2 needs p+ < 2
    assert "grid.shape = 9, 9" in lines


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(None) == "" and fmt(float("nan")) == "nan" and fmt(3) == "3"


# --- commands ---------------------------------------------------------------------------------


def test_check_operator_plaplace(tmp_path):
    cfg = write(tmp_path, "grid.dim = 2\ngrid.shape = 7, 7\nexponent.family = affine\nexponent.lo = 2\nexponent.hi = 2.5\n")
    assert main(["check-operator", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    comments, rows = read_csv(tmp_path / "o" / "hypotheses.csv")
    assert [r["name"] for r in rows] == ["A1", "A2", "A3", "A4", "A5"]
    assert all(r["verdict"] == "true" for r in rows)
    assert any(c.startswith("# theorem_compliant") for c in comments)


def test_check_operator_mean_curvature_quadratic(tmp_path):
    cfg = write(
        tmp_path,
        "grid.dim = 2\ngrid.shape = 5, 5\nexponent.family = constant\nexponent.value = 2\nproblem.operator = mean_curvature\n",
    )
    assert main(["check-operator", cfg, "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "hypotheses.csv")
    k = float(next(r for r in rows if r["name"] == "A4")["constant_estimate"])
    assert k == pytest.approx(0.125, rel=1e-9)


def test_check_operator_broken_exponent(tmp_path, capsys):
    cfg = write(tmp_path, "grid.dim = 1\ngrid.shape = 5\nexponent.family = tabulated\nexponent.values = 2, 2, 1.0, 2, 2\n")
    assert main(["check-operator", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "exceed 1" in capsys.readouterr().err


def test_solve_two_solutions(tmp_path):
    cfg = write(tmp_path, SMALL_2D)
    out = tmp_path / "o"
    assert main(["solve", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
    comments, rows = read_csv(out / "report.csv")
    assert rows[0]["status"] == "two_solutions"
    assert float(rows[0]["I_u1"]) < 0 < float(rows[0]["I_u2"])
    assert "# theorem_compliant = false" in comments
    g1, u1 = read_grid_dump(out / "u1.grid")
    g2, u2 = read_grid_dump(out / "u2.grid")
    assert g1 == g2 and np.all(u2 <= u1 + 1e-6)
    assert (out / "u2.grid").read_text().startswith("# ")


def test_solve_lambda_zero(tmp_path):
    cfg = write(tmp_path, SMALL_2D.replace("problem.lambda = 200", "problem.lambda = 0"))
    assert main(["solve", cfg, "--out", str(tmp_path), "--quiet"]) == EXIT_BELOW
    _, rows = read_csv(tmp_path / "report.csv")
    assert rows[0]["status"] == "below_threshold" and rows[0]["I_u2"] == "nan"
    assert not (tmp_path / "u2.grid").exists()


def test_solve_max_iter_one(tmp_path):
    cfg = write(tmp_path, SMALL_2D + "solver.max_iter = 1\n")
    assert main(["solve", cfg, "--out", str(tmp_path), "--quiet"]) == EXIT_STAGNATION


def test_solve_needs_single_lambda(tmp_path):
    text = SMALL_2D.replace("problem.lambda = 200", "problem.lambda_grid = 100, 200")
    assert main(["solve", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG


def test_cli_overrides_echoed(tmp_path):
    cfg = write(tmp_path, SMALL_2D)
    assert main(["solve", cfg, "--out", str(tmp_path), "--quiet", "--seed", "18446744073709551615", "--tol", "1e-7"]) == EXIT_OK
    comments, _ = read_csv(tmp_path / "report.csv")
    assert "# solver.seed = 18446744073709551615" in comments and "# solver.tol = 1e-07" in comments


def test_bad_flags():
    assert main(["solve"]) == EXIT_CONFIG
    assert main(["solve", "x.cfg", "--seed", "-1"]) == EXIT_CONFIG
    assert main(["solve", "/no/such/file.cfg"]) == EXIT_CONFIG


def test_scan(tmp_path):
    text = SMALL_2D.replace("problem.lambda = 200", "problem.lambda_grid = 0, 25, 50, 100, 200, 400")
    assert main(["scan", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    comments, rows = read_csv(tmp_path / "scan.csv")
    footer = rows[-1]
    assert footer["lambda"] == "lambda_star_bracket"
    lo, hi = float(footer["status"]), float(footer["I_u1"])
    body = rows[:-1]
    assert [float(r["lambda"]) for r in body] == [0, 25, 50, 100, 200, 400]
    assert all(float(r["I_u1"]) < 0 for r in body if float(r["lambda"]) >= hi)
    assert lo < hi
    assert "# concavity_violations = 0" in comments


def test_scan_all_zero_rejected(tmp_path):
    text = SMALL_2D.replace("problem.lambda = 200", "problem.lambda_grid = 0, 0")
    assert main(["scan", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG
    text = SMALL_2D.replace("problem.lambda = 200", "problem.lambda_grid = 0")
    assert main(["scan", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG


def test_scan_single_lambda_is_solve(tmp_path):
    text = SMALL_2D.replace("problem.lambda = 200", "problem.lambda_grid = 200")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["scan", write(tmp_path, text), "--out", str(a), "--quiet"]) == EXIT_OK
    assert main(["solve", write(tmp_path, SMALL_2D, "s.cfg"), "--out", str(b), "--quiet"]) == EXIT_OK
    _, ra = read_csv(a / "report.csv")
    _, rb = read_csv(b / "report.csv")
    assert ra == rb
    assert (a / "u2.grid").read_text().split("# lambda")[1] == (b / "u2.grid").read_text().split("# lambda")[1]
    _, scan_rows = read_csv(a / "scan.csv")
    assert scan_rows[-1]["lambda"] == "lambda_star_bracket"


def test_reports_bit_identical(tmp_path):
    cfg = write(tmp_path, SMALL_2D)
    for d in ("a", "b"):
        assert main(["solve", cfg, "--out", str(tmp_path / d), "--quiet"]) == EXIT_OK
    for name in ("report.csv", "u1.grid", "u2.grid"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split()[0] for ln in lines] == ["varexp", "gradients", "operators", "truncation", "solver"]
    assert all(ln.split()[1] == "PASS" for ln in lines)


def test_selftest_fault_hook(monkeypatch, capsys):
    monkeypatch.setenv("VAREXP_SELFTEST_FAULT", "sign")
    assert main(["selftest"]) != EXIT_OK
    out = capsys.readouterr().out
    assert "gradients    FAIL" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "varexp", "selftest", "--quiet"], capture_output=True, text=True, timeout=120)
    assert res.returncode == 0 and res.stdout == ""


def test_scan_independent_of_workers(tmp_path, monkeypatch):
    text = """\
grid.dim = 1
grid.shape = 33
exponent.family = affine
exponent.lo = 2.0
exponent.hi = 2.4
problem.beta = 1.3
problem.gamma = 1.7
problem.lambda_grid = 0, 60, 120
solver.hypothesis_samples = 200
"""
    cfg = write(tmp_path, text)
    for n in ("1", "2"):
        monkeypatch.setenv("VAREXP_THREADS", n)
        assert main(["scan", cfg, "--out", str(tmp_path / n), "--quiet"]) == EXIT_OK
    assert (tmp_path / "1" / "scan.csv").read_bytes() == (tmp_path / "2" / "scan.csv").read_bytes()
