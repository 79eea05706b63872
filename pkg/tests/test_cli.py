import json

import numpy as np
import pytest

from hessvar import fixtures, gridio, grids
from hessvar.cli import run
from hessvar.config import ConfigError, parse_config


def write_config(path, text):
    path.write_text(text)
    return str(path)


BASE_SOLVE = """
[model]
kind = quadratic

[grid]
dim = 2
nodes = 33
half_width = 0.5

[boundary]
kind = cubic_biharmonic
amplitude = 1.0

[solver]
init = zero

[run]
seed = 3
"""

DIAG_TAIL = """
[diagnostics]
ball_stride = 8
r_max = 0.2
r_min = 0.05
p = 2.0
alpha = 0.5
tau_sigma = 0.5
pair_budget = 600
"""


def test_parse_config_defaults_and_values(tmp_path):
    cfg = parse_config(write_config(tmp_path / "c.cfg", BASE_SOLVE))
    assert cfg.model_kind == "quadratic"
    assert cfg.nodes == 33
    assert cfg.seed == 3
    assert cfg.osc_p == 2.0  # default


def test_parse_config_reports_line_numbers(tmp_path):
    bad = "[model\nkind = quadratic\n"
    with pytest.raises(ConfigError) as err:
        parse_config(write_config(tmp_path / "bad.cfg", bad))
    assert "line 1" in str(err.value)


def test_parse_config_validates_ranges(tmp_path):
    bad = "[model]\nkind = area\neta = 1.5\n"
    with pytest.raises(ConfigError):
        parse_config(write_config(tmp_path / "bad.cfg", bad))


def test_parse_config_missing_file_reference(tmp_path):
    bad = "[boundary]\nkind = file\nfile = nope.hvgf\n"
    with pytest.raises(ConfigError):
        parse_config(write_config(tmp_path / "bad.cfg", bad))


def test_solve_end_to_end(tmp_path):
    cfg = write_config(tmp_path / "solve.cfg",
                       BASE_SOLVE.replace("nodes = 33", "nodes = 65"))
    out = tmp_path / "out"
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "solve_report.json").read_text())
    assert report["schema"] == 1
    assert report["grad_norm"] <= report["solver"]["grad_tol"]
    assert report["config"]["seed"] == 3
    u = gridio.read_grid(out / "solution.hvgf")
    g = grids.make_grid(2, 65, 0.5)
    exact = grids.sample(g, fixtures.potential("cubic_biharmonic"))
    assert np.abs(u.values - exact.values).max() < 1e-8


def test_table_model_config(tmp_path):
    from hessvar import models
    from hessvar.cli import build_model

    table = tmp_path / "quad_table.csv"
    models.write_table_model(table, models.quadratic_model(2),
                             lo=-2.0, hi=2.0, count=9)
    text = BASE_SOLVE.replace("kind = quadratic",
                              "kind = table\ntable = quad_table.csv")
    cfg = parse_config(write_config(tmp_path / "t.cfg", text))
    model = build_model(cfg, base=str(tmp_path))
    M = np.diag([0.5, -1.0])  # lattice point: interpolation is exact there
    assert models.eval_F(model, M) == pytest.approx(
        models.eval_F(models.quadratic_model(2), M), rel=1e-12)


def test_table_model_missing_file_is_config_error(tmp_path):
    text = BASE_SOLVE.replace("kind = quadratic",
                              "kind = table\ntable = missing.csv")
    with pytest.raises(ConfigError):
        parse_config(write_config(tmp_path / "t.cfg", text))


def test_solve_malformed_config_exits_64(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.cfg", "[model\nkind = quadratic\n")
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 64
    assert "line" in capsys.readouterr().err


def test_solve_usage_error_exits_64(tmp_path):
    assert run(["solve", "--out", str(tmp_path)]) == 64


def test_solve_inadmissible_boundary_exits_65(tmp_path, capsys):
    text = BASE_SOLVE.replace("kind = quadratic", "kind = area\neta = 0.5")
    text = text.replace("amplitude = 1.0", "amplitude = 3.0")
    text = text.replace("init = zero", "init = boundary")
    cfg = write_config(tmp_path / "area.cfg", text)
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 65
    assert "node" in capsys.readouterr().err


def test_solve_max_iter_flag_exit_2(tmp_path):
    text = BASE_SOLVE.replace("init = zero", "init = zero\nmax_iter = 0")
    cfg = write_config(tmp_path / "cap.cfg", text)
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_diagnose_constant_field(tmp_path):
    g = grids.make_grid(2, 65, 0.5)
    field = grids.SymMatField(
        h=g.h, origin=g.origin,
        values=np.broadcast_to(np.array([1.0, 0.0, 1.0]),
                               g.extents + (3,)).copy())
    fpath = tmp_path / "const.hvgf"
    gridio.write_binary(fpath, field)
    cfg = write_config(tmp_path / "d.cfg", BASE_SOLVE + DIAG_TAIL)
    out = tmp_path / "diag"
    assert run(["diagnose", "--config", cfg, "--field", str(fpath),
                "--out", str(out)]) == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert rep["bmo"]["omega"] == 0.0
    assert rep["bmo"]["small_bmo_regime"] is True
    assert rep["jn"]["degenerate"] is True
    assert rep["sigma"]["flagged"] == 0
    mask, h = gridio.read_binary(out / "sigma_mask.hvgf")
    assert mask.sum() == 0


def test_diagnose_on_solver_output_flags_small_bmo(tmp_path):
    # end-to-end: solve with smooth clamped data, diagnose the Hessian of
    # the solution; the measured modulus sits below the configured cutoff
    cfg = write_config(tmp_path / "s.cfg",
                       BASE_SOLVE.replace("nodes = 33", "nodes = 65")
                       + DIAG_TAIL + "omega_threshold = 0.5\n")
    out = tmp_path / "solve"
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 0
    u = gridio.read_grid(out / "solution.hvgf")
    field = grids.hessian_field(u)
    fpath = tmp_path / "hess.hvgf"
    gridio.write_binary(fpath, field)
    dout = tmp_path / "diag"
    assert run(["diagnose", "--config", cfg, "--field", str(fpath),
                "--out", str(dout)]) == 0
    rep = json.loads((dout / "diagnostics.json").read_text())
    assert rep["bmo"]["omega"] < 0.5
    assert rep["bmo"]["small_bmo_regime"] is True
    assert rep["holder"]["seminorm"] > 0.0


def test_diagnose_requires_tau_sigma(tmp_path):
    g = grids.make_grid(2, 33, 0.5)
    field = grids.hessian_field(grids.sample(g, lambda x, y: x**2))
    fpath = tmp_path / "f.hvgf"
    gridio.write_binary(fpath, field)
    cfg = write_config(tmp_path / "d.cfg", BASE_SOLVE)  # no diagnostics section
    assert run(["diagnose", "--config", cfg, "--field", str(fpath),
                "--out", str(tmp_path / "o")]) == 64


def test_diagnose_jump_field_mask_and_dimension(tmp_path):
    g = grids.make_grid(2, 65, 0.5)
    field = fixtures.hyperplane_jump_field(g, np.eye(2))
    fpath = tmp_path / "jump.hvgf"
    gridio.write_binary(fpath, field)
    tail = DIAG_TAIL.replace("tau_sigma = 0.5",
                             f"tau_sigma = {0.5 * np.pi * 2 ** 1.25}\nsigma_p0 = 2.5")
    cfg = write_config(tmp_path / "d.cfg", BASE_SOLVE + tail)
    out = tmp_path / "diag"
    assert run(["diagnose", "--config", cfg, "--field", str(fpath),
                "--out", str(out)]) == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert rep["sigma"]["flagged"] > 0
    assert abs(rep["sigma"]["box_dim"] - 1.0) <= 0.3


def test_diagnose_missing_field_exits_65(tmp_path):
    cfg = write_config(tmp_path / "d.cfg", BASE_SOLVE + DIAG_TAIL)
    assert run(["diagnose", "--config", cfg, "--field",
                str(tmp_path / "absent.hvgf"), "--out", str(tmp_path / "o")]) == 65


def test_hamstat_special_lagrangian_fixture(tmp_path):
    text = """
[model]
kind = area
eta = 0.1

[grid]
dim = 2
nodes = 33
half_width = 0.5

[boundary]
kind = cubic_harmonic
amplitude = 0.2

[hamstat]
samples = 400
bump_scale = 0.25

[run]
seed = 11
"""
    cfg = write_config(tmp_path / "h.cfg", text)
    out = tmp_path / "hs"
    assert run(["hamstat", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "hamstat_report.json").read_text())
    assert rep["phase"]["sup_abs"] <= 1e-12
    assert rep["certificate"]["C_eta"] == pytest.approx(0.0580, abs=5e-4)
    assert rep["certificate"]["diagonal_check"] == "pass"
    assert rep["residuals"]["variational_sup"] <= 1e-10
    phase = gridio.read_grid(out / "phase.hvgf")
    assert phase.extents == (33, 33)
    metric = gridio.read_field(out / "metric.hvgf")
    # metric entries g = I + M^2 have unit diagonal where the Hessian is zero
    center = metric.values[16, 16]
    assert center[0] >= 1.0 and center[2] >= 1.0


def test_hamstat_3d_smoke(tmp_path):
    text = """
[model]
kind = area
eta = 0.25

[grid]
dim = 3
nodes = 13
half_width = 0.5

[boundary]
kind = quadratic_iso
amplitude = 0.2

[hamstat]
samples = 200
bump_scale = 0.2

[run]
seed = 4
"""
    cfg = write_config(tmp_path / "h3.cfg", text)
    out = tmp_path / "hs3"
    assert run(["hamstat", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "hamstat_report.json").read_text())
    # constant Hessian: constant phase, zero residuals
    assert rep["residuals"]["variational_sup"] <= 1e-12
    assert rep["residuals"]["harmonicity"]["sup"] <= 1e-10
    assert rep["certificate"]["diagonal_check"] == "pass"


def test_hamstat_invalid_eta_exits_64(tmp_path):
    text = "[model]\nkind = area\neta = 0.1\n[run]\nseed = 0\n"
    bad = text.replace("eta = 0.1", "eta = 1.2")
    cfg = write_config(tmp_path / "h.cfg", bad)
    assert run(["hamstat", "--config", cfg, "--out", str(tmp_path / "o")]) == 64


def test_campanato_command(tmp_path):
    g = grids.make_grid(2, 129, 0.5)
    X = g.coords()[0]
    field = grids.SymMatField(
        h=g.h, origin=g.origin,
        values=X[..., None] * np.array([1.0, 0.0, -1.0]))
    fpath = tmp_path / "lin.hvgf"
    gridio.write_binary(fpath, field)
    cfg = write_config(tmp_path / "c.cfg", BASE_SOLVE + DIAG_TAIL)
    out = tmp_path / "camp"
    assert run(["campanato", "--config", cfg, "--field", str(fpath),
                "--out", str(out)]) == 0
    rep = json.loads((out / "campanato.json").read_text())
    assert rep["fit"]["slope"] == pytest.approx(4.0, abs=0.1)
    lines = (out / "campanato.csv").read_text().strip().splitlines()
    assert lines[0] == "rho,oscillation,integral"
    assert len(lines) == 1 + len(rep["curve"]["radii"])


def test_report_merge(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text('{"schema": 1, "x": 1}\n')
    b.write_text('{"schema": 1, "y": [1.5, null]}\n')
    out = tmp_path / "merged.json"
    assert run(["report-merge", str(a), str(b), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["reports"]["a"]["x"] == 1
    assert rep["reports"]["b"]["y"] == [1.5, None]


def test_report_merge_bad_json_exits_65(tmp_path):
    a = tmp_path / "a.json"
    a.write_text("not json")
    assert run(["report-merge", str(a), "--out", str(tmp_path / "m.json")]) == 65


def test_determinism_byte_identical_reports(tmp_path):
    g = grids.make_grid(2, 65, 0.5)
    field = grids.hessian_field(grids.sample(
        g, fixtures.potential("cubic_biharmonic", 0.5)))
    fpath = tmp_path / "f.hvgf"
    gridio.write_binary(fpath, field)
    cfg = write_config(tmp_path / "d.cfg", BASE_SOLVE + DIAG_TAIL)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run(["diagnose", "--config", cfg, "--field", str(fpath),
                    "--out", str(out), "--seed", "17"]) == 0
        outs.append((out / "diagnostics.json").read_bytes())
    assert outs[0] == outs[1]

    souts = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        assert run(["solve", "--config", cfg, "--out", str(out)]) == 0
        souts.append((out / "solve_report.json").read_bytes())
    assert souts[0] == souts[1]


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("HESSVAR_THREADS", "2")
    cfg = write_config(tmp_path / "s.cfg", BASE_SOLVE)
    out = tmp_path / "out"
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["config"]["threads"] == 2
