import json

import numpy as np
import pytest

from sglab import cli
from sglab.config import DEFAULTS, ConfigError, ExperimentConfig, load_config, parse_config
from sglab.decomp import orthogonality_residual
from sglab.experiment import (CSV_VERSION, TRAJ_COLUMNS, fit_slope, gnuplot_script, h1l2_sq, observe_run,
                              prepare_initial_state, rows_to_csv, run_scaling_study, slopes, trajectory_to_csv)
from sglab.kink import SolitonParams
from sglab.manifold import VirtualManifold

EPS = np.array([0.1, 0.07, 0.05, 0.035, 0.025])


def test_fit_slope_examples():
    s, r2 = fit_slope(zip(EPS, EPS ** 2))
    assert s == pytest.approx(2.0, abs=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)
    assert fit_slope(zip(EPS, np.full(5, 3.0)))[0] == pytest.approx(0.0, abs=1e-12)
    s, _ = fit_slope(zip(EPS, EPS ** 2 * (1 + 0.1 * np.sin(np.log(EPS)))))
    assert abs(s - 2.0) < 0.15
    with pytest.raises(ValueError):
        fit_slope(zip(EPS[:3], EPS[:3]))
    with pytest.raises(ValueError):
        fit_slope(zip(EPS, -EPS))


def test_parse_config():
    text = "# comment\nexperiment.n = 2\nexperiment.k = 1  # trailing\nexperiment.eps_list = 0.2, 0.1, 0.05, 0.02\n"
    v = parse_config(text)
    assert v == {"experiment.n": 2, "experiment.k": 1, "experiment.eps_list": [0.2, 0.1, 0.05, 0.02]}
    cfg = ExperimentConfig(v)
    assert cfg.n == 2 and cfg.k == 1 and cfg["grid.n_points"] == DEFAULTS["grid.n_points"]
    with pytest.raises(ConfigError):
        parse_config("grid.npoints = 10\n")
    with pytest.raises(ConfigError):
        parse_config("grid.n_points 10\n")
    with pytest.raises(ConfigError):
        parse_config("grid.n_points = ten\n")


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig().with_updates(experiment__xi_s=0.3, grid__n_points=2048)
    p = tmp_path / "c.cfg"
    p.write_text(cfg.dumps())
    assert load_config(p).values == cfg.values
    assert load_config(None).values == DEFAULTS


@pytest.mark.parametrize("upd", [
    {"experiment.k": 1},
    {"experiment.eps_list": [0.05, 0.1, 0.2, 0.3]},
    {"experiment.u_s_hat": 2.0},
    {"experiment.T_factor": 2.0},
    {"seed.fraction": 1.5},
    {"sim.dt_factor": 0.6},
])
def test_config_validation(upd):
    with pytest.raises(ConfigError):
        ExperimentConfig(upd)


def test_time_and_speed_scaling():
    cfg = ExperimentConfig()
    assert cfg.T(0.04) == pytest.approx(0.85 / 0.2)
    assert cfg.u_s(0.04) == pytest.approx(0.18 * 0.2)


def test_initial_state_unseeded(ctx, exp10):
    cfg = ctx.cfg.with_updates(seed__fraction=0.0)
    view = VirtualManifold(exp10, 0.05)
    s = prepare_initial_state(cfg, 0.05, exp10, view)
    p = SolitonParams(cfg["experiment.xi_s"], cfg.u_s(0.05))
    assert np.all(orthogonality_residual(s.fields.theta, s.fields.psi, p, view) == 0.0)


def test_initial_state_seeded(ctx, exp10):
    cfg = ctx.cfg
    for eps in (0.1, 0.025):
        view = VirtualManifold(exp10, eps)
        s = prepare_initial_state(cfg, eps, exp10, view)
        p = SolitonParams(cfg["experiment.xi_s"], cfg.u_s(eps))
        N = orthogonality_residual(s.fields.theta, s.fields.psi, p, view)
        assert np.max(np.abs(N)) < 1e-10
        on = view.state(p)
        g = exp10.x_grid
        assert h1l2_sq(s.fields.theta - on.theta, s.fields.psi - on.psi, g) <= eps ** 2 * (1 + 1e-12)


def test_unforced_unseeded_run_is_quiet(grid):
    cfg = ExperimentConfig().with_updates(seed__fraction=0.0, forcing__profile="zero", experiment__T_factor=0.3)
    _, rows, _ = observe_run(cfg, 0.1, None, VirtualManifold(None, 0.1, grid))
    assert max(r[3] ** 2 + r[4] ** 2 for r in rows) < 1e-12


@pytest.fixture(scope="module")
def short_study(ctx, exp10):
    cfg = ctx.cfg.with_updates(experiment__eps_list=[0.1, 0.08], experiment__T_factor=0.15)
    return cfg, run_scaling_study(cfg, exp10)


def test_study_csv_deterministic(short_study, exp10):
    cfg, (rows, trajs) = short_study
    assert all(r.status == "ok" for r in rows)
    again, _ = run_scaling_study(cfg, exp10, threads=2)
    assert rows_to_csv(rows) == rows_to_csv(again)
    text = rows_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == f"# {CSV_VERSION}"
    assert lines[1].split(",")[0] == "eps" and "runtime" not in lines[1]
    assert len(lines) == 2 + len(rows)


def test_trajectory_csv(short_study):
    _, (rows, trajs) = short_study
    text = trajectory_to_csv(trajs[0.1])
    head = text.splitlines()[1].split(",")
    assert head == TRAJ_COLUMNS
    assert "scaling.csv" in gnuplot_script("scaling.csv")


def test_failed_rows_are_recorded(ctx, exp10, monkeypatch):
    from sglab import experiment

    def boom(cfg, eps, exp):
        raise RuntimeError("left the strip")

    monkeypatch.setattr(experiment, "study_row", boom)
    cfg = ctx.cfg.with_updates(experiment__eps_list=[0.1, 0.05])
    rows, trajs = run_scaling_study(cfg, exp10)
    assert [r.status for r in rows] == ["failed: left the strip"] * 2
    assert trajs == {0.1: [], 0.05: []}
    assert np.isnan(slopes(rows)["sup_norm"][0])
    assert "failed: left the strip" in rows_to_csv(rows)


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope = 1\n")
    assert cli.main(["spectrum", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_spectrum(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("grid.n_points = 1024\nmanifold.n_xi = 16\n")
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(tmp_path), "--u", "0", "--count", "2"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("u = 0:") and "u_star estimate" in out


def test_cli_build_and_simulate(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("grid.n_points = 512\ngrid.half_width = 30\nmanifold.n_xi = 32\nmanifold.n_u = 5\n"
                   "manifold.dxi = 0.35\nexperiment.T_factor = 0.1\n")
    out = tmp_path / "o"
    assert cli.main(["build-manifold", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["n"] == 1 and man["parameters"]["grid.n_points"] == 512
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--manifold", str(out),
                     "--eps", "0.1"]) == 0
    assert (out / "trajectory_eps0.1.csv").read_text().startswith("# sglab-trajectory/1")
    assert cli.main(["ode-compare", "--config", str(cfg), "--out", str(out), "--manifold", str(out)]) == 0
    assert "RK4 step-halving ratio" in capsys.readouterr().out


COARSE = "grid.n_points = 256\ngrid.half_width = 40\n"


def test_cli_validate_coarse(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(COARSE)
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        rc = cli.main(["validate", "--config", str(cfg), "--out", str(out)])
        reports.append((out / "validate.txt").read_bytes())
        summary = json.loads((out / "validate.json").read_text())
    assert rc == 1  # the coarse grid is too crude for every criterion to hold
    assert reports[0] == reports[1]
    lines = reports[0].decode().splitlines()
    assert len(lines) == 13 and all(l.startswith(("[PASS]", "[FAIL]")) for l in lines)
    assert set(summary) == {str(i) for i in range(1, 14)}
    assert any(not v["passed"] for v in summary.values())
    assert (tmp_path / "a" / "validate_timing.txt").read_text().count("criterion") == 13
    assert capsys.readouterr().out.count("criterion") == 26
