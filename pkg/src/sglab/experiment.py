"""The scaling experiment: initial data, PDE runs, projections and slope fits."""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .config import ExperimentConfig
from .decomp import project
from .kink import SolitonParams
from .lyapunov import evaluate as lyapunov_evaluate
from .manifold import (ManifoldExpansion, VirtualManifold, build_manifold, pde_defect, residual_Rn,
                       sech_profile)
from .modulation import ParamSeries, centered_rates, parameter_error
from .numerics import FieldPair, h1_norm_sq, integrate, make_grid, symplectic_form
from .pde import SimState, functionals, make_state, simulate

log = logging.getLogger(__name__)

CSV_VERSION = "sglab-scaling/1"
TRAJ_VERSION = "sglab-trajectory/1"
TRAJ_COLUMNS = ["t", "xi", "u", "v_h1", "w_l2", "N1", "N2", "L_eps", "H", "Pi", "H_eps"]


def fit_slope(pairs):
    """Least-squares slope of log(value) against log(eps), with r^2."""
    pairs = list(pairs)
    if len(pairs) < 4:
        raise ValueError("need at least four points")
    e = np.array([p[0] for p in pairs], float)
    v = np.array([p[1] for p in pairs], float)
    if np.any(e <= 0) or np.any(v <= 0):
        raise ValueError("values must be positive")
    x, y = np.log(e), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = np.sum((y - (slope * x + icpt)) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


def forcing_profile(cfg: ExperimentConfig, g):
    name = cfg["forcing.profile"]
    if name == "sech":
        return sech_profile(g, cfg["forcing.amplitude"], cfg["forcing.center"], cfg["forcing.width"])
    if name == "zero":
        return np.zeros(g.n_points)
    raise ValueError(f"unknown forcing profile {name!r}")


def grid_of(cfg: ExperimentConfig):
    return make_grid(cfg["grid.half_width"], int(cfg["grid.n_points"]))


def build_from_config(cfg: ExperimentConfig, n: int | None = None, k: int | None = None) -> ManifoldExpansion:
    g = grid_of(cfg)
    return build_manifold(cfg.n if n is None else n, cfg.k if k is None else k, forcing_profile(cfg, g), g,
                          xi_s=cfg["experiment.xi_s"], n_xi=int(cfg["manifold.n_xi"]),
                          n_u=int(cfg["manifold.n_u"]), dxi_target=cfg["manifold.dxi"])


def seed_fields(cfg: ExperimentConfig, g):
    c, wd = cfg["seed.center"], cfg["seed.width"]
    v = np.exp(-((g.x - c) / wd) ** 2)
    w = cfg["seed.w_ratio"] * np.exp(-((g.x + c) / wd) ** 2)
    return v, w


def h1l2_sq(v, w, g):
    return float(h1_norm_sq(v, g) + integrate(w ** 2, g))


def symplectic_complement(v, w, p: SolitonParams, view: VirtualManifold):
    """Remove the tangent components of (v, w) so that both N_i vanish."""
    g = view.grid
    pt = view.point(p)
    V = FieldPair(v, w)
    t = (pt.t1, pt.t2)
    Om = np.array([[symplectic_form(a, b, g) for b in t] for a in t])
    c = np.linalg.solve(Om, [symplectic_form(a, V, g) for a in t])
    return V - pt.t1 * c[0] - pt.t2 * c[1]


def prepare_initial_state(cfg: ExperimentConfig, eps: float, exp: ManifoldExpansion | None,
                          view: VirtualManifold | None = None) -> SimState:
    g = grid_of(cfg) if exp is None else exp.x_grid
    view = VirtualManifold(exp, eps, g) if view is None else view
    p = SolitonParams(cfg["experiment.xi_s"], cfg.u_s(eps))
    st = view.state(p)
    frac = cfg["seed.fraction"]
    if frac > 0:
        v, w = seed_fields(cfg, g)
        V = symplectic_complement(v, w, p, view)
        V = V * np.sqrt(frac * eps ** (2 * cfg.n) / h1l2_sq(V.theta, V.psi, g))
        st = st + V
    return make_state(st.theta, st.psi, g, view.force(), eps)


@dataclass
class ScalingRow:
    eps: float
    sup_norm: float
    R_l2: float
    defect_l2: float
    lam_abs: float
    xi_err: float
    u_err: float
    dL_int: float
    T: float
    runtime: float
    status: str = "ok"


def observe_run(cfg: ExperimentConfig, eps: float, exp, view=None):
    """Simulate to T(eps), projecting at the observer stride.  Returns trajectory rows and decompositions."""
    g = exp.x_grid if exp is not None else grid_of(cfg)
    view = VirtualManifold(exp, eps, g) if view is None else view
    s0 = prepare_initial_state(cfg, eps, exp, view)
    dt = cfg["sim.dt_factor"] * g.spacing
    stride = max(1, int(round(cfg["sim.observe_every"] / dt)))
    n_obs = int(np.ceil(cfg.T(eps) / (stride * dt)))
    T = n_obs * stride * dt
    guess = [SolitonParams(cfg["experiment.xi_s"], cfg.u_s(eps))]
    decs, rows = [], []
    tol = cfg["decomp.tol"]

    def obs(s):
        r = project(s.fields.theta, s.fields.psi, guess[0], view, tol=tol)
        guess[0] = r.params
        decs.append(r)
        H, Pi, He = functionals(s)
        L = lyapunov_evaluate(r.v, r.w, r.params, view).L_eps
        rows.append([s.t, r.xi, r.u, float(np.sqrt(h1_norm_sq(r.v, g))),
                     float(np.sqrt(integrate(r.w ** 2, g))), r.residual[0], r.residual[1], L, H, Pi, He])
        return {}

    tr = simulate(s0, T, dt, [obs], stride=stride, margin=cfg["sim.margin"])
    return np.array(tr.times), rows, decs


def study_row(cfg: ExperimentConfig, eps: float, exp: ManifoldExpansion) -> tuple:
    t0 = time.perf_counter()
    g = exp.x_grid
    view = VirtualManifold(exp, eps)
    times, rows, decs = observe_run(cfg, eps, exp, view)
    sup = max(r[3] ** 2 + r[4] ** 2 for r in rows)
    p0 = SolitonParams(cfg["experiment.xi_s"], cfg.u_s(eps))
    R = residual_Rn(exp, eps, p0, g, view.patch)
    D = pde_defect(exp, eps, p0, g, view.patch)
    lam = abs(view.lam(p0.xi, p0.u))
    series = ParamSeries(times, [d.xi for d in decs], [d.u for d in decs])
    xe, ue = parameter_error(series, view, eps, cfg.n, cfg.k)
    L = np.array([r[7] for r in rows])
    dL = np.abs(centered_rates(times, L))
    dL_int = float(np.sum(dL) * (times[1] - times[0]))
    row = ScalingRow(eps, sup, float(np.hypot(*R.R_l2)), D, lam, xe, ue, dL_int, float(times[-1]),
                     time.perf_counter() - t0)
    return row, rows


_SHARED = {}


def _worker(args):
    cfg, eps = args
    try:
        return study_row(cfg, eps, _SHARED["exp"])
    except Exception as e:  # recorded, the study continues
        log.error("eps = %g failed: %s", eps, e)
        nan = float("nan")
        return ScalingRow(eps, nan, nan, nan, nan, nan, nan, nan, nan, nan, f"failed: {e}"), []


def run_scaling_study(cfg: ExperimentConfig, exp: ManifoldExpansion | None = None, threads: int = 1):
    """All eps-rows in deterministic order.  Returns (rows, trajectories)."""
    exp = build_from_config(cfg) if exp is None else exp
    _SHARED["exp"] = exp
    jobs = [(cfg, e) for e in cfg.eps_list]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_worker, jobs))
    else:
        out = [_worker(j) for j in jobs]
    rows = [o[0] for o in out]
    trajs = {r.eps: o[1] for r, o in zip(rows, out)}
    return rows, trajs


def slopes(rows):
    ok = [r for r in rows if r.status == "ok"]
    out = {}
    for name in ("sup_norm", "R_l2", "defect_l2", "lam_abs", "xi_err", "u_err", "dL_int"):
        pts = [(r.eps, getattr(r, name)) for r in ok]
        try:
            out[name] = fit_slope(pts)
        except ValueError:
            out[name] = (float("nan"), float("nan"))
    return out


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION}\n")
    # runtime is the only non-deterministic field and stays out of the file
    names = [f for f in ScalingRow.__dataclass_fields__ if f != "runtime"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[n]) for n in names])
    return buf.getvalue()


def trajectory_to_csv(traj_rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {TRAJ_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_COLUMNS)
    for r in traj_rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def gnuplot_script(csv_name: str, columns=("sup_norm", "R_l2", "lam_abs")) -> str:
    names = [f for f in ScalingRow.__dataclass_fields__ if f != "runtime"]
    lines = ["set datafile separator ','", "set logscale xy", "set key left top",
             "set xlabel 'eps'", "set terminal pngcairo size 900,600",
             f"set output '{csv_name.rsplit('.', 1)[0]}.png'"]
    plots = [f"'{csv_name}' every ::1 using 1:{names.index(c) + 1} with linespoints title '{c}'" for c in columns]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
