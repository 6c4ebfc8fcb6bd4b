"""The thirteen acceptance checks, shared by the test-suite and ``lab validate``."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .decomp import overlap_coefficients
from .experiment import build_from_config, fit_slope, forcing_profile, grid_of, run_scaling_study, slopes
from .kink import SolitonParams, kink_profile, lorentz_gamma, soliton_mass, soliton_pair
from .linop import FrakMSolver, build_L, comoving_grid2d, eigen_spectrum, solve_frakM_direct
from .lyapunov import coercivity_constant, evaluate, kernel_direction
from .manifold import VirtualManifold, build_manifold, lambda_n, pde_defect, residual_Rn
from .modulation import (gronwall_compare, integrate_rescaled, lipschitz_constant,
                         rescaled_acceleration)
from .numerics import integrate, make_grid
from .pde import functionals, make_state, simulate

log = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    elapsed: float = 0.0
    budget: float = float("nan")

    def line(self, timing: bool = True) -> str:
        flag = "PASS" if self.passed else "FAIL"
        head = f"[{flag}] criterion {self.number:2d}: {self.title} | {self.measured}"
        if not timing:
            return head
        t = f"{self.elapsed:.1f}s" + (f" (budget {self.budget:.0f}s)" if np.isfinite(self.budget) else "")
        return f"{head} | {t}"


@dataclass
class Context:
    """Caches expensive shared objects (manifolds, the scaling study) between checks."""
    cfg: ExperimentConfig = field(default_factory=ExperimentConfig)
    _manifolds: dict = field(default_factory=dict)
    _build_time: dict = field(default_factory=dict)
    _study: tuple | None = None
    trajectories: dict = field(default_factory=dict)

    def manifold(self, n: int, k: int):
        key = (n, k)
        if key not in self._manifolds:
            t = time.perf_counter()
            self._manifolds[key] = build_from_config(self.cfg, n, k)
            self._build_time[key] = time.perf_counter() - t
        return self._manifolds[key]

    def build_time(self, n, k) -> float:
        return self._build_time.get((n, k), 0.0)

    def study(self):
        if self._study is None:
            exp = self.manifold(self.cfg.n, self.cfg.k)
            rows, trajs = run_scaling_study(self.cfg, exp)
            self._study = (rows, slopes(rows))
            self.trajectories = trajs
        return self._study


def _timed(fn):
    def wrapper(*a, **kw):
        t = time.perf_counter()
        res = fn(*a, **kw)
        res.elapsed = time.perf_counter() - t
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def kernel_eigenpair(ctx: Context, half_width: float = 40.0, n_points: int = 4096) -> CriterionResult:
    g = make_grid(half_width, n_points)
    vals, vecs = eigen_spectrum(build_L(SolitonParams(0.0, 0.0), g), 1, return_vectors=True)
    v = vecs[:, 0]
    s = 1.0 / np.cosh(g.x)
    cs = abs(integrate(v * s, g)) / np.sqrt(integrate(v * v, g) * integrate(s * s, g))
    ok = abs(vals[0]) < 1e-6 and cs > 1 - 1e-8
    return CriterionResult(1, "kernel eigenpair", bool(ok),
                           f"lambda0 = {vals[0]:.3e}, 1 - cos = {abs(1 - cs):.3e} (grid {n_points})", budget=5)


@_timed
def continuum_edge(ctx: Context, widths=(20.0, 40.0, 80.0), spacing: float = 80.0 / 4095) -> CriterionResult:
    second = []
    for hw in widths:
        n = int(round(2 * hw / spacing)) + 1
        second.append(eigen_spectrum(build_L(SolitonParams(0.0, 0.0), make_grid(hw, n)), 2)[1])
    second = np.array(second)
    gaps = np.abs(second - 1.0)
    ok = bool(np.all(second >= 0.95) and np.all(np.diff(gaps) < 0))
    return CriterionResult(2, "continuum edge", ok,
                           "second eigenvalues " + ", ".join(f"{x:.6f}" for x in second), budget=30)


@_timed
def unperturbed_conservation(ctx: Context, u: float = 0.2, T: float = 50.0, dt: float = 1e-3) -> CriterionResult:
    g = make_grid(40.0, 4096)
    xi0 = -5.0
    s0 = soliton_pair(SolitonParams(xi0, u), g)
    st = make_state(s0.theta, s0.psi, g)
    tr = simulate(st, T, dt, [lambda s: dict(zip(("H", "Pi"), functionals(s)[:2]))], stride=1000)
    H = np.array([r["H"] for r in tr.records])
    P = np.array([r["Pi"] for r in tr.records])
    dH = np.max(np.abs(H - H[0])) / abs(H[0])
    dP = np.max(np.abs(P - P[0])) / abs(P[0])
    ex = soliton_pair(SolitonParams(xi0 + u * T, u), g)
    err = np.sqrt(integrate((tr.final.fields.theta - ex.theta) ** 2 + (tr.final.fields.psi - ex.psi) ** 2, g))
    ok = dH < 1e-6 and dP < 1e-6 and err < 1e-4
    return CriterionResult(3, "unperturbed conservation", bool(ok),
                           f"dH = {dH:.2e}, dPi = {dP:.2e}, L2 shape error = {err:.2e}", budget=60)


@_timed
def overlap_identity(ctx: Context, n_samples: int = 20, seed: int = 4) -> CriterionResult:
    exp = ctx.manifold(ctx.cfg.n, ctx.cfg.k)
    rng = np.random.default_rng(seed)
    lo, hi = exp.u_samples[0], exp.u_samples[-1]
    worst = 0.0
    m = soliton_mass(exp.x_grid)
    for _ in range(n_samples):
        p = SolitonParams(rng.uniform(-2, 2), rng.uniform(lo, hi))
        eps = rng.uniform(0.01, 0.1)
        m_n, k_n = overlap_coefficients(p, exp, eps)
        worst = max(worst, abs(m_n - lorentz_gamma(p.u) ** 3 * m - k_n))
    res = CriterionResult(4, "overlap identity m_n = gamma^3 m + k_n", worst < 1e-8,
                          f"max deviation {worst:.2e} over {n_samples} samples", budget=10)
    return res


@_timed
def energy_identity(ctx: Context, n_samples: int = 100, seed: int = 5) -> CriterionResult:
    g = make_grid(40.0, 4096)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        p = SolitonParams(rng.uniform(-3, 3), rng.uniform(-0.9, 0.9))
        c = rng.uniform(-5, 5, 2)
        v = rng.normal() * np.exp(-((g.x - c[0]) / rng.uniform(0.5, 3)) ** 2)
        w = rng.normal() * np.exp(-((g.x - c[1]) / rng.uniform(0.5, 3)) ** 2)
        b = evaluate(v, w, p, None, 0.0, g)
        worst = max(worst, abs(b.E - b.L_aux))
    return CriterionResult(5, "E functional equals L_aux", worst < 1e-12,
                           f"max |E - L_aux| = {worst:.2e} over {n_samples} samples", budget=5)


@_timed
def first_order_force(ctx: Context) -> CriterionResult:
    exp = ctx.manifold(1, 0)
    g = exp.x_grid
    xi = exp.xi_grid.x
    s = int(np.argmin(np.abs(exp.u_samples)))
    f = forcing_profile(ctx.cfg, g)
    m = soliton_mass(g)
    oracle = np.array([-exp.cutoff(q) * integrate(f * kink_profile(g.x - q)[1], g) / m for q in xi])
    lam1 = exp.lam[0, s]
    mask = np.abs(oracle) > 1e-3 * np.abs(oracle).max()
    rel = np.max(np.abs(lam1 - oracle)[mask] / np.abs(oracle[mask]))
    return CriterionResult(6, "first-order force oracle", bool(rel < 1e-4),
                           f"max pointwise relative error {rel:.2e} on {mask.sum()} xi-nodes", budget=60)


def _rate_data(ctx: Context, n, k, xi_node: int | None = None, u_index: int | None = None):
    exp = ctx.manifold(n, k)
    g = exp.x_grid
    xg = exp.xi_grid.x
    xi_node = int(np.argmin(np.abs(xg - 0.5))) if xi_node is None else xi_node
    u_index = len(exp.u_samples) // 2 + 1 if u_index is None else u_index
    p = SolitonParams(float(xg[xi_node]), float(exp.u_samples[u_index]))
    R, D, L = [], [], []
    for e in ctx.cfg.eps_list:
        r = residual_Rn(exp, e, p, g)
        R.append(float(np.hypot(*r.R_l2)))
        D.append(pde_defect(exp, e, p, g))
        L.append(abs(lambda_n(exp, e, p.xi, p.u)))
    eps = ctx.cfg.eps_list
    return (fit_slope(zip(eps, R))[0], fit_slope(zip(eps, D))[0], fit_slope(zip(eps, L))[0])


@_timed
def residual_rate(ctx: Context, cases=((1, 0), (2, 0), (2, 1))) -> CriterionResult:
    parts, ok = [], True
    for n, k in cases:
        sr, sd, _ = _rate_data(ctx, n, k)
        target = n + k + 1
        ok &= abs(sr - target) <= 0.15 and abs(sd - target) <= 0.15
        parts.append(f"(n,k)=({n},{k}): R {sr:.3f}, defect {sd:.3f} vs {target}")
    return CriterionResult(7, "residual rate", bool(ok), "; ".join(parts), budget=300)


@_timed
def force_rate(ctx: Context, cases=((1, 0), (2, 0), (2, 1))) -> CriterionResult:
    parts, ok = [], True
    for n, k in cases:
        _, _, sl = _rate_data(ctx, n, k)
        ok &= abs(sl - (k + 1)) <= 0.1
        parts.append(f"(n,k)=({n},{k}): {sl:.3f} vs {k + 1}")
    return CriterionResult(8, "force rate", bool(ok), "; ".join(parts), budget=300)


@_timed
def transversal_bound(ctx: Context) -> CriterionResult:
    rows, sl = ctx.study()
    s, r2 = sl["sup_norm"]
    target = 2 * ctx.cfg.n
    failed = [r.eps for r in rows if r.status != "ok"]
    ok = not failed and abs(s - target) <= 0.3
    return CriterionResult(9, "main-theorem transversal bound", bool(ok),
                           f"slope {s:.3f} (r2 {r2:.4f}) vs {target}" + (f"; failed rows {failed}" if failed else ""),
                           budget=600)


@_timed
def parameter_tracking(ctx: Context) -> CriterionResult:
    rows, sl = ctx.study()
    n, b = ctx.cfg.n, 0.5 * (ctx.cfg.k + 1)
    sx, su = sl["xi_err"][0], sl["u_err"][0]
    ok = abs(sx - n) <= 0.3 and abs(su - (n + b)) <= 0.3
    return CriterionResult(10, "parameter tracking", bool(ok),
                           f"xi slope {sx:.3f} vs {n}, u slope {su:.3f} vs {n + b}", budget=600)


@_timed
def gronwall_harness(ctx: Context, eps: float = 0.05, deltas=(1e-6, 1e-4)) -> CriterionResult:
    cfg = ctx.cfg
    exp = ctx.manifold(cfg.n, cfg.k)
    view = VirtualManifold(exp, eps)
    k = cfg.k
    C = lipschitz_constant(view, eps, k)
    T = cfg["experiment.T_factor"]
    ds = T / 400
    accel = lambda x, uh: rescaled_acceleration(view, eps, k, [x], [uh])[0]
    xi0, uh0 = cfg["experiment.xi_s"], cfg["experiment.u_s_hat"]
    exact = integrate_rescaled(xi0, uh0, accel, T, ds)
    shapes = {"const": lambda s: 1.0, "sin": lambda s: np.sin(7 * s), "ramp": lambda s: s / T}
    worst, ok = 0.0, True
    for d in deltas:
        for name, f in shapes.items():
            tilde = integrate_rescaled(xi0, uh0, accel, T, ds, lambda s: d * f(s), lambda s: -d * f(s))
            rep = gronwall_compare(tilde, exact, d, C)
            ok &= rep.ok
            worst = max(worst, max(rep.dxi, rep.du) / rep.bound)
    return CriterionResult(11, "Gronwall harness", bool(ok),
                           f"largest deviation / bound = {worst:.3e} (C = {C:.3f}, T = {T})", budget=10)


@_timed
def coercivity(ctx: Context) -> CriterionResult:
    cfg = ctx.cfg
    g = grid_of(cfg)
    exp = ctx.manifold(cfg.n, cfg.k)
    lo, hi = exp.u_samples[0], exp.u_samples[-1]
    samples = [(0.0, 0.0, 0.0), (1.0, 0.1, 0.0), (-1.0, -0.2, 0.0),
               (0.0, 0.0, 1e-2), (1.0, 0.8 * hi, 1e-2), (-1.0, 0.8 * lo, 1e-2)]
    consts = []
    for xi, u, eps in samples:
        src = None if eps == 0.0 else VirtualManifold(exp, eps)
        consts.append(coercivity_constant(SolitonParams(xi, u), src, eps, g))
    fine = make_grid(cfg["grid.half_width"], 2 * int(cfg["grid.n_points"]))
    p = SolitonParams(0.3, 0.2)
    v, w = kernel_direction(p, fine)
    Ek = abs(evaluate(v, w, p, None, 0.0, fine).E)
    ok = min(consts) > 0 and Ek < 1e-8
    return CriterionResult(12, "coercivity", bool(ok),
                           f"min constant {min(consts):.4f} over {len(samples)} points; "
                           f"E on kernel direction {Ek:.1e} (grid {fine.n_points})", budget=60)


@_timed
def oracle_equivalence(ctx: Context, us=(0.0, 0.05)) -> CriterionResult:
    g = make_grid(16.0, 256)
    g2 = comoving_grid2d(g, 64, 2)
    xi = g2.xi_grid.x[:, None]
    y = g.x[None, :]
    r1 = np.exp(-y ** 2) * np.cos(2 * np.pi * xi / (2 * g2.xi_grid.half_width))
    r2 = np.exp(-(y - 1) ** 2) * np.exp(-xi ** 2)
    worst = 0.0
    for u in us:
        a = FrakMSolver(u, g2, "fd4").solve(r1, r2, check_aliasing=False)
        b = solve_frakM_direct(u, r1, r2, g2, "fd4")
        for x, z in ((a.theta, b.theta), (a.psi, b.psi), (a.lam, b.lam)):
            worst = max(worst, np.linalg.norm(x - z) / np.linalg.norm(z))
    return CriterionResult(13, "mode-decoupled vs direct 2-D solve", bool(worst < 1e-6),
                           f"max relative difference {worst:.2e}", budget=60)


CHECKS = [kernel_eigenpair, continuum_edge, unperturbed_conservation, overlap_identity, energy_identity,
          first_order_force, residual_rate, force_rate, transversal_bound, parameter_tracking,
          gronwall_harness, coercivity, oracle_equivalence]


def run_all(ctx: Context | None = None, only=None):
    ctx = Context() if ctx is None else ctx
    out = []
    for i, chk in enumerate(CHECKS, 1):
        if only and i not in only:
            continue
        try:
            out.append(chk(ctx))
        except Exception as e:  # a crash is a failed criterion, not a crashed report
            out.append(CriterionResult(i, chk.__name__, False, f"error: {type(e).__name__}: {e}"))
    return out
