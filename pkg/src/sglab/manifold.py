"""Virtual solitary manifold: cutoff, Taylor coefficients, assembly, refinement, residuals.

Coefficients are stored in co-moving coordinates y = x - xi on a periodic
xi-grid whose spacing is an integer multiple of the x-spacing, so that
lab-frame values on xi-nodes are exact integer shifts.  Between xi-nodes the
fields are evaluated through their trigonometric interpolant in xi, and
between u-samples through a cubic spline in u.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .kink import SolitonParams, kink_profile, lorentz_gamma, soliton_pair, tangent_vectors
from .linop import (FrakMSolver, comoving_grid2d, estimate_u_star, mode_wavenumbers, to_comoving,
                    xi_derivative)
from .numerics import DIRICHLET, PERIODIC, FieldPair, Grid1D, Grid2D, derivative, integrate

FORMAT_VERSION = 1
MAGIC = b"SGVM"
PATCH_CACHE = 4  # a patch holds about 80 MB at the default resolution


class ExtrapolationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cutoff and perturbation

def smooth_step(t):
    """C-infinity transition from 0 (t <= 0) to 1 (t >= 1) built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    a = np.where(pos, np.exp(-1.0 / np.where(pos, t, 1.0)), 0.0)
    neg = t < 1
    b = np.where(neg, np.exp(-1.0 / np.where(neg, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffProfile:
    xi_s: float
    Xi: float
    values: np.ndarray

    def __call__(self, xi):
        return 1.0 - smooth_step(np.abs(np.asarray(xi, dtype=float)) - self.Xi)


def make_cutoff(xi_s: float, g: Grid1D) -> CutoffProfile:
    Xi = abs(xi_s) + 3.0
    if not Xi + 1.0 < g.half_width:
        raise ValueError(f"xi-domain half width {g.half_width} too small for plateau radius {Xi}")
    vals = 1.0 - smooth_step(np.abs(g.x) - Xi)
    return CutoffProfile(float(xi_s), Xi, vals)


@dataclass(frozen=True)
class PerturbationSpec:
    """F(eps, x) = eps^(k+1) f(x), or tabulated derivatives d^l F / d eps^l at eps = 0."""
    k: int
    profile: np.ndarray
    tabulated: dict | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.tabulated:
            for l, v in self.tabulated.items():
                if l <= self.k and np.any(v):
                    raise ValueError(f"derivative of order {l} <= k must vanish")

    @property
    def max_order(self):
        if self.tabulated:
            return max(self.tabulated)
        return math.inf

    def force(self, eps: float):
        if self.tabulated:
            return sum(eps ** l / math.factorial(l) * np.asarray(v) for l, v in self.tabulated.items())
        return eps ** (self.k + 1) * self.profile


def perturbation_deriv(F: PerturbationSpec, l: int) -> np.ndarray:
    if l < 0 or l > F.max_order:
        raise ValueError(f"no derivative data of order {l}")
    if F.tabulated:
        return np.asarray(F.tabulated.get(l, np.zeros_like(F.profile)), dtype=float)
    if l == F.k + 1:
        return math.factorial(F.k + 1) * F.profile
    return np.zeros_like(F.profile)


def sech_profile(g: Grid1D, amplitude: float = 1.0, center: float = 0.0, width: float = 1.0):
    return amplitude / np.cosh((g.x - center) / width)


# ---------------------------------------------------------------------------
# Faa di Bruno

@lru_cache(maxsize=None)
def integer_partitions(j: int, parts: int, largest: int | None = None) -> tuple:
    """Partitions of j into exactly `parts` positive integers, non-increasing."""
    if largest is None:
        largest = j
    if parts == 0:
        return ((),) if j == 0 else ()
    out = []
    for first in range(min(j - parts + 1, largest), 0, -1):
        for rest in integer_partitions(j - first, parts - 1, first):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def bell_terms(j: int, l: int) -> tuple:
    """(coefficient, block sizes) pairs of the partial Bell polynomial B_{j,l}."""
    terms = []
    for part in integer_partitions(j, l):
        c = math.factorial(j)
        for b in set(part):
            mult = part.count(b)
            c //= math.factorial(b) ** mult * math.factorial(mult)
        terms.append((c, part))
    return tuple(terms)


def sine_derivative_terms(j: int, theta0, coeffs):
    """Sum over partitions with at least two blocks of sin^(l)(theta0) prod theta^(b).

    coeffs[b] holds the b-th eps-derivative (b >= 1) of theta at eps = 0.
    """
    total = np.zeros_like(theta0)
    for l in range(2, j + 1):
        s = np.sin(theta0 + 0.5 * l * np.pi)
        acc = np.zeros_like(theta0)
        for c, part in bell_terms(j, l):
            prod = np.full_like(theta0, float(c))
            for b in part:
                prod = prod * coeffs[b]
            acc += prod
        total += s * acc
    return total


# ---------------------------------------------------------------------------
# expansion

def chebyshev_samples(u_cap: float, n_u: int) -> np.ndarray:
    k = np.arange(n_u)
    s = np.sort(-u_cap * np.cos(np.pi * k / (n_u - 1)))
    return 0.5 * (s - s[::-1])  # exactly symmetric, with u = 0 a sample for odd n_u


@dataclass
class ManifoldExpansion:
    n: int
    k: int
    u_samples: np.ndarray
    g2: Grid2D
    stride: int
    cutoff: CutoffProfile
    theta: np.ndarray   # (n, n_u, M, N): d^j/d eps^j at eps = 0, co-moving
    psi: np.ndarray
    lam: np.ndarray     # (n, n_u, M)
    order_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_star: float = float("nan")
    eps_valid: float = float("nan")
    forcing: PerturbationSpec | None = None
    _patches: dict = field(default_factory=dict, repr=False)

    @property
    def x_grid(self) -> Grid1D:
        return self.g2.x_grid

    @property
    def xi_grid(self) -> Grid1D:
        return self.g2.xi_grid

    def coefficient(self, j: int):
        """(theta^(j), psi^(j), lambda^(j)) for j >= 1; zero arrays for j = 0 corrections."""
        if j == 0:
            return np.zeros_like(self.theta[0]), np.zeros_like(self.psi[0]), np.zeros_like(self.lam[0])
        return self.theta[j - 1], self.psi[j - 1], self.lam[j - 1]

    def at(self, eps: float, depth: int | None = None) -> "ManifoldPatch":
        depth = self.n if depth is None else depth
        key = (float(eps), depth)
        if key not in self._patches:
            th = np.zeros_like(self.theta[0])
            ps = np.zeros_like(self.psi[0])
            la = np.zeros_like(self.lam[0])
            for j in range(1, depth + 1):
                c = eps ** j / math.factorial(j)
                th += c * self.theta[j - 1]
                ps += c * self.psi[j - 1]
                la += c * self.lam[j - 1]
            while len(self._patches) >= PATCH_CACHE:
                self._patches.pop(next(iter(self._patches)))
            self._patches[key] = ManifoldPatch(self.u_samples, self.g2, th, ps, la)
        else:
            self._patches[key] = self._patches.pop(key)  # most recent last
        return self._patches[key]


def taylor_coefficients(n: int, F: PerturbationSpec, chi: CutoffProfile, u_samples, g2: Grid2D,
                        stride: int, scheme: str = "spectral", workers: int = 1,
                        u_star: float | None = None) -> ManifoldExpansion:
    """Order-by-order solves of the linearized iteration equations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > F.max_order:
        raise ValueError("perturbation data do not reach order n")
    us = np.asarray(u_samples, dtype=float)
    if u_star is not None and np.max(np.abs(us)) >= u_star:
        raise ValueError("u-samples exceed the invertibility threshold")
    g = g2.x_grid
    M, N, nu = g2.xi_grid.n_points, g.n_points, len(us)
    chi_xi = chi(g2.xi_grid.x)
    theta = np.zeros((n, nu, M, N))
    psi = np.zeros((n, nu, M, N))
    lam = np.zeros((n, nu, M))
    dspline = CubicSpline(us, np.eye(nu)).derivative()(us) if nu >= 4 else None
    residuals = np.zeros((n, nu))
    solvers = {}
    for j in range(1, n + 1):
        src = perturbation_deriv(F, j)
        src_c = to_comoving(chi_xi[:, None] * src[None, :], g2, stride) if np.any(src) else None
        # u-derivatives of lower orders across samples
        du_th = [None] + [np.tensordot(dspline, theta[i - 1], axes=(1, 0)) for i in range(1, j)]
        du_ps = [None] + [np.tensordot(dspline, psi[i - 1], axes=(1, 0)) for i in range(1, j)]
        for s, u in enumerate(us):
            gam = lorentz_gamma(u)
            th0 = kink_profile(gam * g.x)[0][None, :]
            r1 = np.zeros((M, N))
            r2 = np.zeros((M, N)) if src_c is None else src_c.copy()
            if j >= 2:
                coeffs = {b: theta[b - 1, s] for b in range(1, j)}
                r2 -= sine_derivative_terms(j, np.broadcast_to(th0, (M, N)).copy(), coeffs)
                for i in range(1, j):
                    c = math.comb(j, i)
                    lj = lam[j - i - 1, s][:, None]
                    r1 -= c * lj * du_th[i][s]
                    r2 -= c * lj * du_ps[i][s]
            if not (np.any(r1) or np.any(r2)):
                continue
            key = float(u)
            if key not in solvers:
                if len(solvers) >= 2:
                    solvers.clear()
                solvers[key] = FrakMSolver(u, g2, scheme, None, workers)
            sol = solvers[key].solve(r1, r2)
            theta[j - 1, s], psi[j - 1, s], lam[j - 1, s] = sol.theta, sol.psi, sol.lam
            residuals[j - 1, s] = sol.mode_residuals.max()
        solvers.clear()
    return ManifoldExpansion(n, F.k, us, g2, stride, chi, theta, psi, lam, residuals,
                             float("nan") if u_star is None else u_star, forcing=F)


def build_manifold(n: int, k: int, profile: np.ndarray, x_grid: Grid1D, xi_s: float = 0.0,
                   n_xi: int = 64, stride: int | None = None, n_u: int = 9, u_cap: float | None = None,
                   scheme: str = "spectral", workers: int = 1, dxi_target: float = 0.25) -> ManifoldExpansion:
    """Convenience constructor with the default grid and u-sampling rules."""
    if stride is None:
        stride = max(1, int(round(dxi_target / x_grid.spacing)))
    g2 = comoving_grid2d(x_grid, n_xi, stride)
    chi = make_cutoff(xi_s, g2.xi_grid)
    u_star = estimate_u_star(g2, scheme)
    if u_cap is None:
        u_cap = 0.8 * u_star
    us = chebyshev_samples(u_cap, n_u)
    F = PerturbationSpec(k, np.asarray(profile, dtype=float))
    exp = taylor_coefficients(n, F, chi, us, g2, stride, scheme, workers, u_star)
    exp.u_star = u_star
    return exp


# ---------------------------------------------------------------------------
# evaluation at arbitrary (xi, u)

@dataclass
class PatchValue:
    """Corrections (lab frame, on the x-grid) and their parameter derivatives."""
    theta: np.ndarray
    psi: np.ndarray
    theta_xi: np.ndarray   # d/dxi at fixed x
    psi_xi: np.ndarray
    theta_u: np.ndarray
    psi_u: np.ndarray
    lam: float
    lam_xi: float
    lam_u: float


class ManifoldPatch:
    """theta_hat, psi_hat, lambda at fixed eps over (xi-grid x u-samples), with interpolation."""

    def __init__(self, u_samples, g2: Grid2D, theta, psi, lam):
        self.u_samples = np.asarray(u_samples)
        self.g2 = g2
        self.theta = theta
        self.psi = psi
        self.lam = lam
        xg = g2.xi_grid
        self._kappa_full = np.abs(xg.wavenumbers()[: xg.n_points // 2 + 1])
        self._th_hat = np.fft.rfft(theta, axis=1)
        self._ps_hat = np.fft.rfft(psi, axis=1)
        self._la_hat = np.fft.rfft(lam, axis=1)
        self._wspline = CubicSpline(self.u_samples, np.eye(len(self.u_samples)))
        self._wspline_d = self._wspline.derivative()
        gx = g2.x_grid
        self._q = 2.0 * np.pi * np.fft.rfftfreq(gx.n_points, d=gx.spacing)

    @property
    def u_range(self):
        return float(self.u_samples[0]), float(self.u_samples[-1])

    def _weights(self, u):
        lo, hi = self.u_range
        if not (lo - 1e-12 <= u <= hi + 1e-12):
            raise ExtrapolationError(f"u = {u} outside sampled range [{lo}, {hi}]")
        return self._wspline(u), self._wspline_d(u)

    def _xi_phases(self, xi):
        xg = self.g2.xi_grid
        m = xg.n_points
        ph = np.exp(1j * self._kappa_full * (xi - xg.x[0]))
        c = np.full(len(ph), 2.0 / m)
        c[0] = 1.0 / m
        if m % 2 == 0:
            c[-1] = 1.0 / m
        # exact derivative of this interpolant; its Nyquist part vanishes only at the nodes
        return c * ph, 1j * self._kappa_full * c * ph

    def _shift(self, fy, xi):
        """Lab-frame samples f(x_i) = c(x_i - xi) from co-moving samples c(y_i)."""
        fh = np.fft.rfft(fy)
        ph = np.exp(-1j * self._q * xi)
        return np.fft.irfft(fh * ph, len(fy))

    def lambda_at(self, xi, u):
        w, wd = self._weights(u)
        a, ad = self._xi_phases(xi)
        lam_s = np.real(self._la_hat @ a)
        lam_xi_s = np.real(self._la_hat @ ad)
        return float(w @ lam_s), float(w @ lam_xi_s), float(wd @ lam_s)

    def evaluate(self, xi: float, u: float, derivatives: bool = True) -> PatchValue:
        w, wd = self._weights(u)
        a, ad = self._xi_phases(xi)
        gx = self.g2.x_grid
        # combine u-samples first, then xi-modes
        th_k = np.tensordot(w, self._th_hat, axes=(0, 0))
        ps_k = np.tensordot(w, self._ps_hat, axes=(0, 0))
        th = self._shift(np.real(a @ th_k), xi)
        ps = self._shift(np.real(a @ ps_k), xi)
        lam, lam_xi, lam_u = self.lambda_at(xi, u)
        if not derivatives:
            z = np.zeros_like(th)
            return PatchValue(th, ps, z, z, z, z, lam, lam_xi, lam_u)
        th_xiy = self._shift(np.real(ad @ th_k), xi)
        ps_xiy = self._shift(np.real(ad @ ps_k), xi)
        th_xi = th_xiy - derivative(th, gx, 1)
        ps_xi = ps_xiy - derivative(ps, gx, 1)
        th_u = self._shift(np.real(a @ np.tensordot(wd, self._th_hat, axes=(0, 0))), xi)
        ps_u = self._shift(np.real(a @ np.tensordot(wd, self._ps_hat, axes=(0, 0))), xi)
        return PatchValue(th, ps, th_xi, ps_xi, th_u, ps_u, lam, lam_xi, lam_u)


def _check_grid(exp: ManifoldExpansion, g: Grid1D):
    if g != exp.x_grid:
        raise ValueError("evaluation grid differs from the manifold's x-grid")


def evaluate_virtual_soliton(exp: ManifoldExpansion, eps: float, p: SolitonParams, g: Grid1D,
                             patch: ManifoldPatch | None = None) -> FieldPair:
    _check_grid(exp, g)
    base = soliton_pair(p, g)
    if eps == 0.0 and patch is None:
        exp.at(0.0)._weights(p.u)
        return base
    patch = exp.at(eps) if patch is None else patch
    v = patch.evaluate(p.xi, p.u, derivatives=False)
    return FieldPair(base.theta + v.theta, base.psi + v.psi)


def lambda_n(exp: ManifoldExpansion, eps: float, xi: float, u: float) -> float:
    if eps == 0.0:
        return 0.0
    return exp.at(eps).lambda_at(xi, u)[0]


def virtual_tangents(patch: ManifoldPatch, p: SolitonParams, g: Grid1D, value: PatchValue | None = None):
    t1, t2 = tangent_vectors(p, g)
    v = patch.evaluate(p.xi, p.u) if value is None else value
    return (FieldPair(t1.theta + v.theta_xi, t1.psi + v.psi_xi),
            FieldPair(t2.theta + v.theta_u, t2.psi + v.psi_u))


# ---------------------------------------------------------------------------
# residuals

@dataclass
class ResidualReport:
    eps: float
    R_l2: tuple
    R_weighted: tuple
    defect_l2: float = float("nan")


def _weighted_l2(f, g):
    return float(np.sqrt(integrate((1.0 + g.x ** 2) * f ** 2, g)))


def residual_Rn(exp: ManifoldExpansion, eps: float, p: SolitonParams, g: Grid1D,
                state: ManifoldPatch | None = None) -> ResidualReport:
    """R = lambda_n d/du (Taylor sum through order n-1  minus  assembled state)."""
    _check_grid(exp, g)
    if len(exp.u_samples) < 3:
        raise ValueError("need at least three u-samples")
    if eps == 0.0:
        z = (0.0, 0.0)
        return ResidualReport(0.0, z, z)
    full = exp.at(eps) if state is None else state
    low = exp.at(eps, exp.n - 1)
    vf = full.evaluate(p.xi, p.u)
    vl = low.evaluate(p.xi, p.u)
    lam = vf.lam
    r1 = lam * (vl.theta_u - vf.theta_u)
    r2 = lam * (vl.psi_u - vf.psi_u)
    l2 = (float(np.sqrt(integrate(r1 ** 2, g))), float(np.sqrt(integrate(r2 ** 2, g))))
    return ResidualReport(float(eps), l2, (_weighted_l2(r1, g), _weighted_l2(r2, g)))


def residual_fields(exp: ManifoldExpansion, eps: float, p: SolitonParams, g: Grid1D,
                    state: ManifoldPatch | None = None):
    full = exp.at(eps) if state is None else state
    low = exp.at(eps, exp.n - 1)
    vf = full.evaluate(p.xi, p.u)
    vl = low.evaluate(p.xi, p.u)
    return vf.lam * (vl.theta_u - vf.theta_u), vf.lam * (vl.psi_u - vf.psi_u)


def defect_fields(exp: ManifoldExpansion, eps: float, p: SolitonParams, g: Grid1D,
                  state: ManifoldPatch | None = None, force=None):
    """u d_xi(theta_n, psi_n) - (psi_n, theta_n'' - sin theta_n + F) + lambda_n d_u(theta_n, psi_n).

    The classical-soliton part cancels in closed form, so only the corrections
    are differentiated numerically.
    """
    u = p.u
    patch = exp.at(eps) if state is None else state
    v = patch.evaluate(p.xi, u)
    base = soliton_pair(p, g)
    t1, t2 = tangent_vectors(p, g)
    if force is None:
        force = exp_force(exp, eps)
    d1 = u * v.theta_xi - v.psi + v.lam * (t2.theta + v.theta_u)
    d2 = (u * v.psi_xi - derivative(v.theta, g, 2)
          + np.sin(base.theta + v.theta) - np.sin(base.theta) - force
          + v.lam * (t2.psi + v.psi_u))
    return d1, d2


def exp_force(exp: ManifoldExpansion, eps: float):
    if exp.forcing is None:
        raise ValueError("expansion carries no forcing; pass force explicitly")
    return exp.forcing.force(eps)


def pde_defect(exp: ManifoldExpansion, eps: float, p: SolitonParams, g: Grid1D,
               state: ManifoldPatch | None = None) -> float:
    _check_grid(exp, g)
    if abs(p.xi) > exp.cutoff.Xi:
        raise ValueError("defect identity only holds on the cutoff plateau")
    d1, d2 = defect_fields(exp, eps, p, g, state)
    return float(np.sqrt(integrate(d1 ** 2 + d2 ** 2, g)))


# ---------------------------------------------------------------------------
# Newton (chord) refinement of the fixed-eps equation at each u-sample

class NewtonFailure(RuntimeError):
    pass


def _G(exp, eps, s, th, ps, la, dT_th, dT_ps, src, scheme):
    g2 = exp.g2
    g = g2.x_grid
    u = float(exp.u_samples[s])
    from .linop import _mode_parts
    d1m, d2m, pot, border, _ = _mode_parts(u, g)
    th0 = kink_profile(lorentz_gamma(u) * g.x)[0][None, :]
    thx = xi_derivative(th, g2.xi_grid, scheme) - (d1m @ th.T).T
    psx = xi_derivative(ps, g2.xi_grid, scheme) - (d1m @ ps.T).T
    G1 = u * thx - ps + la[:, None] * dT_th
    G2 = (u * psx - (d2m @ th.T).T + np.sin(th0 + th) - np.sin(th0) - src
          + la[:, None] * dT_ps)
    return G1, G2


def newton_refine(exp: ManifoldExpansion, eps: float, u_index: int | None = None, tol: float = 1e-10,
                  max_iter: int = 12, scheme: str = "spectral"):
    """Chord iteration X <- X - M^{-1} G(X) started from the Taylor assembly.

    Returns per-sample arrays (theta_hat, psi_hat, lambda) in co-moving coordinates
    and the iteration counts.
    """
    g2 = exp.g2
    g = g2.x_grid
    nu = len(exp.u_samples)
    idx = range(nu) if u_index is None else [u_index]
    taylor = exp.at(eps)
    low = exp.at(eps, exp.n - 1)
    dsp = CubicSpline(exp.u_samples, np.eye(nu)).derivative()(exp.u_samples)
    dlow_th = np.tensordot(dsp, low.theta, axes=(1, 0))
    dlow_ps = np.tensordot(dsp, low.psi, axes=(1, 0))
    src = to_comoving(exp.cutoff(g2.xi_grid.x)[:, None] * exp_force(exp, eps)[None, :], g2, exp.stride)
    th = taylor.theta.copy()
    ps = taylor.psi.copy()
    la = taylor.lam.copy()
    iters = np.zeros(nu, int)
    for s in idx:
        u = float(exp.u_samples[s])
        t2 = tangent_vectors(SolitonParams(0.0, u), g)[1]
        dT_th = t2.theta[None, :] + dlow_th[s]
        dT_ps = t2.psi[None, :] + dlow_ps[s]
        solver = None
        for it in range(max_iter + 1):
            G1, G2 = _G(exp, eps, s, th[s], ps[s], la[s], dT_th, dT_ps, src, scheme)
            res = max(np.abs(G1).max(), np.abs(G2).max())
            if res < tol:
                break
            if it == max_iter:
                raise NewtonFailure(f"no convergence at u = {u}, eps = {eps}: residual {res:.2e}")
            if solver is None:
                solver = FrakMSolver(u, g2, scheme)
            d = solver.solve(G1, G2, check_aliasing=False)
            th[s] -= d.theta
            ps[s] -= d.psi
            la[s] -= d.lam
        iters[s] = it
    return th, ps, la, iters


def refined_patch(exp: ManifoldExpansion, eps: float, **kw) -> ManifoldPatch:
    th, ps, la, _ = newton_refine(exp, eps, **kw)
    return ManifoldPatch(exp.u_samples, exp.g2, th, ps, la)


def eps_validity(exp: ManifoldExpansion, eps_values, u_index: int | None = None) -> float:
    """Largest eps in the list (ascending scan) for which the refinement converges."""
    best = 0.0
    if u_index is None:
        u_index = int(np.argmax(np.abs(exp.u_samples)))
    for e in sorted(eps_values):
        try:
            newton_refine(exp, e, u_index=u_index)
        except NewtonFailure:
            break
        best = float(e)
    exp.eps_valid = best
    return best


# ---------------------------------------------------------------------------
# serialization

def _canonical_profile(exp):
    if exp.forcing is None:
        return np.zeros(exp.x_grid.n_points)
    if exp.forcing.tabulated:
        raise ValueError("only the canonical forcing family can be serialized")
    return np.asarray(exp.forcing.profile, dtype=float)


def save_expansion(exp: ManifoldExpansion, out_dir, params: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "u_samples": exp.u_samples,
        "cutoff": exp.cutoff.values,
        "theta": exp.theta,
        "psi": exp.psi,
        "lam": exp.lam,
        "profile": _canonical_profile(exp),
    }
    header = {
        "version": FORMAT_VERSION,
        "n": exp.n, "k": exp.k, "stride": exp.stride,
        "x_grid": [exp.x_grid.half_width, exp.x_grid.n_points, exp.x_grid.boundary],
        "xi_grid": [exp.xi_grid.half_width, exp.xi_grid.n_points, exp.xi_grid.boundary],
        "xi_s": exp.cutoff.xi_s, "Xi": exp.cutoff.Xi,
        "u_star": exp.u_star, "eps_valid": exp.eps_valid,
        "arrays": [],
    }
    offset = 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        header["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    hb = json.dumps(header, sort_keys=True).encode()
    path = out / "manifold.bin"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hb)))
        fh.write(hb)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    manifest = {"format": "SGVM", "version": FORMAT_VERSION, "file": path.name,
                "n": exp.n, "k": exp.k, "u_samples": exp.u_samples.tolist(),
                "u_star": exp.u_star, "eps_valid": exp.eps_valid,
                "x_grid": header["x_grid"], "xi_grid": header["xi_grid"], "stride": exp.stride,
                "parameters": params or {}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_expansion(path) -> ManifoldExpansion:
    path = Path(path)
    if path.is_dir():
        path = path / "manifold.bin"
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a manifold container")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported container version {version}")
        header = json.loads(fh.read(hlen))
        blob = fh.read()
    arrs = {}
    for a in header["arrays"]:
        cnt = int(np.prod(a["shape"])) if a["shape"] else 1
        arrs[a["name"]] = np.frombuffer(blob, dtype="<f8", count=cnt, offset=a["offset"]).reshape(a["shape"]).copy()
    xg = Grid1D(*header["x_grid"])
    xig = Grid1D(*header["xi_grid"])
    g2 = Grid2D(xig, xg)
    chi = CutoffProfile(header["xi_s"], header["Xi"], arrs["cutoff"])
    exp = ManifoldExpansion(header["n"], header["k"], arrs["u_samples"], g2, header["stride"], chi,
                            arrs["theta"], arrs["psi"], arrs["lam"], u_star=header["u_star"],
                            eps_valid=header["eps_valid"],
                            forcing=PerturbationSpec(header["k"], arrs["profile"]))
    return exp


# ---------------------------------------------------------------------------
# unified view used by decomposition, modulation and Lyapunov diagnostics

@dataclass
class ManifoldPoint:
    state: FieldPair
    t1: FieldPair
    t2: FieldPair
    lam: float
    lam_xi: float
    lam_u: float


class VirtualManifold:
    """The manifold at fixed eps; falls back to the classical soliton family when exp is None."""

    def __init__(self, exp: ManifoldExpansion | None, eps: float, grid: Grid1D | None = None,
                 patch: ManifoldPatch | None = None):
        self.exp = exp
        self.eps = float(eps)
        if exp is None:
            if grid is None:
                raise ValueError("grid required for the classical manifold")
            self.grid = grid
            self.patch = None
        else:
            self.grid = exp.x_grid
            self.patch = patch if patch is not None else (exp.at(eps) if eps != 0.0 else None)
            if self.patch is None:
                # keep the sampled u-range as the validity strip even at eps = 0
                self._u_range = (float(exp.u_samples[0]), float(exp.u_samples[-1]))

    @property
    def classical(self) -> bool:
        return self.patch is None

    @property
    def u_range(self):
        if self.patch is not None:
            return self.patch.u_range
        if self.exp is not None:
            return self._u_range
        return (-0.99, 0.99)

    def force(self):
        if self.exp is None or self.exp.forcing is None:
            return np.zeros(self.grid.n_points)
        return self.exp.forcing.force(self.eps)

    def point(self, p: SolitonParams) -> ManifoldPoint:
        g = self.grid
        base = soliton_pair(p, g)
        t1, t2 = tangent_vectors(p, g)
        if self.patch is None:
            return ManifoldPoint(base, t1, t2, 0.0, 0.0, 0.0)
        v = self.patch.evaluate(p.xi, p.u)
        return ManifoldPoint(FieldPair(base.theta + v.theta, base.psi + v.psi),
                             FieldPair(t1.theta + v.theta_xi, t1.psi + v.psi_xi),
                             FieldPair(t2.theta + v.theta_u, t2.psi + v.psi_u),
                             v.lam, v.lam_xi, v.lam_u)

    def state(self, p: SolitonParams) -> FieldPair:
        if self.patch is None:
            return soliton_pair(p, self.grid)
        base = soliton_pair(p, self.grid)
        v = self.patch.evaluate(p.xi, p.u, derivatives=False)
        return FieldPair(base.theta + v.theta, base.psi + v.psi)

    def lam(self, xi: float, u: float) -> float:
        if self.patch is None:
            return 0.0
        return self.patch.lambda_at(xi, u)[0]

    def lam_with_derivatives(self, xi: float, u: float):
        if self.patch is None:
            return 0.0, 0.0, 0.0
        return self.patch.lambda_at(xi, u)

    def second_tangents(self, p: SolitonParams, h_xi: float | None = None, h_u: float | None = None):
        """(d_xi t1, d_u t1 = d_xi t2, d_u t2) by centered differences of the tangent fields."""
        g = self.grid
        h_xi = g.spacing if h_xi is None else h_xi
        lo, hi = self.u_range
        h_u = min(1e-3, 0.25 * (hi - lo)) if h_u is None else h_u
        up, um = p.u + h_u, p.u - h_u
        if self.patch is not None:
            up, um = min(up, hi), max(um, lo)
        a = self.point(SolitonParams(p.xi + h_xi, p.u))
        b = self.point(SolitonParams(p.xi - h_xi, p.u))
        c = self.point(SolitonParams(p.xi, up))
        d = self.point(SolitonParams(p.xi, um))
        dxi_t1 = (a.t1 - b.t1) * (1.0 / (2 * h_xi))
        dxi_t2 = (a.t2 - b.t2) * (1.0 / (2 * h_xi))
        du_t2 = (c.t2 - d.t2) * (1.0 / (up - um))
        return dxi_t1, dxi_t2, du_t2

    def strip(self):
        """(xi bound, u-range) of the parameter region where the view is trusted."""
        if self.exp is not None:
            return self.exp.cutoff.Xi, self.u_range
        return self.grid.half_width - 10.0, self.u_range

    def defect(self, p: SolitonParams):
        """Exact remainders (R1, R2) of the manifold state along xi' = u, u' = lambda:
        R1 = psi_n - u d_xi theta_n - lambda d_u theta_n,
        R2 = theta_n'' - sin theta_n + F - u d_xi psi_n - lambda d_u psi_n.
        """
        if self.patch is None:
            z = np.zeros(self.grid.n_points)
            return z, self.force()
        d1, d2 = defect_fields(self.exp, self.eps, p, self.grid, self.patch, self.force())
        return -d1, -d2
