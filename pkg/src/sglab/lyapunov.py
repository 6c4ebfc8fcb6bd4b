"""Lyapunov function, the auxiliary functional E, coercivity, and the dL/dt identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh, null_space

from .kink import SolitonParams, cos_kink, lorentz_gamma
from .manifold import VirtualManifold
from .modulation import _view, centered_rates, cubic_remainder, modulation_velocities
from .numerics import Grid1D, derivative, diff_matrix, integrate


@dataclass
class EnergyBreakdown:
    L_eps: float
    L_aux: float
    E: float
    terms: dict


def evaluate(v, w, p: SolitonParams, exp, eps: float = 0.0, grid: Grid1D | None = None,
             theta_n=None) -> EnergyBreakdown:
    view = VirtualManifold(exp, eps, grid) if not isinstance(exp, VirtualManifold) else exp
    g = view.grid
    v = np.asarray(v, float)
    w = np.asarray(w, float)
    vx = derivative(v, g, 1)
    th_n = view.state(p).theta if theta_n is None else theta_n
    gam = lorentz_gamma(p.u)
    cK = cos_kink(gam * (g.x - p.xi))
    terms = {
        "w2": integrate(0.5 * w ** 2, g),
        "vx2": integrate(0.5 * vx ** 2, g),
        "cos_v2": integrate(0.5 * np.cos(th_n) * v ** 2, g),
        "uwvx": integrate(p.u * w * vx, g),
    }
    L_eps = sum(terms.values())
    L_aux = terms["w2"] + terms["vx2"] + terms["uwvx"] + integrate(0.5 * cK * v ** 2, g)
    E = 0.5 * integrate((w + p.u * vx) ** 2 + (vx / gam) ** 2 + cK * v ** 2, g)
    return EnergyBreakdown(float(L_eps), float(L_aux), float(E), {k: float(t) for k, t in terms.items()})


def kernel_direction(p: SolitonParams, g: Grid1D):
    """(v, w) = (theta_K'(gamma(x - xi)), -u d_x v), the degenerate direction of E."""
    from .kink import kink_profile
    gam = lorentz_gamma(p.u)
    _, d1, d2 = kink_profile(gam * (g.x - p.xi))
    return d1, -p.u * gam * d2


def _forms(p: SolitonParams, g: Grid1D):
    """Sparse matrices of E and of the H1 x L2 norm acting on x = (v, w)."""
    W = sp.diags(g.weights)
    D = diff_matrix(g, 1)
    gam = lorentz_gamma(p.u)
    cK = sp.diags(cos_kink(gam * (g.x - p.xi)) * g.weights)
    I = sp.identity(g.n_points)
    top = sp.hstack([p.u * D, I])            # w + u v_x
    vx = sp.hstack([D, sp.csr_matrix((g.n_points, g.n_points))])
    v_only = sp.hstack([I, sp.csr_matrix((g.n_points, g.n_points))])
    w_only = sp.hstack([sp.csr_matrix((g.n_points, g.n_points)), I])
    A = 0.5 * (top.T @ W @ top + vx.T @ W @ vx / gam ** 2 + v_only.T @ cK @ v_only)
    B = v_only.T @ W @ v_only + vx.T @ W @ vx + w_only.T @ W @ w_only
    return sp.csc_matrix(A), sp.csc_matrix(B)


def _constraint_row(p: SolitonParams, view: VirtualManifold):
    """Coefficients c with c . (v, w) = N2 = int d_u psi_n v - d_u theta_n w."""
    t2 = view.point(p).t2
    wts = view.grid.weights
    return np.concatenate([t2.psi * wts, -t2.theta * wts])


def rayleigh_basis(p: SolitonParams, g: Grid1D, n_modes: int = 60):
    A, B = _forms(p, g)
    mu, X = spla.eigsh(A, k=n_modes, M=B, sigma=-0.05, which="LM")
    order = np.argsort(mu)
    return mu[order], X[:, order]


def coercivity_constant(p: SolitonParams, exp, eps: float = 0.0, g: Grid1D | None = None,
                        n_modes: int = 60, constrained: bool = True) -> float:
    """Smallest E / (|v|_H1^2 + |w|^2) over the reduced basis, optionally under N2 = 0."""
    view = _view(exp, eps) if exp is not None else VirtualManifold(None, 0.0, g)
    g = view.grid
    mu, X = rayleigh_basis(p, g, n_modes)
    if not constrained:
        return float(mu[0])
    q = _constraint_row(p, view) @ X
    Z = null_space(q[None, :])
    red = Z.T @ (mu[:, None] * Z)
    return float(eigh(red, eigvals_only=True)[0])


def norm_sq(v, w, g: Grid1D):
    return float(integrate(v ** 2 + derivative(v, g, 1) ** 2 + w ** 2, g))


# ---------------------------------------------------------------------------
# dL/dt along a decomposed trajectory

def dLdt_formula(v, w, p: SolitonParams, view: VirtualManifold):
    """Time derivative of L_eps expressed through (v, w), the manifold and the modulation rates."""
    g = view.grid
    pt = view.point(p)
    a, b = modulation_velocities(v, w, p, view, pt)
    xi_dot = p.u + a
    u_dot = pt.lam + b
    th, ps = pt.state.theta, pt.state.psi
    t1, t2 = pt.t1, pt.t2
    R1, R2 = view.defect(p)
    vx = derivative(v, g, 1)
    vxx = derivative(v, g, 2)
    cos_n, sin_n = np.cos(th), np.sin(th)
    Q = 0.5 * sin_n * v ** 2 + cubic_remainder(th, v)

    def pairing(t):
        return integrate(w * t.psi + p.u * vx * t.psi + (cos_n * v - vxx) * t.theta
                         + p.u * w * derivative(t.theta, g, 1), g)

    R1x = derivative(R1, g, 1)
    # d/dxi at fixed y of theta_n: d_xi theta_n + d_x theta_n
    transport = t1.theta + derivative(th, g, 1)
    val = (-a * pairing(t1) - b * pairing(t2)
           - 0.5 * u_dot * integrate(sin_n * t2.theta * v ** 2, g)
           - 0.5 * xi_dot * integrate(sin_n * transport * v ** 2, g)
           + a * integrate(cos_n * v * vx, g)
           + u_dot * integrate(w * vx, g)
           + integrate((w + p.u * vx) * (Q + R2) + vx * R1x + cos_n * v * R1 + p.u * w * R1x, g))
    return float(val)


@dataclass
class DLdtSeries:
    times: np.ndarray
    formula: np.ndarray
    finite_difference: np.ndarray
    L: np.ndarray

    def relative_mismatch(self, floor: float = 0.0):
        scale = np.maximum(np.abs(self.formula), floor)
        return np.abs(self.formula - self.finite_difference) / np.where(scale > 0, scale, 1.0)


def dLdt_check(decomps, times, exp, eps: float = 0.0) -> DLdtSeries:
    view = _view(exp, eps) if not isinstance(exp, VirtualManifold) else exp
    times = np.asarray(times, float)
    L = np.array([evaluate(d.v, d.w, d.params, view).L_eps for d in decomps])
    fd = centered_rates(times, L)
    form = np.array([dLdt_formula(d.v, d.w, d.params, view) for d in decomps[1:-1]])
    return DLdtSeries(times[1:-1], form, fd, L)
