"""Symplectic orthogonal decomposition (theta, psi) = manifold point + (v, w)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kink import SolitonParams, lorentz_gamma, soliton_mass
from .manifold import ManifoldExpansion, VirtualManifold
from .numerics import FieldPair, Grid1D, integrate, symplectic_form

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    pass


class StripExit(DecompositionError):
    pass


@dataclass
class DecompositionResult:
    params: SolitonParams
    v: np.ndarray
    w: np.ndarray
    newton_iters: int
    residual: np.ndarray

    @property
    def xi(self):
        return self.params.xi

    @property
    def u(self):
        return self.params.u


def as_view(exp, eps: float = 0.0, grid: Grid1D | None = None) -> VirtualManifold:
    if isinstance(exp, VirtualManifold):
        return exp
    if exp is not None and not isinstance(exp, ManifoldExpansion):
        raise TypeError("exp must be a ManifoldExpansion, a VirtualManifold or None")
    return VirtualManifold(exp, eps, grid)


def orthogonality_residual(theta, psi, p: SolitonParams, exp, eps: float = 0.0, grid: Grid1D | None = None):
    """(N1, N2) with N_i = Omega(t_i, (theta, psi) - manifold point)."""
    view = as_view(exp, eps, grid)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (view.grid.n_points,):
        raise ValueError("fields are not on the manifold grid")
    pt = view.point(p)
    disp = FieldPair(theta, np.asarray(psi, dtype=float)) - pt.state
    g = view.grid
    return np.array([symplectic_form(pt.t1, disp, g), symplectic_form(pt.t2, disp, g)])


def overlap_coefficients(p: SolitonParams, exp, eps: float = 0.0, grid: Grid1D | None = None):
    """(m_n, k_n): the tangent-plane overlap and its correction part by quadrature."""
    view = as_view(exp, eps, grid)
    g = view.grid
    pt = view.point(p)
    m_n = integrate(-pt.t1.psi * pt.t2.theta + pt.t1.theta * pt.t2.psi, g)
    if view.patch is None:
        return float(m_n), 0.0
    from .kink import tangent_vectors
    a1, a2 = tangent_vectors(p, g)
    h1, h2 = pt.t1 - a1, pt.t2 - a2
    k_n = integrate(-a1.psi * h2.theta - a2.theta * h1.psi + a1.theta * h2.psi + a2.psi * h1.theta
                    - h1.psi * h2.theta + h1.theta * h2.psi, g)
    return float(m_n), float(k_n)


def jacobian_N(p: SolitonParams, exp, eps: float = 0.0, grid: Grid1D | None = None):
    """Derivative of N in (xi, u) at an on-manifold point: (gamma^3 m + k_n) [[0, 1], [-1, 0]]."""
    view = as_view(exp, eps, grid)
    _, k_n = overlap_coefficients(p, view)
    c = lorentz_gamma(p.u) ** 3 * soliton_mass(view.grid) + k_n
    if abs(c) < 1e-12:
        raise DecompositionError("degenerate Jacobian")
    return np.array([[0.0, c], [-c, 0.0]])


def full_jacobian(theta, psi, p: SolitonParams, view: VirtualManifold):
    """dN_i/dp_j = -Omega(t_i, t_j) + Omega(d_j t_i, (v, w))."""
    g = view.grid
    pt = view.point(p)
    disp = FieldPair(np.asarray(theta, float), np.asarray(psi, float)) - pt.state
    t = (pt.t1, pt.t2)
    J = np.array([[-symplectic_form(t[i], t[j], g) for j in range(2)] for i in range(2)])
    if np.sqrt(integrate(disp.theta ** 2 + disp.psi ** 2, g)) > 0:
        d11, d12, d22 = view.second_tangents(p)
        dt = ((d11, d12), (d12, d22))
        J += np.array([[symplectic_form(dt[i][j], disp, g) for j in range(2)] for i in range(2)])
    return J


def _in_strip(view, p):
    xb, (lo, hi) = view.strip()
    return abs(p.xi) <= xb and lo <= p.u <= hi


def project(theta, psi, guess: SolitonParams, exp, eps: float = 0.0, grid: Grid1D | None = None,
            tol: float = 1e-10, max_iter: int = 30, max_halvings: int = 6) -> DecompositionResult:
    """Damped Newton on (xi, u) for N(theta, psi, xi, u) = 0."""
    view = as_view(exp, eps, grid)
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    g = view.grid
    scale = 1.0
    p = guess
    if not _in_strip(view, p):
        raise StripExit(f"initial guess {p} outside the parameter strip")
    N = orthogonality_residual(theta, psi, p, view)
    it = 0
    while np.max(np.abs(N)) >= tol * scale:
        if it >= max_iter:
            raise DecompositionError(f"Newton did not converge: |N| = {np.max(np.abs(N)):.3e}")
        J = full_jacobian(theta, psi, p, view)
        step = np.linalg.solve(J, -N)
        t = 1.0
        for _ in range(max_halvings + 1):
            q = SolitonParams(p.xi + t * step[0], p.u + t * step[1])
            if not _in_strip(view, q):
                raise StripExit(f"parameters left the strip at {q}")
            Nq = orthogonality_residual(theta, psi, q, view)
            if np.max(np.abs(Nq)) < np.max(np.abs(N)):
                break
            t *= 0.5
        else:
            raise DecompositionError("line search failed; state outside the tube")
        p, N = q, Nq
        it += 1
    st = view.state(p)
    return DecompositionResult(p, theta - st.theta, psi - st.psi, it, N)
