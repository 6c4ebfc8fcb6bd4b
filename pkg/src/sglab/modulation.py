"""Parameter dynamics: exact ODEs, rescaling, modulation residuals and the Gronwall comparison."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .kink import SolitonParams
from .manifold import VirtualManifold
from .numerics import FieldPair, derivative, symplectic_form


class StripExitError(RuntimeError):
    pass


@dataclass
class ParamSeries:
    times: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    xi_dot: np.ndarray | None = None
    u_dot: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (len(self.times) == len(self.xi) == len(self.u)):
            raise ValueError("series lengths differ")


def beta(k: int) -> float:
    return 0.5 * (k + 1)


def _view(exp, eps):
    if isinstance(exp, VirtualManifold):
        return exp
    if exp is None:
        raise ValueError("an expansion or manifold view is required")
    return VirtualManifold(exp, eps)


def rk4(f, y0, T: float, dt: float, check=None):
    n = max(1, int(round(T / dt)))
    h = T / n
    ys = np.empty((n + 1, len(y0)))
    ys[0] = y0
    y = np.asarray(y0, dtype=float)
    for i in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if check is not None:
            check(y)
        ys[i + 1] = y
    return np.linspace(0.0, T, n + 1), ys


def integrate_exact_ode(xi0: float, u0: float, exp, eps: float, T: float, dt: float) -> ParamSeries:
    """RK4 for xi' = u, u' = lambda_n(xi, u)."""
    view = _view(exp, eps)
    xb, (lo, hi) = view.strip()

    def inside(y):
        if abs(y[0]) > xb or not lo <= y[1] <= hi:
            raise StripExitError(f"trajectory left the strip at xi = {y[0]:.4f}, u = {y[1]:.4f}")

    inside((xi0, u0))

    def f(y):
        # intermediate RK stages may poke just outside the sampled u-range
        return np.array([y[1], view.lam(y[0], min(max(y[1], lo), hi))])

    t, ys = rk4(f, np.array([xi0, u0], float), T, dt, inside)
    return ParamSeries(t, ys[:, 0], ys[:, 1])


def rescale(series: ParamSeries, eps: float, k: int) -> ParamSeries:
    b = eps ** beta(k)
    return ParamSeries(series.times * b, series.xi.copy(), series.u / b,
                       None if series.xi_dot is None else series.xi_dot / b,
                       None if series.u_dot is None else series.u_dot / b ** 2)


def unrescale(series: ParamSeries, eps: float, k: int) -> ParamSeries:
    b = eps ** beta(k)
    return ParamSeries(series.times / b, series.xi.copy(), series.u * b,
                       None if series.xi_dot is None else series.xi_dot * b,
                       None if series.u_dot is None else series.u_dot * b ** 2)


def rescaled_acceleration(exp, eps: float, k: int, xi, u_hat):
    """eps^(-2 beta) lambda_n(xi, eps^beta u_hat)."""
    view = _view(exp, eps)
    b = eps ** beta(k)
    return np.array([view.lam(x, b * uh) for x, uh in zip(np.atleast_1d(xi), np.atleast_1d(u_hat))]) / b ** 2


def centered_rates(times, values):
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if len(times) < 3:
        raise ValueError("need at least three snapshots")
    dt = np.diff(times)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(1.0, abs(dt[0])):
        raise ValueError("snapshots must be uniformly spaced")
    return (values[2:] - values[:-2]) / (2 * dt[0])


def modulation_residuals(decomps, times, exp, eps: float):
    """|xi' - u| and |u' - lambda_n| at interior snapshots from centered differences."""
    view = _view(exp, eps)
    xi = np.array([d.xi for d in decomps])
    u = np.array([d.u for d in decomps])
    xi_dot = centered_rates(times, xi)
    u_dot = centered_rates(times, u)
    lam = np.array([view.lam(a, b) for a, b in zip(xi[1:-1], u[1:-1])])
    return np.abs(xi_dot - u[1:-1]), np.abs(u_dot - lam)


def modulation_velocities(v, w, p: SolitonParams, view: VirtualManifold, pt=None):
    """(xi' - u, u' - lambda) implied by keeping N = 0 along the flow.

    Differentiating N_i = Omega(t_i, V) along the PDE gives the 2x2 system
    (Omega_ij - M_ij) a_j = P_i with M_ij = Omega(d_j t_i, V).
    """
    g = view.grid
    pt = view.point(p) if pt is None else pt
    V = FieldPair(np.asarray(v, float), np.asarray(w, float))
    d11, d12, d22 = view.second_tangents(p)
    th_n = pt.state.theta
    R1, R2 = view.defect(p)
    Q = 0.5 * np.sin(th_n) * v ** 2 + cubic_remainder(th_n, v)
    AV = FieldPair(V.psi + R1, derivative(v, g, 2) - np.cos(th_n) * v + Q + R2)
    t = (pt.t1, pt.t2)
    dt = ((d11, d12), (d12, d22))
    Om = np.array([[symplectic_form(t[i], t[j], g) for j in range(2)] for i in range(2)])
    M = np.array([[symplectic_form(dt[i][j], V, g) for j in range(2)] for i in range(2)])
    P = np.array([p.u * M[i, 0] + pt.lam * M[i, 1] + symplectic_form(t[i], AV, g) for i in range(2)])
    return np.linalg.solve(Om - M, P)


def cubic_remainder(theta_n, v):
    """R(v) = -sin(theta_n + v) + sin theta_n + cos theta_n v - sin theta_n v^2 / 2, of order v^3."""
    return -np.sin(theta_n + v) + np.sin(theta_n) + np.cos(theta_n) * v - 0.5 * np.sin(theta_n) * v ** 2


# ---------------------------------------------------------------------------
# Gronwall / Duhamel comparison in rescaled time

def integrate_rescaled(xi0, uh0, accel, T: float, ds: float, e1=None, e2=None) -> ParamSeries:
    """xi' = u_hat + e1(s), u_hat' = accel(xi, u_hat) + e2(s), by RK4 in s."""
    e1 = (lambda s: 0.0) if e1 is None else e1
    e2 = (lambda s: 0.0) if e2 is None else e2

    def f(y):
        s = y[2]
        return np.array([y[1] + e1(s), accel(y[0], y[1]) + e2(s), 1.0])

    s, ys = rk4(f, np.array([xi0, uh0, 0.0]), T, ds)
    return ParamSeries(s, ys[:, 0], ys[:, 1])


def lipschitz_constant(exp, eps: float, k: int, n_xi: int = 9, n_u: int = 9) -> float:
    """C = max(1, sup |d_xi lambda| / eps^(2 beta), sup |d_u lambda| / eps^beta) over the strip."""
    view = _view(exp, eps)
    if view.classical:
        return 1.0
    xb, (lo, hi) = view.strip()
    b = eps ** beta(k)
    c = 1.0
    for x in np.linspace(-xb, xb, n_xi):
        for u in np.linspace(lo, hi, n_u):
            _, lx, lu = view.lam_with_derivatives(x, u)
            c = max(c, abs(lx) / b ** 2, abs(lu) / b)
    return float(c)


@dataclass
class GronwallReport:
    dxi: float
    du: float
    bound: float
    C: float
    T: float

    @property
    def ok(self) -> bool:
        return self.dxi <= self.bound and self.du <= self.bound


def gronwall_compare(tilde: ParamSeries, exact: ParamSeries, defect_sup: float, C: float) -> GronwallReport:
    """Observed deviations against sqrt(2) T exp(2 C T) sup max(|e1|, |e2|)."""
    if len(tilde.times) != len(exact.times) or np.max(np.abs(tilde.times - exact.times)) > 1e-12:
        raise ValueError("series are on different grids")
    T = float(exact.times[-1] - exact.times[0])
    bound = np.sqrt(2.0) * T * np.exp(2.0 * C * T) * defect_sup
    return GronwallReport(float(np.max(np.abs(tilde.xi - exact.xi))), float(np.max(np.abs(tilde.u - exact.u))),
                          float(bound), float(C), T)


def parameter_error(projected: ParamSeries, exp, eps: float, n: int, k: int, ds: float | None = None):
    """Sup deviations of projected parameters from the exact rescaled ODE started at the same point."""
    if len(projected.times) < 2:
        raise ValueError("series too short")
    b = eps ** beta(k)
    t0 = projected.times[0]
    S = (projected.times[-1] - t0) * b
    ds = S / 2000 if ds is None else ds
    accel = lambda x, uh: rescaled_acceleration(exp, eps, k, [x], [uh])[0]
    ref = integrate_rescaled(projected.xi[0], projected.u[0] / b, accel, S, ds)
    s = (projected.times - t0) * b
    xh = CubicSpline(ref.times, ref.xi)(s)
    uh = CubicSpline(ref.times, ref.u)(s)
    return float(np.max(np.abs(projected.xi - xh))), float(np.max(np.abs(projected.u - b * uh)))
