"""Discretized linear operators: L, bordered systems, the 2-D operator solved mode by mode."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kink import SolitonParams, cos_kink, kink_profile, lorentz_gamma, tangent_vectors
from .numerics import PERIODIC, Grid1D, Grid2D, diff_matrix

log = logging.getLogger(__name__)


ALIASING_TOL = 1e-6


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class BandedOperator:
    matrix: sp.csr_matrix
    grid: Grid1D
    bandwidth: int = 2

    def apply(self, f):
        return self.matrix @ f

    def banded_lower(self) -> np.ndarray:
        """Lower banded storage expected by scipy.linalg.eig_banded."""
        n = self.grid.n_points
        dense_diags = np.zeros((self.bandwidth + 1, n))
        m = self.matrix.todia() if sp.issparse(self.matrix) else sp.dia_matrix(self.matrix)
        for k in range(self.bandwidth + 1):
            d = self.matrix.diagonal(-k)
            dense_diags[k, : n - k] = d
        return dense_diags


@dataclass(frozen=True)
class BorderedSystem:
    core: sp.spmatrix
    border_column: np.ndarray
    constraint_row: np.ndarray

    def __post_init__(self):
        n = self.core.shape[0]
        if self.core.shape != (n, n) or self.border_column.shape != (n,) or self.constraint_row.shape != (n,):
            raise ValueError("inconsistent bordered-system dimensions")
        if not (np.any(self.border_column) and np.any(self.constraint_row)):
            raise ValueError("border column and constraint row must be nonzero")

    def matrix(self) -> sp.csc_matrix:
        b = sp.csc_matrix(self.border_column.reshape(-1, 1))
        c = sp.csr_matrix(self.constraint_row.reshape(1, -1))
        return sp.bmat([[self.core, b], [c, None]], format="csc")

    def factorize(self) -> "BorderedFactor":
        return BorderedFactor(self)


class BorderedFactor:
    """Sparse LU of the (n+1)x(n+1) bordered matrix, reusable across right-hand sides."""

    def __init__(self, sys: BorderedSystem):
        self.sys = sys
        self.n = sys.core.shape[0]
        mat = sys.matrix()
        self._mat = mat
        try:
            self.lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc

    def solve(self, rhs, constraint_value=0.0):
        rhs = np.asarray(rhs)
        full = np.concatenate([rhs, np.atleast_1d(constraint_value).astype(rhs.dtype)])
        z = self.lu.solve(full)
        if not np.all(np.isfinite(z)):
            raise SingularSystemError("non-finite bordered solution")
        return z[: self.n], z[self.n]

    def solve_adjoint(self, rhs):
        z = self.lu.solve(np.asarray(rhs), trans="H")
        return z


def build_L(p: SolitonParams, g: Grid1D) -> BandedOperator:
    """-(1-u^2) d_x^2 + cos(theta_K(gamma (x - xi))), symmetric and pentadiagonal."""
    gam = lorentz_gamma(p.u)
    d2 = diff_matrix(g, 2, ghost="zero")
    pot = cos_kink(gam * (g.x - p.xi))
    m = (-(1.0 - p.u ** 2) * d2 + sp.diags(pot)).tocsr()
    return BandedOperator(m, g, 2)


def free_operator(g: Grid1D) -> BandedOperator:
    d2 = diff_matrix(g, 2, ghost="zero")
    return BandedOperator((-d2 + sp.identity(g.n_points)).tocsr(), g, 2)


def solve_bordered(sys: BorderedSystem, rhs):
    """Solve core theta + lam border = rhs with <constraint, theta> = 0; returns (theta, lam)."""
    theta, lam = sys.factorize().solve(np.asarray(rhs))
    res = sys.core @ theta + lam * sys.border_column - rhs
    scale = max(np.linalg.norm(rhs), 1e-300)
    if np.linalg.norm(res) > 1e-8 * scale:
        raise SingularSystemError(f"bordered solve residual {np.linalg.norm(res) / scale:.2e}")
    return theta, lam


def kernel_bordered_system(p: SolitonParams, g: Grid1D) -> BorderedSystem:
    """L with border -theta_K'(gamma(x-xi)) and constraint against the same kernel function."""
    gam = lorentz_gamma(p.u)
    _, d1, _ = kink_profile(gam * (g.x - p.xi))
    return BorderedSystem(build_L(p, g).matrix, -d1, g.weights * d1)


def eigen_spectrum(op: BandedOperator, n_eigs: int = 2, return_vectors: bool = False):
    n = op.grid.n_points
    if not sp.issparse(op.matrix):
        raise TypeError("expected a sparse banded operator")
    asym = abs(op.matrix - op.matrix.T).max()
    if asym > 1e-12 * max(abs(op.matrix).max(), 1.0):
        raise ValueError("operator is not symmetric")
    try:
        if n <= 512 or n_eigs >= n // 4:
            vals, vecs = sla.eig_banded(op.banded_lower(), lower=True, select="i",
                                        select_range=(0, n_eigs - 1))
        else:
            # L is bounded below by min(potential); shift-invert just under it
            shift = float(op.matrix.diagonal().min()) - 1.0
            # fixed start vector keeps the result reproducible across processes
            v0 = np.ones(op.matrix.shape[0])
            vals, vecs = spla.eigsh(op.matrix.tocsc(), k=n_eigs, sigma=min(shift, -0.5), which="LM", v0=v0)
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
    except (sla.LinAlgError, spla.ArpackNoConvergence) as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    if return_vectors:
        return vals, vecs
    return list(vals)


# ---------------------------------------------------------------------------
# 2-D operator in co-moving coordinates y = x - xi, Fourier in xi

def xi_symbol(kappa, dxi: float, scheme: str = "spectral"):
    """Eigenvalue of d/dxi on the periodic xi-grid divided by i."""
    kappa = np.asarray(kappa, dtype=float)
    if scheme == "spectral":
        return kappa
    if scheme == "fd4":
        return (8.0 * np.sin(kappa * dxi) - np.sin(2.0 * kappa * dxi)) / (6.0 * dxi)
    raise ValueError(f"unknown xi scheme {scheme!r}")


def mode_wavenumbers(xi_grid: Grid1D) -> np.ndarray:
    if xi_grid.boundary != PERIODIC:
        raise ValueError("the xi-grid must be periodic")
    k = xi_grid.wavenumbers()
    m = xi_grid.n_points
    if m % 2 == 0:
        k[m // 2] = 0.0  # Nyquist mode: the derivative of a real sampled field has no content there
    return k


@dataclass(frozen=True)
class ModeProblem:
    freq: int
    kappa: float
    u: float
    system: BorderedSystem
    grid: Grid1D

    def apply(self, theta, psi, lam):
        n = self.grid.n_points
        z = np.concatenate([theta, psi])
        out = self.system.core @ z + lam * self.system.border_column
        return out[:n], out[n:]

    def constraint(self, theta, psi):
        n = self.grid.n_points
        return self.system.constraint_row[:n] @ theta + self.system.constraint_row[n:] @ psi


@lru_cache(maxsize=64)
def _mode_parts(u: float, g: Grid1D):
    gam = lorentz_gamma(u)
    y = g.x
    d1m = diff_matrix(g, 1, ghost="zero")
    d2m = diff_matrix(g, 2, ghost="zero")
    pot = sp.diags(cos_kink(gam * y))
    _, kd1, kd2 = kink_profile(gam * y)
    t1, t2 = tangent_vectors(SolitonParams(0.0, u), g)
    border = np.concatenate([t2.theta, t2.psi])
    row = np.concatenate([g.weights * kd1, -u * gam * g.weights * kd2])
    return d1m, d2m, pot, border, row


def mode_core(u: float, g: Grid1D, sym: float) -> sp.csc_matrix:
    """Core of the per-mode operator with d/dxi -> i*sym."""
    d1m, d2m, pot, _, _ = _mode_parts(float(u), g)
    n = g.n_points
    eye = sp.identity(n, format="csr")
    adv = u * (1j * sym * eye - d1m)
    return sp.bmat([[adv, -eye], [-d2m + pot, adv]], format="csc")


def build_frakM_mode(freq: int, u: float, g: Grid1D, xi_grid: Grid1D,
                     scheme: str = "spectral", u_star: float | None = None) -> ModeProblem:
    if u_star is not None and not abs(u) < u_star:
        raise ValueError(f"|u| = {abs(u)} exceeds the invertibility threshold {u_star}")
    kappa = mode_wavenumbers(xi_grid)[freq]
    sym = float(xi_symbol(kappa, xi_grid.spacing, scheme))
    _, _, _, border, row = _mode_parts(float(u), g)
    core = mode_core(u, g, sym)
    return ModeProblem(int(freq), float(kappa), float(u), BorderedSystem(core, border.astype(complex), row.astype(complex)), g)


def comoving_grid2d(x_grid: Grid1D, n_xi: int, stride: int) -> Grid2D:
    """Periodic xi-grid whose spacing is an integer multiple of the x-spacing."""
    dxi = stride * x_grid.spacing
    xi = Grid1D(0.5 * n_xi * dxi, n_xi, PERIODIC)
    return Grid2D(xi, x_grid)


def to_comoving(f_lab, g2: Grid2D, stride: int):
    """f(xi_m, x) on the lab grid -> c(xi_m, y) = f(xi_m, y + xi_m), zero outside."""
    return _shift_rows(f_lab, g2, stride, +1)


def to_lab(c, g2: Grid2D, stride: int):
    return _shift_rows(c, g2, stride, -1)


def _shift_rows(f, g2: Grid2D, stride: int, sign: int):
    xi = g2.xi_grid.x
    shifts = np.rint(xi / g2.x_grid.spacing).astype(int)
    if np.max(np.abs(shifts * g2.x_grid.spacing - xi)) > 1e-9 * g2.x_grid.spacing:
        raise ValueError("xi-nodes are not commensurate with the x-grid")
    out = np.zeros_like(f)
    n = f.shape[-1]
    for m, s in enumerate(sign * shifts):
        if s >= 0:
            out[m, : n - s] = f[m, s:]
        else:
            out[m, -s:] = f[m, : n + s]
    return out


@dataclass
class FrakMSolution:
    theta: np.ndarray
    psi: np.ndarray
    lam: np.ndarray
    mode_residuals: np.ndarray


class FrakMSolver:
    """Factorized mode problems for one velocity, reused across right-hand sides."""

    def __init__(self, u: float, g2: Grid2D, scheme: str = "spectral", u_star: float | None = None,
                 workers: int = 1):
        self.u = float(u)
        self.g2 = g2
        self.scheme = scheme
        m = g2.xi_grid.n_points
        self.n_modes = m // 2 + 1  # real data: only non-negative frequencies needed
        self.modes = [build_frakM_mode(j, u, g2.x_grid, g2.xi_grid, scheme, u_star) for j in range(self.n_modes)]
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(workers) as ex:
                self.factors = list(ex.map(lambda mp: mp.system.factorize(), self.modes))
        else:
            self.factors = [mp.system.factorize() for mp in self.modes]

    def solve(self, rhs_theta, rhs_psi, check_aliasing: bool = True) -> FrakMSolution:
        """rhs arrays are indexed [xi, y] in co-moving coordinates."""
        n = self.g2.x_grid.n_points
        m = self.g2.xi_grid.n_points
        ft = np.fft.rfft(rhs_theta, axis=0)
        fp = np.fft.rfft(rhs_psi, axis=0)
        if check_aliasing:
            energy = np.sum(np.abs(ft) ** 2 + np.abs(fp) ** 2, axis=1)
            top = energy[int(0.9 * self.n_modes):].sum()
            if energy.sum() > 0 and top > ALIASING_TOL * energy.sum():
                log.info("rhs carries %.2e of its energy in the top 10%% of xi-frequencies", top / energy.sum())
        th = np.zeros((self.n_modes, n), complex)
        ps = np.zeros((self.n_modes, n), complex)
        lam = np.zeros(self.n_modes, complex)
        res = np.zeros(self.n_modes)
        for j, (mp, fac) in enumerate(zip(self.modes, self.factors)):
            b = np.concatenate([ft[j], fp[j]])
            if not np.any(b):
                continue
            z, lj = fac.solve(b)
            th[j], ps[j], lam[j] = z[:n], z[n:], lj
            r = mp.system.core @ z + lj * mp.system.border_column - b
            res[j] = np.linalg.norm(r) / np.linalg.norm(b)
        return FrakMSolution(np.fft.irfft(th, m, axis=0), np.fft.irfft(ps, m, axis=0),
                             np.fft.irfft(lam, m), res)


def solve_frakM(u: float, rhs_theta, rhs_psi, g2: Grid2D, scheme: str = "spectral",
                u_star: float | None = None) -> FrakMSolution:
    return FrakMSolver(u, g2, scheme, u_star).solve(rhs_theta, rhs_psi)


def xi_derivative(f, xi_grid: Grid1D, scheme: str = "spectral"):
    """d/dxi at fixed y along axis 0 of a periodic-in-xi field."""
    k = mode_wavenumbers(xi_grid)[: f.shape[0] // 2 + 1]
    sym = xi_symbol(k, xi_grid.spacing, scheme)
    fh = np.fft.rfft(f, axis=0)
    return np.fft.irfft(1j * sym[:, None] * fh if f.ndim == 2 else 1j * sym * fh, f.shape[0], axis=0)


def apply_frakM(u: float, theta, psi, lam, g2: Grid2D, scheme: str = "spectral"):
    """Apply the 2-D operator in co-moving coordinates (arrays indexed [xi, y])."""
    g = g2.x_grid
    d1m, d2m, pot, border, _ = _mode_parts(float(u), g)
    n = g.n_points
    th_xi = xi_derivative(theta, g2.xi_grid, scheme)
    ps_xi = xi_derivative(psi, g2.xi_grid, scheme)
    th_y = (d1m @ theta.T).T
    ps_y = (d1m @ psi.T).T
    th_yy = (d2m @ theta.T).T
    r1 = u * (th_xi - th_y) - psi + lam[:, None] * border[None, :n]
    r2 = -th_yy + pot.diagonal()[None, :] * theta + u * (ps_xi - ps_y) + lam[:, None] * border[None, n:]
    return r1, r2


def constraint_values(u: float, theta, psi, g: Grid1D):
    _, _, _, _, row = _mode_parts(float(u), g)
    n = g.n_points
    return theta @ row[:n] + psi @ row[n:]


def direct_frakM_matrix(u: float, g2: Grid2D, scheme: str = "fd4") -> sp.csc_matrix:
    """Assemble the full 2-D bordered operator as one sparse matrix (oracle for the mode solve).

    Unknown ordering is y-major: for each y-node the 2*n_xi values (theta, psi), then n_xi values of lambda.
    """
    g = g2.x_grid
    xg = g2.xi_grid
    n, m = g.n_points, xg.n_points
    d1m, d2m, pot, border, row = _mode_parts(float(u), g)
    if scheme == "fd4":
        dxi = diff_matrix(xg, 1)
    elif scheme == "spectral":
        k = mode_wavenumbers(xg)
        eye = np.eye(m)
        dxi = sp.csr_matrix(np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0)))
    else:
        raise ValueError(scheme)
    Im = sp.identity(m, format="csr")
    In = sp.identity(n, format="csr")
    # operators on vec(f) with f indexed [y, xi] (y-major)
    Dxi = sp.kron(In, dxi)
    Dy = sp.kron(d1m, Im)
    Dyy = sp.kron(d2m, Im)
    V = sp.kron(pot, Im)
    Id = sp.identity(n * m, format="csr")
    adv = u * (Dxi - Dy)
    # interleave theta/psi per y-node via a permutation after block assembly
    A = sp.bmat([[adv, -Id], [-Dyy + V, adv]], format="csr")
    B = sp.bmat([[sp.kron(sp.csr_matrix(border[:n].reshape(-1, 1)), Im)],
                 [sp.kron(sp.csr_matrix(border[n:].reshape(-1, 1)), Im)]], format="csr")
    C = sp.bmat([[sp.kron(sp.csr_matrix(row[:n].reshape(1, -1)), Im),
                  sp.kron(sp.csr_matrix(row[n:].reshape(1, -1)), Im)]], format="csr")
    return sp.bmat([[A, B], [C, None]], format="csc")


def solve_frakM_direct(u: float, rhs_theta, rhs_psi, g2: Grid2D, scheme: str = "fd4") -> FrakMSolution:
    n, m = g2.x_grid.n_points, g2.xi_grid.n_points
    mat = direct_frakM_matrix(u, g2, scheme)
    b = np.concatenate([rhs_theta.T.ravel(), rhs_psi.T.ravel(), np.zeros(m)])
    z = spla.splu(mat, permc_spec="MMD_AT_PLUS_A").solve(b)
    th = z[: n * m].reshape(n, m).T
    ps = z[n * m: 2 * n * m].reshape(n, m).T
    lam = z[2 * n * m:]
    r = mat @ z - b
    return FrakMSolution(th, ps, lam, np.array([np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300)]))


# ---------------------------------------------------------------------------
# invertibility threshold

def bordered_inverse_norm(u: float, g: Grid1D, iters: int = 50, tol: float = 1e-6) -> float:
    """Power iteration for ||M~_u^{-1}|| in quadrature-weighted L2 norms.

    M~_u is the per-mode operator with the xi-derivative removed, i.e. the
    operator that remains after splitting off P = u d/dxi (co-moving frame).
    """
    mp = build_frakM_mode(0, u, g, Grid1D(1.0, 16, PERIODIC))
    fac = mp.system.factorize()
    n = g.n_points
    sw = np.sqrt(np.concatenate([g.weights, g.weights]))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2 * n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        z, lam = fac.solve(x / sw)
        y = np.concatenate([z * sw, [lam]])
        new = np.linalg.norm(y)
        # adjoint: T^H y = W^{-1} (B^{-H} [W y_z; y_lam])[:2n]
        w = fac.solve_adjoint(np.concatenate([y[:-1] * sw, [y[-1]]]))[: 2 * n] / sw
        nx = np.linalg.norm(w)
        x = w / nx
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def von_neumann_product(u: float, g2: Grid2D, scheme: str = "spectral") -> float:
    kmax = float(np.max(np.abs(xi_symbol(mode_wavenumbers(g2.xi_grid), g2.xi_grid.spacing, scheme))))
    if u == 0.0:
        return 0.0
    return abs(u) * kmax * bordered_inverse_norm(u, g2.x_grid)


def estimate_u_star(g2: Grid2D, scheme: str = "spectral", u_max: float = 0.5, n_samples: int = 25,
                    margin: float = 1.1) -> float:
    """Largest u with ||P|| ||M~^{-1}|| < 1/margin."""
    try:
        us = np.linspace(0.0, u_max, n_samples + 1)[1:]
        prev = 0.0
        for u in us:
            if margin * von_neumann_product(u, g2, scheme) >= 1.0:
                lo, hi = prev, u
                for _ in range(20):
                    mid = 0.5 * (lo + hi)
                    if margin * von_neumann_product(mid, g2, scheme) < 1.0:
                        lo = mid
                    else:
                        hi = mid
                return float(lo) if lo > 0 else 0.2
            prev = u
        return float(u_max)
    except (SingularSystemError, RuntimeError, FloatingPointError):
        return 0.2
