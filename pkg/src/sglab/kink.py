"""Closed-form kink data: profile, boosted soliton, tangent vectors, soliton mass."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import FieldPair, Grid1D, integrate, make_grid


@dataclass(frozen=True)
class SolitonParams:
    xi: float
    u: float

    def __post_init__(self):
        if not abs(self.u) < 1.0:
            raise ValueError(f"|u| must be < 1, got {self.u}")


def kink_profile(Z):
    """Return theta_K, theta_K' and theta_K'' at Z (closed forms)."""
    Z = np.asarray(Z, dtype=float)
    s = 1.0 / np.cosh(Z)
    th = 4.0 * np.arctan(np.exp(-np.abs(Z)))
    th = np.where(Z > 0, 2.0 * np.pi - th, th)
    return th, 2.0 * s, -2.0 * s * np.tanh(Z)


def cos_kink(Z):
    """cos(theta_K(Z)) = 1 - 2 sech^2 Z."""
    return 1.0 - 2.0 / np.cosh(np.asarray(Z, dtype=float)) ** 2


def lorentz_gamma(u: float) -> float:
    u = float(u)
    if not abs(u) < 1.0:
        raise ValueError(f"|u| must be < 1, got {u}")
    return 1.0 / np.sqrt(1.0 - u * u)


def dgamma(u: float) -> float:
    return u * lorentz_gamma(u) ** 3


def soliton_pair(p: SolitonParams, g: Grid1D) -> FieldPair:
    gam = lorentz_gamma(p.u)
    th, dth, _ = kink_profile(gam * (g.x - p.xi))
    return FieldPair(th, -p.u * gam * dth)


def tangent_vectors(p: SolitonParams, g: Grid1D) -> tuple[FieldPair, FieldPair]:
    """Closed-form (d/dxi, d/du) of the boosted soliton."""
    u = p.u
    gam = lorentz_gamma(u)
    gp = dgamma(u)
    y = g.x - p.xi
    _, d1, d2 = kink_profile(gam * y)
    t1 = FieldPair(-gam * d1, u * gam * gam * d2)
    # d/du of theta_K(gam y) and of -u gam theta_K'(gam y)
    t2 = FieldPair(gp * y * d1, -(gam + u * gp) * d1 - u * gam * gp * y * d2)
    return t1, t2


@lru_cache(maxsize=None)
def _mass_on(half_width: float, n_points: int) -> tuple[float, float]:
    g = make_grid(half_width, n_points)
    _, d1, d2 = kink_profile(g.x)
    return float(integrate(d1 ** 2, g)), float(integrate(d2 ** 2, g))


def soliton_mass(g: Grid1D | None = None) -> float:
    """m = int (theta_K')^2 = 8, by quadrature on the active grid."""
    if g is None:
        return _mass_on(40.0, 4096)[0]
    return _mass_on(g.half_width, g.n_points)[0]


def second_moment(g: Grid1D | None = None) -> float:
    """int (theta_K'')^2 = 8/3."""
    if g is None:
        return _mass_on(40.0, 4096)[1]
    return _mass_on(g.half_width, g.n_points)[1]
