"""Grids, finite differences, quadrature, weighted norms and the symplectic form."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
DIRICHLET = "dirichlet_decay"

# 4th-order central stencils
_C1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_C2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0

# one-sided 4th-order stencils for the first two nodes (exact on quartics)
_B1 = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0],
                [-3.0, -10.0, 18.0, -6.0, 1.0]]) / 12.0
_B2 = np.array([[45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
                [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]]) / 12.0


@dataclass(frozen=True)
class Grid1D:
    half_width: float
    n_points: int
    boundary: str = DIRICHLET

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if int(self.n_points) != self.n_points or self.n_points < 16:
            raise ValueError("n_points must be an integer >= 16")
        if self.boundary not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def spacing(self) -> float:
        if self.boundary == PERIODIC:
            return 2.0 * self.half_width / self.n_points
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.half_width + self.spacing * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        if self.boundary == DIRICHLET:
            w[0] = w[-1] = 0.5 * self.spacing
        w.setflags(write=False)
        return w

    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies matching numpy's FFT ordering (periodic grids)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)


@dataclass(frozen=True)
class Grid2D:
    xi_grid: Grid1D
    x_grid: Grid1D


@dataclass(frozen=True)
class WeightSpec:
    k: int = 0
    alpha: int = 0

    def __post_init__(self):
        if self.k not in (0, 1, 2, 3) or self.alpha not in (0, 1):
            raise ValueError(f"unsupported weight spec k={self.k}, alpha={self.alpha}")


@dataclass(frozen=True)
class FieldPair:
    theta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta)
        ps = np.asarray(self.psi)
        if th.shape != ps.shape:
            raise ValueError("theta and psi must have the same shape")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(ps))):
            raise ValueError("non-finite entries in field pair")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "psi", ps)

    def __add__(self, other: FieldPair) -> FieldPair:
        return FieldPair(self.theta + other.theta, self.psi + other.psi)

    def __sub__(self, other: FieldPair) -> FieldPair:
        return FieldPair(self.theta - other.theta, self.psi - other.psi)

    def __mul__(self, c: float) -> FieldPair:
        return FieldPair(c * self.theta, c * self.psi)

    __rmul__ = __mul__


def make_grid(half_width: float, n_points: int, boundary: str = DIRICHLET) -> Grid1D:
    return Grid1D(float(half_width), int(n_points), boundary)


def _check(f, g: Grid1D) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[-1] != g.n_points:
        raise ValueError(f"field has {f.shape[-1]} samples, grid has {g.n_points}")
    return f


def derivative(f, g: Grid1D, order: int = 1) -> np.ndarray:
    """4th-order finite-difference derivative along the last axis."""
    f = _check(f, g)
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    h = g.spacing
    scale = h if order == 1 else h * h

    def stencil(m2, m1, c0, p1, p2):
        # differences first, so constants cancel exactly
        if order == 1:
            return ((m2 - p2) + 8.0 * (p1 - m1)) / 12.0
        return (16.0 * ((m1 - c0) + (p1 - c0)) - ((m2 - c0) + (p2 - c0))) / 12.0

    if g.boundary == PERIODIC:
        sh = [np.roll(f, 2 - j, axis=-1) for j in range(5)]
        return stencil(*sh) / scale
    out = np.zeros(f.shape, dtype=np.result_type(f, float))
    n = g.n_points
    out[..., 2:n - 2] = stencil(*(f[..., j:n - 4 + j] for j in range(5)))
    b = _B1 if order == 1 else _B2
    w = b.shape[1]
    for i in range(2):
        out[..., i] = f[..., :w] @ b[i]
        out[..., n - 1 - i] = (f[..., n - w:][..., ::-1] @ b[i]) * (-1.0 if order == 1 else 1.0)
    return out / scale


def diff_matrix(g: Grid1D, order: int = 2, ghost: str = "zero") -> sp.csr_matrix:
    """Banded 4th-order central difference matrix.

    For dirichlet_decay grids the stencil is closed with ghost values that are
    either zero (decaying fields, keeps the matrix symmetric) or copies of the
    edge value (fields tending to a constant, such as the kink angle).
    """
    n = g.n_points
    h = g.spacing
    c = _C1 if order == 1 else _C2
    scale = h if order == 1 else h * h
    offsets = [-2, -1, 0, 1, 2]
    if g.boundary == PERIODIC:
        m = sp.lil_matrix((n, n))
        for i in range(n):
            for j, off in enumerate(offsets):
                if c[j] != 0.0:
                    m[i, (i + off) % n] += c[j]
        return (m.tocsr() / scale)
    m = sp.diags([np.full(n - abs(o), c[j]) for j, o in enumerate(offsets)], offsets,
                 shape=(n, n), format="lil")
    if ghost == "edge":
        # ghost nodes -1, -2 (and n, n+1) take the edge value
        m[0, 0] += c[0] + c[1]
        m[1, 0] += c[0]
        m[n - 1, n - 1] += c[3] + c[4]
        m[n - 2, n - 1] += c[4]
    elif ghost != "zero":
        raise ValueError(f"unknown ghost rule {ghost!r}")
    return m.tocsr() / scale


def integrate(f, g: Grid1D):
    """Trapezoid rule along the last axis."""
    f = _check(f, g)
    return f @ g.weights


def inner(a, b, g: Grid1D):
    return integrate(np.conj(a) * b, g)


def sobolev_norm(f, g: Grid1D, w: WeightSpec = WeightSpec()) -> float:
    if not isinstance(w, WeightSpec):
        w = WeightSpec(*w)
    f = _check(f, g)
    rho = (1.0 + g.x ** 2) ** (0.5 * w.alpha)
    total = 0.0
    d = f
    for j in range(w.k + 1):
        if j > 0:
            d = derivative(d, g, 1)
        total += integrate(np.abs(rho * d) ** 2, g)
    return float(np.sqrt(total))


def h1_norm_sq(f, g: Grid1D) -> float:
    return float(integrate(np.abs(f) ** 2 + np.abs(derivative(f, g, 1)) ** 2, g))


def symplectic_form(a: FieldPair, b: FieldPair, g: Grid1D) -> float:
    """Omega(a, b) = <a, J b> with J = [[0, -1], [1, 0]], i.e. int psi_a theta_b - theta_a psi_b."""
    if a.theta.shape != b.theta.shape:
        raise ValueError("field pairs live on different grids")
    _check(a.theta, g)
    return integrate(a.psi * b.theta - a.theta * b.psi, g)
