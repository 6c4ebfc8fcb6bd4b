import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sglab.decomp import (StripExit, jacobian_N, orthogonality_residual, overlap_coefficients, project)
from sglab.kink import SolitonParams, lorentz_gamma, soliton_mass, soliton_pair, tangent_vectors
from sglab.manifold import VirtualManifold
from sglab.numerics import integrate

EPS = 0.05


@pytest.fixture(scope="module")
def view(exp10):
    return VirtualManifold(exp10, EPS)


def test_on_manifold_residual(view):
    p = SolitonParams(0.4, 0.02)
    s = view.state(p)
    assert np.all(orthogonality_residual(s.theta, s.psi, p, view) == 0.0)


def test_tangent_displacement_classical(grid):
    p = SolitonParams(0.3, 0.2)
    s = soliton_pair(p, grid)
    _, t2 = tangent_vectors(p, grid)
    N = orthogonality_residual(s.theta + t2.theta, s.psi + t2.psi, p, None, 0.0, grid)
    assert abs(N[1]) < 1e-14
    assert N[0] == pytest.approx(-lorentz_gamma(0.2) ** 3 * soliton_mass(grid), rel=1e-10)


def test_residual_linear(view, rng):
    p = SolitonParams(-0.5, -0.01)
    s = view.state(p)
    g = view.grid
    v = np.exp(-(g.x - 1) ** 2)
    w = np.exp(-(g.x + 1) ** 2)
    base = orthogonality_residual(s.theta, s.psi, p, view)
    N1 = orthogonality_residual(s.theta + 1e-3 * v, s.psi + 1e-3 * w, p, view)
    N2 = orthogonality_residual(s.theta + 2e-3 * v, s.psi + 2e-3 * w, p, view)
    assert np.allclose(N2 - base, 2 * (N1 - base), atol=1e-12)


def test_overlap_classical(grid):
    for u in (0.0, 0.3):
        m_n, k_n = overlap_coefficients(SolitonParams(0.0, u), None, 0.0, grid)
        assert k_n == 0.0
        assert m_n == pytest.approx(lorentz_gamma(u) ** 3 * soliton_mass(grid), rel=1e-10)


@pytest.mark.parametrize("xi,u", [(0.0, 0.0), (1.2, 0.03), (-2.0, -0.04)])
def test_overlap_identity_and_sandwich(view, xi, u):
    p = SolitonParams(xi, u)
    m_n, k_n = overlap_coefficients(p, view)
    gm = lorentz_gamma(u) ** 3 * soliton_mass(view.grid)
    assert abs(m_n - gm - k_n) < 1e-8
    assert gm / 2 <= m_n <= 2 * gm


def test_jacobian_classical(grid):
    J = jacobian_N(SolitonParams(0.0, 0.0), None, 0.0, grid)
    assert np.allclose(J, [[0, 8.0], [-8.0, 0]], atol=1e-9)


def test_jacobian_fd(view):
    p = SolitonParams(0.7, 0.015)
    s = view.state(p)
    J = jacobian_N(p, view)
    h = 1e-5
    fd = np.zeros((2, 2))
    for j, d in enumerate(((h, 0), (0, h))):
        a = orthogonality_residual(s.theta, s.psi, SolitonParams(p.xi + d[0], p.u + d[1]), view)
        b = orthogonality_residual(s.theta, s.psi, SolitonParams(p.xi - d[0], p.u - d[1]), view)
        fd[:, j] = (a - b) / (2 * h)
    assert np.max(np.abs(fd - J)) < 1e-5 * np.max(np.abs(J))
    assert abs(fd[0, 0]) < 1e-8 * J[0, 1] and abs(fd[1, 1]) < 1e-8 * J[0, 1] * 1e3
    assert np.linalg.det(J) == pytest.approx(J[0, 1] ** 2)


def test_project_exact(view):
    p = SolitonParams(0.2, 0.01)
    s = view.state(p)
    r = project(s.theta, s.psi, p, view)
    assert r.newton_iters == 0 and not np.any(r.v) and not np.any(r.w)


def test_project_small_perturbation(view):
    p = SolitonParams(0.2, 0.01)
    s = view.state(p)
    g = view.grid
    r = project(s.theta + 1e-3 / np.cosh(g.x), s.psi, p, view)
    assert abs(r.xi - p.xi) < 1e-2 and abs(r.u - p.u) < 1e-2
    nv = np.sqrt(integrate(r.v ** 2, g))
    assert 1e-4 < nv < 1e-2
    assert np.max(np.abs(r.residual)) < 1e-10


def test_project_translation(grid):
    s = soliton_pair(SolitonParams(0.6, 0.1), grid)
    r = project(s.theta, s.psi, SolitonParams(0.5, 0.1), None, 0.0, grid)
    assert r.xi == pytest.approx(0.6, abs=1e-10) and r.u == pytest.approx(0.1, abs=1e-10)
    assert np.max(np.abs(r.v)) < 1e-9 and np.max(np.abs(r.w)) < 1e-9


def test_project_strip_exit(view):
    s = view.state(SolitonParams(0.0, 0.0))
    with pytest.raises(StripExit):
        project(s.theta, s.psi, SolitonParams(0.0, 0.5), view)


def _perturbed(view, xi, u, a, c):
    g = view.grid
    s = view.state(SolitonParams(xi, u))
    return s.theta + a * np.exp(-(g.x - c) ** 2), s.psi + 0.5 * a * np.exp(-(g.x + c) ** 2)


def test_idempotence_and_uniqueness(view):
    th, ps = _perturbed(view, 0.3, 0.01, 2e-3, 0.5)
    r = project(th, ps, SolitonParams(0.3, 0.01), view)
    st_ = view.state(r.params)
    r2 = project(st_.theta, st_.psi, r.params, view)
    assert abs(r2.xi - r.xi) < 1e-10 and abs(r2.u - r.u) < 1e-10
    for d in (-0.5, 0.5):
        r3 = project(th, ps, SolitonParams(0.3 + d, 0.0), view)
        assert abs(r3.xi - r.xi) < 1e-9 and abs(r3.u - r.u) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-0.03, 0.03), st.floats(-3e-3, 3e-3), st.floats(-2, 2))
def test_post_projection_orthogonality(view, xi, u, a, c):
    th, ps = _perturbed(view, xi, u, a, c)
    r = project(th, ps, SolitonParams(xi, u), view)
    assert np.max(np.abs(r.residual)) < 1e-10
    N = orthogonality_residual(th, ps, r.params, view)
    assert np.max(np.abs(N)) < 1e-10
