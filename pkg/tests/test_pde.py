import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sglab.kink import SolitonParams, soliton_pair, tangent_vectors
from sglab.numerics import integrate, make_grid
from sglab.pde import CFLError, SimulationAborted, Stepper, functionals, kink_center, make_state, rhs, simulate, step


def _kink(g, xi=0.0, u=0.0, force=None):
    s = soliton_pair(SolitonParams(xi, u), g)
    return make_state(s.theta, s.psi, g, force)


def _l2(a, b, g):
    return float(np.sqrt(integrate((a.theta - b.theta) ** 2 + (a.psi - b.psi) ** 2, g)))


def test_rhs_examples(grid):
    r = rhs(_kink(grid))
    assert not np.any(r.theta)
    assert np.max(np.abs(r.psi)) < 1e-6
    z = np.zeros(grid.n_points)
    r = rhs(make_state(z, z, grid))
    assert not np.any(r.theta) and not np.any(r.psi)


def test_rhs_travelling_identity(grid):
    p = SolitonParams(0.5, 0.3)
    r = rhs(_kink(grid, p.xi, p.u))
    t1, _ = tangent_vectors(p, grid)
    # d/dt of the profile moving with xi' = u is u d_xi
    assert np.max(np.abs(r.theta - p.u * t1.theta)) < 1e-12
    assert np.max(np.abs(r.psi - p.u * t1.psi)) < 1e-6


def test_vacuum_fixed_point(grid):
    z = np.zeros(grid.n_points)
    s = step(make_state(z, z, grid), 0.005)
    assert not np.any(s.fields.theta) and not np.any(s.fields.psi)
    assert s.t == 0.005


def test_reversibility(grid):
    f = 0.05 / np.cosh(grid.x)
    s0 = _kink(grid, 0.0, 0.3, f)
    fwd = Stepper(grid, 0.005)
    bwd = Stepper(grid, -0.005)
    s = bwd(fwd(s0))
    assert np.max(np.abs(s.fields.theta - s0.fields.theta)) < 1e-12
    assert np.max(np.abs(s.fields.psi - s0.fields.psi)) < 1e-12
    for _ in range(20):
        s = fwd(s)
    for _ in range(20):
        s = bwd(s)
    # round-off accumulates on theta ~ 2 pi
    assert np.max(np.abs(s.fields.theta - s0.fields.theta)) < 1e-12 * 2 * np.pi


def test_half_steps_local_error():
    g = make_grid(40.0, 2048)
    s0 = _kink(g, 0.0, 0.4)
    errs = []
    for dt in (0.016, 0.008):
        full = step(s0, dt)
        half = step(step(s0, dt / 2), dt / 2)
        errs.append(_l2(full.fields, half.fields, g))
    assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.2)


def test_cfl():
    g = make_grid(40.0, 4096)
    with pytest.raises(CFLError):
        Stepper(g, g.spacing)
    Stepper(g, 0.5 * g.spacing)


def test_zero_length_run(grid):
    s0 = _kink(grid, 1.0, 0.1)
    tr = simulate(s0, 0.0, 0.005, [lambda s: {"t": s.t}])
    assert tr.final is s0 and tr.times == [0.0]


def test_travelling_kink_fine_grid():
    g = make_grid(40.0, 8192)
    u, T = 0.2, 10.0
    tr = simulate(_kink(g, -2.0, u), T, 1e-3)
    ex = soliton_pair(SolitonParams(-2.0 + u * T, u), g)
    assert _l2(tr.final.fields, ex, g) < 1e-4
    assert kink_center(tr.final.fields.theta, g) == pytest.approx(-2.0 + u * T, abs=1e-3)


def test_second_order_in_time():
    g = make_grid(40.0, 2048)
    s0 = _kink(g, 0.0, 0.3, 0.05 / np.cosh(g.x))
    T = 4.0
    ref = simulate(s0, T, 0.001, monitor=False).final.fields
    e = [_l2(simulate(s0, T, dt, monitor=False).final.fields, ref, g) for dt in (0.016, 0.008)]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.15)


def test_conservation_unforced(grid):
    s0 = _kink(grid, -5.0, 0.2)
    rec = lambda s: dict(zip(("H", "Pi"), functionals(s)[:2]))
    tr = simulate(s0, 50.0, 0.002, [rec], stride=500)
    H = np.array([r["H"] for r in tr.records])
    P = np.array([r["Pi"] for r in tr.records])
    assert np.max(np.abs(H - H[0])) / H[0] < 1e-6
    assert np.max(np.abs(P - P[0])) / abs(P[0]) < 1e-6


def test_conservation_forced(grid):
    f = 0.02 / np.cosh(grid.x)
    tr = simulate(_kink(grid, 0.0, 0.0, f), 50.0, 0.002, [lambda s: {"He": functionals(s)[2]}], stride=500)
    He = np.array([r["He"] for r in tr.records])
    assert np.max(np.abs(He - He[0])) / abs(He[0]) < 1e-5


def test_functionals_examples(grid):
    z = np.zeros(grid.n_points)
    assert functionals(make_state(z, z, grid)) == (0.0, 0.0, 0.0)
    # the stencil error in (d_x theta)^2 is 2e-8 at 4096 points and 1e-9 at 8192
    H, Pi, _ = functionals(_kink(make_grid(40.0, 8192)))
    assert H == pytest.approx(8.0, abs=1e-8)
    assert Pi == 0.0


def test_boundary_monitor(grid):
    with pytest.raises(SimulationAborted):
        simulate(_kink(grid, 28.0, 0.5), 10.0, 0.005, stride=100)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-3, 3))
def test_boosted_energy_property(u, xi):
    g = make_grid(40.0, 8192)
    H, Pi, _ = functionals(_kink(g, xi, u))
    gam = 1 / np.sqrt(1 - u * u)
    assert H == pytest.approx(8 * gam, rel=1e-8)
    assert Pi == pytest.approx(-8 * gam * u, abs=1e-8)
