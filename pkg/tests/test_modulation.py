import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sglab.decomp import project
from sglab.experiment import fit_slope
from sglab.kink import SolitonParams, soliton_pair
from sglab.manifold import VirtualManifold
from sglab.modulation import (ParamSeries, StripExitError, centered_rates, cubic_remainder, gronwall_compare,
                              integrate_exact_ode, integrate_rescaled, lipschitz_constant, modulation_residuals,
                              modulation_velocities, parameter_error, rescale, rescaled_acceleration, rk4,
                              unrescale)
from sglab.pde import make_state, simulate


def test_free_motion(grid):
    view = VirtualManifold(None, 0.0, grid)
    s = integrate_exact_ode(1.0, 0.3, view, 0.0, 10.0, 0.1)
    assert np.max(np.abs(s.xi - (1.0 + 0.3 * s.times))) < 1e-12
    assert np.all(s.u == 0.3)


def test_initial_deceleration(exp10):
    view = VirtualManifold(exp10, 0.05)
    assert view.lam(0.5, 0.0) < 0
    s = integrate_exact_ode(0.5, 0.0, view, 0.05, 2.0, 0.05)
    assert s.u[1] < 0 and np.all(np.diff(s.u[:5]) < 0)


def test_rk4_order():
    f = lambda y: np.array([y[1], -np.sin(y[0])])
    ends = [rk4(f, [1.0, 0.0], 8.0, dt)[1][-1] for dt in (0.2, 0.1, 0.05)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert ratio == pytest.approx(16.0, rel=0.1)


def test_exact_ode_richardson(exp10):
    view = VirtualManifold(exp10, 0.1)
    ends = [integrate_exact_ode(1.0, 0.05, view, 0.1, 2.0, dt).xi[-1] for dt in (0.4, 0.2, 0.1)]
    assert (ends[0] - ends[1]) / (ends[1] - ends[2]) == pytest.approx(16.0, rel=0.15)


def test_strip_exit(exp10):
    view = VirtualManifold(exp10, 0.1)
    with pytest.raises(StripExitError):
        integrate_exact_ode(0.0, 0.05, view, 0.1, 500.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 0.5), st.integers(0, 2), st.lists(st.floats(-1, 1), min_size=3, max_size=8))
def test_rescale_roundtrip(eps, k, vals):
    t = np.arange(len(vals), dtype=float)
    s = ParamSeries(t, np.array(vals), 0.1 * np.array(vals), np.array(vals), np.array(vals))
    r = unrescale(rescale(s, eps, k), eps, k)
    for a, b in ((r.times, s.times), (r.xi, s.xi), (r.u, s.u), (r.xi_dot, s.xi_dot), (r.u_dot, s.u_dot)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_rescaled_initial_velocity():
    for eps in (0.1, 0.02):
        b = eps ** 0.5
        s = ParamSeries([0.0, 1.0], [0.0, 0.0], [b * 0.18, b * 0.18])
        assert rescale(s, eps, 0).u[0] == pytest.approx(0.18, rel=1e-14)


def test_rescaled_acceleration_limit(exp10):
    xi = np.linspace(-3, 3, 13)
    s0 = int(np.argmin(np.abs(exp10.u_samples)))
    view0 = VirtualManifold(exp10, 0.05)
    prof = np.array([view0.lam(x, 0.0) for x in xi]) / 0.05
    diffs = []
    for eps in (0.1, 0.05, 0.025):
        a = rescaled_acceleration(VirtualManifold(exp10, eps), eps, 0, xi, np.full_like(xi, 0.18))
        diffs.append(np.max(np.abs(a - prof)))
    # the u-offset eps^(1/2) u_hat shrinks with eps; the limit profile is approached
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 0.1 * np.max(np.abs(prof))


def test_centered_rates():
    t = np.linspace(0, 1, 11)
    assert np.allclose(centered_rates(t, 3 * t ** 2), 6 * t[1:-1])
    with pytest.raises(ValueError):
        centered_rates([0, 1, 3], [0, 1, 2])
    with pytest.raises(ValueError):
        centered_rates([0, 1], [0, 1])


def test_unperturbed_modulation_floor(grid):
    u = 0.2
    p = SolitonParams(-2.0, u)
    s = soliton_pair(p, grid)
    times, decs = [], []
    guess = [p]

    def obs(st_):
        r = project(st_.fields.theta, st_.fields.psi, guess[0], None, 0.0, grid)
        guess[0] = r.params
        times.append(st_.t)
        decs.append(r)
        return {}

    simulate(make_state(s.theta, s.psi, grid), 2.0, 0.005, [obs], stride=20)
    r1, r2 = modulation_residuals(decs, times, None if False else VirtualManifold(None, 0.0, grid), 0.0)
    assert np.max(r1) < 1e-5 and np.max(r2) < 1e-5


def test_modulation_velocities_match_projection(seeded_run):
    eps, view, times, rows, decs = seeded_run
    xi = np.array([d.xi for d in decs])
    u = np.array([d.u for d in decs])
    a_fd = centered_rates(times, xi)
    b_fd = centered_rates(times, u)
    i = len(decs) // 2
    d = decs[i]
    a, b = modulation_velocities(d.v, d.w, d.params, view)
    lam = view.lam(d.xi, d.u)
    assert a == pytest.approx(a_fd[i - 1] - u[i], rel=0.05, abs=1e-7)
    assert b == pytest.approx(b_fd[i - 1] - lam, rel=0.05, abs=1e-7)


def test_modulation_residual_sizes(seeded_run):
    eps, view, times, rows, decs = seeded_run
    r1, r2 = modulation_residuals(decs, times, view, eps)
    vnorm = max(r[3] + r[4] for r in rows)
    # C (|v| + |w|) eps^(k+1) + C |v|^2 + C eps^(n+k+1) with a modest C
    bound = vnorm * eps + vnorm ** 2 + eps ** 2
    assert np.max(r1) < 10 * bound and np.max(r2) < 10 * bound


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(1e-3, 1e-1))
def test_cubic_remainder_order(th, v):
    a = cubic_remainder(np.array([th]), np.array([v]))[0]
    taylor = np.cos(th) * v ** 3 / 6 - np.sin(th) * v ** 4 / 24
    assert abs(a - taylor) <= v ** 5 / 120 + 4e-15  # round-off of O(1) sines


def test_gronwall_zero_defect():
    acc = lambda x, u: -0.1 * np.sin(x)
    ex = integrate_rescaled(0.5, 0.1, acc, 1.0, 0.01)
    til = integrate_rescaled(0.5, 0.1, acc, 1.0, 0.01, lambda s: 0.0, lambda s: 0.0)
    rep = gronwall_compare(til, ex, 0.0, 1.0)
    assert rep.dxi == 0.0 and rep.du == 0.0


def test_gronwall_constant_defect_closed_form():
    d = 1e-4
    acc = lambda x, u: 0.0
    ex = integrate_rescaled(0.0, 0.2, acc, 1.0, 0.01)
    til = integrate_rescaled(0.0, 0.2, acc, 1.0, 0.01, None, lambda s: d)
    assert np.allclose(til.u - ex.u, d * ex.times, atol=1e-17)
    assert np.allclose(til.xi - ex.xi, 0.5 * d * ex.times ** 2, atol=1e-17)
    rep = gronwall_compare(til, ex, d, 1.0)
    assert rep.ok and rep.bound == pytest.approx(np.sqrt(2) * np.exp(2) * d)


def test_gronwall_eps_n_defects(exp10):
    """Defects of size eps^n give deviations of order eps^n on [0, 1/C_tilde]."""
    ratios = []
    for eps in (0.05, 0.025, 0.0125):
        view = VirtualManifold(exp10, eps)
        acc = lambda x, uh: rescaled_acceleration(view, eps, 0, [x], [uh])[0]
        ex = integrate_rescaled(1.0, 0.18, acc, 0.85, 0.85 / 200)
        til = integrate_rescaled(1.0, 0.18, acc, 0.85, 0.85 / 200, lambda s: eps, lambda s: -eps)
        rep = gronwall_compare(til, ex, eps, lipschitz_constant(view, eps, 0))
        assert rep.ok
        ratios.append(max(rep.dxi, rep.du) / eps)
    assert max(ratios) / min(ratios) < 1.5


def test_lipschitz_classical(grid):
    assert lipschitz_constant(VirtualManifold(None, 0.0, grid), 0.0, 0) == 1.0


def test_parameter_error_free(grid):
    t = np.linspace(0, 5, 51)
    s = ParamSeries(t, 0.3 + 0.1 * t, np.full_like(t, 0.1))
    with pytest.raises(ValueError):
        parameter_error(ParamSeries([0.0], [0.0], [0.0]), VirtualManifold(None, 0.0, grid), 0.01, 1, 0)
    xe, ue = parameter_error(s, VirtualManifold(None, 0.0, grid), 0.01, 1, 0)
    assert xe < 1e-10 and ue < 1e-12
