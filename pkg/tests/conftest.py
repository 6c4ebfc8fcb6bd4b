import numpy as np
import pytest

from sglab.acceptance import Context
from sglab.numerics import make_grid


@pytest.fixture(scope="session")
def ctx():
    """One shared context so manifolds and the scaling study are built once per session."""
    return Context()


@pytest.fixture(scope="session")
def exp10(ctx):
    return ctx.manifold(1, 0)


@pytest.fixture(scope="session")
def grid():
    return make_grid(40.0, 4096)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def seeded_run(ctx, exp10):
    """A short forced run from the seeded initial state at eps = 0.1: (eps, view, times, rows, decomps)."""
    from sglab.experiment import observe_run
    from sglab.manifold import VirtualManifold
    eps = 0.1
    cfg = ctx.cfg.with_updates(experiment__T_factor=0.25)
    view = VirtualManifold(exp10, eps)
    times, rows, decs = observe_run(cfg, eps, exp10, view)
    return eps, view, times, rows, decs


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
