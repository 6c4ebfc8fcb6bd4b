"""The thirteen acceptance criteria at their stated tolerances, one line each."""
import pytest

from sglab.acceptance import CHECKS

REPORT = []


@pytest.mark.parametrize("check", CHECKS, ids=[f"c{i:02d}_{c.__name__}" for i, c in enumerate(CHECKS, 1)])
def test_criterion(check, ctx, capsys):
    r = check(ctx)
    line = r.line()
    REPORT.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert r.passed, line
