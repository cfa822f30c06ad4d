"""Acceptance criteria 1-10; prints one PASS/FAIL line per criterion."""
import pytest

from magstep.acceptance import CHECKS, Context

SLOW = {8, 9}


@pytest.fixture(scope="module")
def ctx():
    return Context()


def _report(res):
    lines = [f"{'PASS' if res.passed else 'FAIL'} criterion {res.criterion}: {res.title} "
             f"({res.seconds:.1f} s)"]
    lines += [f"    {'ok ' if it.passed else 'BAD'} {it.name} = {it.value:.6g} ({it.tolerance})"
              for it in res.items]
    return "\n".join(lines)


@pytest.mark.parametrize("criterion", [
    pytest.param(c, marks=pytest.mark.slow) if c in SLOW else c for c in sorted(CHECKS)])
def test_criterion(criterion, ctx, capsys):
    res = CHECKS[criterion](ctx)
    with capsys.disabled():
        print("\n" + _report(res))
    assert res.items, "criterion produced no checks"
    assert res.passed, "failing: " + ", ".join(res.failing())
