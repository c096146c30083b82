import numpy as np
import pytest

from dualmerit.fuzz import INJECT_ENV, check_instance, random_instance, run_fuzz
from dualmerit.lp import solve_model


def clearing_interval(model):
    """[lo, hi] of prices at which the step curves of a fuzz instance cross, by direct scan."""
    asks = sorted((g.marginal_cost, g.capacity_existing * float(np.atleast_1d(g.availability)[0]))
                  for g in model.generators)
    bids = sorted(((ld.shed_price, float(np.atleast_1d(ld.profile)[0])) for ld in model.loads), reverse=True)
    levels = sorted({p for p, _ in asks} | {p for p, _ in bids})
    probes = levels + [(a + b) / 2 for a, b in zip(levels, levels[1:])]

    def clears(p):
        s_lo = sum(v for q, v in asks if q < p)
        s_hi = sum(v for q, v in asks if q <= p)
        d_lo = sum(v for q, v in bids if q > p)
        d_hi = sum(v for q, v in bids if q >= p)
        return max(s_lo, d_lo) <= min(s_hi, d_hi) + 1e-9

    ok = [p for p in probes if clears(p)]
    return min(ok), max(ok)


def test_instances_reproducible():
    a, b = random_instance(7, 3), random_instance(7, 3)
    assert a == b and random_instance(8, 3) != a


@pytest.mark.parametrize("i", range(25))
def test_lp_price_inside_independent_interval(i):
    m = random_instance(11, i)
    lam = solve_model(m).prices["elec"][0]
    lo, hi = clearing_interval(m)
    assert lo - 1e-6 <= lam <= hi + 1e-6
    assert check_instance(m) is None


def test_two_hundred_pass():
    rep = run_fuzz(200, 7)
    assert rep.lines()[0] == "200/200 passed" and rep.ok


def test_zero_instances():
    rep = run_fuzz(0, 7)
    assert rep.ok and rep.lines() == ["0/0 passed"]


def test_injected_failure_reported():
    rep = run_fuzz(5, 7, inject=2)
    assert not rep.ok and rep.passed == 4
    assert rep.lines()[1].startswith("FAIL instance 2 (seed 7)")


def test_injection_from_environment(monkeypatch):
    monkeypatch.setenv(INJECT_ENV, "0")
    assert run_fuzz(1, 7).failures[0].index == 0
