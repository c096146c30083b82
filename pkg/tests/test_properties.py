import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from dualmerit.analysis import analyze
from dualmerit.clearing import NO_CANDIDATE, averaged_curves, build_curves, clear_single_period_oracle
from dualmerit.io import dumps_model, loads_model
from dualmerit.lp import solve_model
from dualmerit.model import Carrier, EnergyModel, GeneratorSpec, LoadSpec, SnapshotSet
from dualmerit.pricing import SUPPLY

from .conftest import solved

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

gen_st = st.tuples(st.floats(0, 150).map(lambda x: round(x, 2)), st.floats(1, 100).map(lambda x: round(x, 1)))
load_st = st.tuples(st.floats(5, 250).map(lambda x: round(x, 1)), st.floats(160, 3000).map(lambda x: round(x, 1)))


def market(gens, loads, n=1, scale=1.0, profile=None):
    return EnergyModel(
        carriers=(Carrier("elec", "MWh", True),),
        snapshots=SnapshotSet.hourly(n),
        generators=tuple(GeneratorSpec(f"g{i}", "elec", c, capacity_existing=cap * scale)
                         for i, (c, cap) in enumerate(gens)),
        loads=tuple(LoadSpec(f"l{j}", "elec", (profile if profile is not None else d) * scale, shed_price=p)
                    for j, (d, p) in enumerate(loads)),
    )


@SETTINGS
@given(st.lists(gen_st, min_size=2, max_size=10), st.lists(load_st, min_size=1, max_size=3))
def test_lp_price_equals_oracle(gens, loads):
    s = solve_model(market(gens, loads))
    an = analyze(s)
    assert abs(s.prices["elec"][0] - clear_single_period_oracle(an.bids).price) <= 1e-6


@SETTINGS
@given(st.lists(gen_st, min_size=2, max_size=10), st.lists(load_st, min_size=1, max_size=3))
def test_curves_and_setter_consistent(gens, loads):
    s = solve_model(market(gens, loads))
    an = analyze(s)
    lam = s.prices["elec"][0]
    sup, dem = an.curves[0]
    prices = [x.price for x in sup.steps]
    assert prices == sorted(prices)
    assert [x.price for x in dem.steps] == sorted((x.price for x in dem.steps), reverse=True)
    at_price = sum(x.end - x.start for x in sup.steps if x.price <= lam + 1e-9)
    dispatched = sum(r.volume_dispatched for r in an.bids if r.side == SUPPLY)
    assert at_price >= dispatched - 1e-6
    v = an.verdicts[0]
    if v.rule_fired != NO_CANDIDATE:
        chosen = next(r for r in an.bids if (r.technology, r.side) == (v.chosen, v.side))
        assert abs(chosen.price - lam) <= 0.01 and chosen.utilization < 0.99


@SETTINGS
@given(st.lists(gen_st, min_size=2, max_size=8, unique_by=lambda g: g[0]),
       st.lists(load_st, min_size=1, max_size=2, unique_by=lambda d: d[1]),
       st.sampled_from([0.5, 2.0, 10.0]))
def test_verdict_invariant_under_volume_scaling(gens, loads, k):
    a = analyze(solve_model(market(gens, loads)))
    b = analyze(solve_model(market(gens, loads, scale=k)))
    # stay clear of the thresholds that are not ratio based
    for r in a.bids:
        assume(not (0.005 < r.utilization < 0.02 or 0.98 < r.utilization < 0.995))
        assume(not (0 < r.volume_dispatched < 10 / min(k, 1.0)))
    assert (a.verdicts[0].chosen, a.verdicts[0].side) == (b.verdicts[0].chosen, b.verdicts[0].side)
    assert a.verdicts[0].market_price == pytest.approx(b.verdicts[0].market_price, abs=1e-6)


@SETTINGS
@given(st.lists(st.lists(st.tuples(st.integers(0, 100), st.integers(1, 30)), min_size=1, max_size=5),
                min_size=1, max_size=30),
       st.data())
def test_averaged_bins_meet_coverage(snapshot_steps, data):
    from dualmerit.pricing import BidRecord
    curves = []
    for t, steps in enumerate(snapshot_steps):
        recs = [BidRecord(f"g{i}", t, "", SUPPLY, float(p), float(v), 0.0, "generator")
                for i, (p, v) in enumerate(steps)]
        curves.append(build_curves(recs)[0])
    w = np.array(data.draw(st.lists(st.floats(0.1, 10), min_size=len(curves), max_size=len(curves))))
    sup, _ = averaged_curves(curves, w)
    assert np.all(sup.coverage >= 0.05 - 1e-12)
    # recompute coverage of each emitted bin directly from the inputs
    for edge, cov in zip(sup.bins, sup.coverage):
        mid = edge - 0.5
        direct = sum(w[c.snapshot] for c in curves if c.total > mid) / w.sum()
        assert cov == pytest.approx(direct, rel=1e-12)


@SETTINGS
@given(st.lists(gen_st, min_size=1, max_size=5), st.lists(load_st, min_size=1, max_size=3))
def test_model_text_round_trip(gens, loads):
    m = market(gens, loads, n=2)
    assert loads_model(dumps_model(m)) == m


@pytest.mark.parametrize("name", ["mini_sector"])
def test_emissions_equal_atmosphere_increase(name):
    s = solved(name)
    e = s.soc["co2-atmosphere"]
    assert s.emissions() == pytest.approx(e[-1] - e[0], abs=1e-6)
    assert s.emissions() <= s.model.co2.budget + 1e-6
