import copy
from dataclasses import replace

import numpy as np
import pytest

from dualmerit import backends as bk
from dualmerit.lp import (DISPATCH_ONLY, EXPANSION, LpBuildError, SolverError, build_lp,
                          co2_budget_finite_difference, kkt_residuals, lmp_finite_difference, solve, solve_model)
from dualmerit.model import (Carrier, ConverterSpec, EnergyModel, GeneratorSpec, LoadSpec, SnapshotSet, StoreSpec)

from .conftest import MODEL_SCENARIOS, scenario_model, solved, two_generator
from .oracles import two_period_battery_cost


def single_gen(n=3, **gen):
    return EnergyModel(
        carriers=(Carrier("elec", "MWh", True),),
        snapshots=SnapshotSet.hourly(n),
        generators=(GeneratorSpec("g", "elec", 5.0, capacity_existing=100.0, **gen),),
        loads=(LoadSpec("l", "elec", 40.0, sheddable=False),),
    )


def test_row_counts():
    p = build_lp(single_gen())
    assert p.count("nodal_balance") == 3
    assert p.count("gen_lower") + p.count("gen_upper") == 6


def test_volume_limit_adds_one_row():
    assert build_lp(single_gen()).count("volume") == 0
    assert build_lp(single_gen(volume_limit=500.0)).count("volume") == 1


def test_dispatch_only_fixes_capacities():
    m = scenario_model("battery_arbitrage")
    lt = solved("battery_arbitrage")
    fixed = {c: lt.capacities[c] for c in m.extendable_ids()}
    exp = build_lp(m, EXPANSION)
    disp = build_lp(m, DISPATCH_ONLY, fixed)
    n_cap = lambda p: sum(tag.kind == "capacity" for tag in p.var_tags)  # noqa: E731
    assert n_cap(exp) == 3 and n_cap(disp) == 0
    for kind in ("nodal_balance", "gen_upper", "conv_upper", "soc_upper", "cyclic"):
        assert exp.count(kind) == disp.count(kind)
    # operational cost coefficients are untouched, capital ones are gone
    op = [i for i, tag in enumerate(disp.var_tags) if tag.kind in ("g", "f")]
    assert np.all(disp.c[op] >= 0) and disp.c.size == exp.c.size - 3


def test_dispatch_only_needs_capacities():
    m = scenario_model("battery_arbitrage")
    with pytest.raises(LpBuildError):
        build_lp(m, DISPATCH_ONLY)
    with pytest.raises(LpBuildError):
        build_lp(m, DISPATCH_ONLY, {"battery": 10.0})


def test_empty_snapshots_rejected():
    m = replace(two_generator(), snapshots=SnapshotSet((), (), 0.0))
    with pytest.raises(LpBuildError):
        build_lp(m)


def test_two_generator_price_and_dispatch():
    s = solve_model(two_generator())
    assert s.optimal
    assert s.prices["elec"][0] == pytest.approx(30.0, abs=1e-9)
    assert s.dispatch["A"][0] == pytest.approx(50.0)
    assert s.dispatch["B"][0] == pytest.approx(20.0)
    assert s.mu_upper["A"][0] == pytest.approx(-20.0)


def test_weighting_cancels():
    s = solve_model(two_generator(weight=3.0))
    assert s.prices["elec"][0] == pytest.approx(30.0, abs=1e-9)
    assert s.objective == pytest.approx(3 * 1100.0)


def battery_two_period():
    return EnergyModel(
        carriers=(Carrier("elec", "MWh", True), Carrier("battery", "MWh")),
        snapshots=SnapshotSet.hourly(2),
        generators=(GeneratorSpec("cheap", "elec", 20.0, capacity_existing=200.0, availability=(1.0, 0.0)),),
        converters=(ConverterSpec("ch", ports=(("elec", -1.0), ("battery", 1.0)), capacity_existing=100.0),
                    ConverterSpec("dis", ports=(("battery", -1.0), ("elec", 1.0)), capacity_existing=100.0)),
        stores=(StoreSpec("bat", "battery", capacity_existing=100.0, linked_charger="ch", linked_discharger="dis"),),
        loads=(LoadSpec("l", "elec", (0.0, 50.0)),),
    )


def test_two_period_battery_prices_match_vertex_enumeration():
    # reference: finite differences of the brute-force optimal cost (all vertices enumerated)
    eps = 1e-3
    base = two_period_battery_cost(0.0, 50.0)
    expected = [(two_period_battery_cost(eps, 50.0) - base) / eps,
                (two_period_battery_cost(0.0, 50.0 + eps) - base) / eps]
    np.testing.assert_allclose(expected, [20.0, 20.0], atol=1e-6)  # frozen oracle value
    s = solve_model(battery_two_period())
    np.testing.assert_allclose(s.prices["elec"], expected, atol=1e-6)
    assert s.objective == pytest.approx(base)


@pytest.mark.parametrize("name", MODEL_SCENARIOS)
def test_kkt_on_scenarios(name):
    m = scenario_model(name)
    p = build_lp(m)
    s = solve(p)
    rep = kkt_residuals(s, p)
    assert rep.max_stationarity <= 1e-5
    assert abs(rep.duality_gap) <= 1e-6 * max(1.0, abs(s.objective))
    assert rep.primal_infeasibility <= 1e-6
    assert rep.ok and not rep.flagged


def test_perturbed_price_flags_incident_variables():
    m = scenario_model("mini_sector")
    p = build_lp(m)
    s = copy.deepcopy(solve(p))
    t = 5
    s.prices["elec"] = s.prices["elec"].copy()
    s.prices["elec"][t] += 1.0
    rep = kkt_residuals(s, p)
    expected = {("g", g.id, t) for g in m.all_generators() if g.carrier == "elec"}
    expected |= {("f", k.id, t) for k in m.converters if any(c == "elec" for c, _ in k.ports)}
    assert set(rep.flagged) == expected


def test_complementary_slackness_two_generator():
    s = solve_model(two_generator())
    for gid, cap in (("A", 50.0), ("B", 50.0)):
        g = s.dispatch[gid][0]
        assert abs(s.mu_upper[gid][0] * (g - cap)) <= 1e-6
        assert abs(s.mu_lower[gid][0] * g) <= 1e-6


def test_lmp_finite_difference_matches_dual():
    fd = lmp_finite_difference(two_generator(), 0, "elec")
    assert fd.forward == pytest.approx(30.0, abs=1e-6)
    assert fd.backward == pytest.approx(30.0, abs=1e-6)


def test_lmp_finite_difference_in_curtailment_hour():
    m = scenario_model("curtailment")
    s = solved("curtailment")
    t = int(np.flatnonzero(s.prices["elec"] < 1e-9)[0])
    fd = lmp_finite_difference(m, t, "elec")
    assert fd.forward == pytest.approx(0.0, abs=1e-6)


def test_lmp_finite_difference_weighted_snapshots():
    m = scenario_model("battery_arbitrage")
    s = solved("battery_arbitrage")
    for t in (0, 9, 17):
        fd = lmp_finite_difference(m, t, "elec")
        if fd.smooth:
            assert fd.value == pytest.approx(s.prices["elec"][t], abs=1e-4)


def test_co2_price_matches_budget_relaxation():
    m = scenario_model("mini_sector")
    s = solved("mini_sector")
    fd = co2_budget_finite_difference(m)
    assert s.co2_price > 0
    assert abs(-fd.value - s.co2_price) <= 0.01 * s.co2_price
    lam = s.prices["co2"]
    assert np.ptp(lam) <= 1e-6


def test_slack_budget_has_zero_price():
    m = scenario_model("mini_sector")
    m = replace(m, co2=replace(m.co2, budget=1e6))
    assert solve_model(m).co2_price == pytest.approx(0.0, abs=1e-9)


def test_doubling_weights_halving_snapshots():
    profile = (50.0, 50.0, 90.0, 90.0)
    fine = EnergyModel(
        carriers=(Carrier("elec", "MWh", True),),
        snapshots=SnapshotSet.hourly(4, weight=1.0),
        generators=(GeneratorSpec("a", "elec", 10.0, capacity_existing=60.0),
                    GeneratorSpec("b", "elec", 25.0, capacity_existing=60.0)),
        loads=(LoadSpec("l", "elec", profile),),
    )
    coarse = replace(fine, snapshots=SnapshotSet.hourly(2, weight=2.0), loads=(LoadSpec("l", "elec", (50.0, 90.0)),))
    pf = solve_model(fine).prices["elec"]
    pc = solve_model(coarse).prices["elec"]
    np.testing.assert_allclose(pf[::2], pc, atol=1e-9)


def test_refix_reproduces_operational_cost():
    m = scenario_model("mini_sector")
    lt = solved("mini_sector")
    st = solve_model(m, DISPATCH_ONLY, {c: lt.capacities[c] for c in m.extendable_ids()})
    assert abs(st.operational_cost() - lt.operational_cost()) <= 1e-6 * abs(lt.operational_cost())


def test_infeasible_returns_status_without_duals():
    m = two_generator().replace_component(LoadSpec("demand", "elec", 500.0, sheddable=False))
    s = solve_model(m)
    assert s.status == bk.INFEASIBLE and not s.prices


class _Broken:
    name = "broken"
    returns_duals = True

    def solve(self, *args):
        return bk.BackendResult(bk.NUMERICAL_FAILURE, None, None, None, None, "simulated crash")


def test_backend_failure_surfaces():
    with pytest.raises(SolverError, match="simulated crash"):
        solve(build_lp(two_generator()), _Broken())


def test_highspy_backend_agrees():
    pytest.importorskip("highspy")
    for name in ("two_generator", "mini_sector"):
        p = build_lp(scenario_model(name))
        a = solve(p, "highs")
        b = solve(p, "highspy")
        assert b.objective == pytest.approx(a.objective, rel=1e-9)
        assert kkt_residuals(b, p).ok


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        bk.get_backend("cplex-please")
