import functools

import pytest

from dualmerit.io import ModelFileError
from dualmerit.pathway import (CO2_UNITS, PathwayConfig, PathwayError, load_pathway, pathway_from_dict,
                               run_myopic, run_short_term)

from .conftest import SCENARIOS


@functools.lru_cache(maxsize=None)
def mini_run():
    return run_myopic(load_pathway(SCENARIOS / "pathway_mini.toml"))


def base_doc(load=100_000.0, weight=8760.0):
    return {
        "carriers": {"elec": {"unit": "MWh", "is_electricity": True}, "co2": {"unit": "t"}},
        "snapshots": {"timestamps": ["y"], "weights": [weight], "duration": weight},
        "generators": {
            "coal": {"carrier": "elec", "marginal_cost": 10.0, "capacity_existing": 100_000.0,
                     "co2_intensity": 1.0},
            "nuclear": {"carrier": "elec", "marginal_cost": 100.0, "capacity_existing": 100_000.0},
        },
        "loads": {"demand": {"carrier": "elec", "profile": load}},
        "co2": {"budget": 1e12},
    }


def test_budget_table_parsed_and_enforced(tmp_path):
    doc = {"base": base_doc(), "co2": {"unit": "Mt", "budgets": {"2020": 706, "2025": 550}},
           "years": {"2020": {}, "2025": {}}}
    cfg = pathway_from_dict(doc, tmp_path)
    assert cfg.co2_budgets == {"2020": 706e6, "2025": 550e6}
    res = run_myopic(cfg, with_analysis=False)
    for year, budget in (("2020", 706e6), ("2025", 550e6)):
        yr = res[year]
        # binding at this magnitude: 1e-9 relative is ~1 t
        assert yr.emissions <= budget * (1 + 1e-9)
        assert yr.emissions == pytest.approx(budget, rel=1e-9)
        assert yr.co2_price == pytest.approx(90.0, abs=1e-6)


def test_slack_budget_gives_zero_price(tmp_path):
    doc = {"base": base_doc(), "co2": {"unit": "Mt", "budgets": {"2020": 5000}}, "years": {"2020": {}}}
    res = run_myopic(pathway_from_dict(doc, tmp_path), with_analysis=False)
    assert res["2020"].co2_price == pytest.approx(0.0, abs=1e-9)


def test_units():
    assert CO2_UNITS == {"t": 1.0, "kt": 1e3, "Mt": 1e6}


@pytest.mark.parametrize("doc, match", [
    ({"years": {"2030": {}}}, "base"),
    ({"base": {}, "years": {"b": {}, "a": {}}}, "numeric"),
    ({"base": {}, "years": {"2035": {}, "2030": {}}}, "increasing"),
    ({"base": {}, "years": {"2030": {}}, "co2": {"unit": "Gt"}}, "unit"),
    ({"base": {}, "years": {"2030": {}}, "co2": {"budgets": {"2040": 1}}}, "unlisted"),
    ({"base": {}, "years": {"2030": {"bogus": 1}}}, "unknown section"),
])
def test_config_errors(tmp_path, doc, match):
    with pytest.raises(ModelFileError, match=match):
        pathway_from_dict(doc, tmp_path)


def test_config_year_order_checked():
    with pytest.raises(ValueError):
        PathwayConfig(base={}, base_dir=SCENARIOS, years=["2040", "2030"])


def test_unknown_phase_out(tmp_path):
    doc = {"base": base_doc(), "years": {"2020": {"phase_out": ["lignite"]}}}
    with pytest.raises(PathwayError, match="lignite"):
        run_myopic(pathway_from_dict(doc, tmp_path), with_analysis=False)


def test_infeasible_year_raises(tmp_path):
    base = base_doc(load=300_000.0)
    base["loads"]["demand"]["sheddable"] = False
    doc = {"base": base, "years": {"2020": {}}}
    with pytest.raises(PathwayError, match="2020"):
        run_myopic(pathway_from_dict(doc, tmp_path), with_analysis=False)


# -- mini pathway ----------------------------------------------------------------

def test_mini_years_and_budgets():
    res = mini_run()
    assert [y.year for y in res.years] == ["2030", "2035", "2040"]
    for yr in res.years:
        assert yr.emissions <= yr.budget + 1e-6
        assert yr.co2_price > 0


def test_mini_override_applied():
    cfg = load_pathway(SCENARIOS / "pathway_mini.toml")
    assert cfg.model_for("2035").generator("gas-supply").marginal_cost == 24.57


def test_clean_capacity_carried_forward():
    res = mini_run()
    for a, b in zip(res.years, res.years[1:]):
        for tech in ("wind", "solar", "battery", "electrolysis"):
            assert b.state.capacities[tech] >= a.state.capacities[tech] - 1e-6
            assert b.lower_bounds[tech] == pytest.approx(a.state.capacities[tech], abs=1e-9)


def test_phase_out_forces_zero():
    yr = mini_run()["2040"]
    assert yr.model.generator("coal").capacity_existing == 0.0
    assert max(yr.state.dispatch["coal"]) == 0.0


def test_retrofit_moves_capacity():
    res = mini_run()
    prev = res["2035"].state.capacities
    yr = res["2040"]
    assert yr.lower_bounds["h2-turbine"] == pytest.approx(prev["h2-turbine"] + prev["ocgt"], abs=1e-9)
    assert yr.lower_bounds["ocgt"] == 0.0


def test_lifetime_expiry():
    res = mini_run()
    c30 = res["2030"].state.capacities["gas-boiler"]
    c35 = res["2035"].state.capacities["gas-boiler"]
    assert res["2035"].lower_bounds["gas-boiler"] == pytest.approx(c30, abs=1e-9)
    # the 2030 vintage is ten years old in 2040 and retires
    assert res["2040"].lower_bounds["gas-boiler"] == pytest.approx(max(c35 - c30, 0.0), abs=1e-9)


def test_short_term_refix():
    yr = mini_run()["2035"]
    cmp = run_short_term(yr)
    assert cmp.opex_relative_diff <= 1e-6
    assert -1.0 <= cmp.pdc_correlation <= 1.0 + 1e-12
    assert 0.0 <= cmp.setter_agreement <= 1.0


def test_result_dicts():
    res = mini_run()
    assert set(res.co2_price) == {"2030", "2035", "2040"}
    with pytest.raises(KeyError):
        res["1999"]
