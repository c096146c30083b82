import numpy as np
import pytest

from dualmerit.analysis import analyze, pdc_correlation, setter_agreement
from dualmerit.clearing import PriceDurationCurve, PriceSetterVerdict, UNIQUE_SUPPLY, price_duration
from dualmerit.lp import build_lp, kkt_residuals, solve
from dualmerit.reports import (MissingOutputError, fmt, read_csv, read_state, summary_lines, write_analysis,
                               write_state)

from .conftest import MODEL_SCENARIOS, scenario_model, solved


def test_fmt():
    assert fmt(-0.0) == "0" and fmt(float("nan")) == "" and fmt(None) == ""
    assert fmt(1 / 3) == "0.333333333" and fmt("x") == "x"


@pytest.mark.parametrize("name", MODEL_SCENARIOS)
def test_state_round_trip(tmp_path, name):
    s = solved(name)
    write_state(s, tmp_path)
    back = read_state(tmp_path)
    assert back.status == s.status and back.objective == pytest.approx(s.objective, rel=1e-8)
    for c in s.prices:
        np.testing.assert_allclose(back.prices[c], s.prices[c], rtol=1e-8, atol=1e-9)
    for k in s.dispatch:
        np.testing.assert_allclose(back.dispatch[k], s.dispatch[k], rtol=1e-8, atol=1e-9)
    for k in s.soc:
        np.testing.assert_allclose(back.soc[k], s.soc[k], rtol=1e-8, atol=1e-9)
    assert back.capacities == pytest.approx(s.capacities, rel=1e-8)
    a, b = analyze(s), analyze(back)
    assert [(v.chosen, v.rule_fired) for v in a.verdicts] == [(v.chosen, v.rule_fired) for v in b.verdicts]


def test_kkt_report_written(tmp_path):
    name = "battery_arbitrage"
    p = build_lp(scenario_model(name))
    raw = solve(p)
    write_state(solved(name), tmp_path, kkt_residuals(raw, p))
    assert "stationarity" in (tmp_path / "kkt_report.txt").read_text()


def test_missing_output_named(tmp_path):
    write_state(solved("two_generator"), tmp_path)
    (tmp_path / "duals_bounds.csv").unlink()
    with pytest.raises(MissingOutputError, match="duals_bounds.csv"):
        read_state(tmp_path)


def test_analysis_files_deterministic(tmp_path):
    s = solved("mini_sector")
    stamps = s.model.snapshots.timestamps
    for d in ("a", "b"):
        write_analysis(analyze(s), tmp_path / d, stamps)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert len(files) > 24
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_battery_discharger_sets_price(tmp_path):
    s = solved("battery_arbitrage")
    write_analysis(analyze(s), tmp_path, s.model.snapshots.timestamps)
    rows = read_csv(tmp_path / "price_setters.csv")
    assert len(rows) == s.model.n_snapshots
    assert any(r["chosen_technology"] == "battery-discharger" for r in rows)


def test_stats_csv_shares(tmp_path):
    s = solved("mini_sector")
    an = analyze(s)
    write_analysis(an, tmp_path, s.model.snapshots.timestamps)
    rows = read_csv(tmp_path / "stats.csv")
    decided = sum(float(r["share"]) for r in rows if r["band"] == "all" and r["technology"] != "undetermined")
    assert decided == pytest.approx(1.0)
    assert summary_lines(an)[0] == "market_carrier elec"


def test_pdc_correlation():
    a = price_duration([10, 20, 30], [1, 1, 1])
    b = price_duration([11, 19, 33], [1, 1, 1])
    assert pdc_correlation(a, a) == pytest.approx(1.0)
    assert pdc_correlation(a, b) == pytest.approx(np.corrcoef([30, 20, 10], [33, 19, 11])[0, 1])
    flat = price_duration([0, 0, 0], [1, 1, 1])
    assert pdc_correlation(flat, flat) == 1.0 and pdc_correlation(a, flat) == 0.0
    with pytest.raises(ValueError):
        pdc_correlation(a, PriceDurationCurve("", np.zeros(2), np.ones(2), 0.0))


def test_setter_agreement_weighted():
    def v(chosen):
        return PriceSetterVerdict(0, "", 0.0, (), chosen, "supply", UNIQUE_SUPPLY)
    a = [v("gas"), v("coal"), v("wind")]
    b = [v("gas"), v("gas"), v("wind")]
    assert setter_agreement(a, b, [1.0, 2.0, 1.0]) == pytest.approx(0.5)
