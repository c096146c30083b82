"""Myopic multi-year driver with capacity carryover and per-year CO2 budgets."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .analysis import Analysis, analyze, pdc_correlation, setter_agreement
from .io import ModelFileError, model_from_dict, parse_toml
from .lp import DISPATCH_ONLY, EXPANSION, SolvedState, solve_model
from .model import EnergyModel, validate

log = logging.getLogger(__name__)

CO2_UNITS = {"t": 1.0, "kt": 1e3, "Mt": 1e6}
OVERRIDE_SECTIONS = ("generators", "converters", "stores", "loads", "co2", "snapshots", "carriers")


class PathwayError(RuntimeError):
    def __init__(self, year, message: str):
        super().__init__(f"year {year}: {message}")
        self.year = year


@dataclass(frozen=True)
class Retrofit:
    source: str
    target: str
    factor: float = 1.0


@dataclass
class PathwayConfig:
    base: dict  # raw model document, overrides are merged into it
    base_dir: Path
    years: list
    co2_budgets: dict = field(default_factory=dict)  # year -> t/a
    lifetimes: dict = field(default_factory=dict)  # technology -> years
    overrides: dict = field(default_factory=dict)  # year -> partial model document
    phase_out: dict = field(default_factory=dict)  # year -> [ids]
    retrofit: dict = field(default_factory=dict)  # year -> [Retrofit]

    def __post_init__(self):
        if not self.years:
            raise ValueError("pathway needs at least one year")
        order = [float(y) for y in self.years]
        if any(b <= a for a, b in zip(order, order[1:])):
            raise ValueError("years must be strictly increasing")
        for y, b in self.co2_budgets.items():
            if not math.isfinite(b):
                raise ValueError(f"year {y}: CO2 budget must be finite")

    def model_for(self, year) -> EnergyModel:
        doc = copy.deepcopy(self.base)
        _merge(doc, self.overrides.get(year, {}))
        if year in self.co2_budgets:
            doc.setdefault("co2", {})["budget"] = self.co2_budgets[year]
        return model_from_dict(doc, base=self.base_dir)


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = copy.deepcopy(v)


def load_pathway(path) -> PathwayConfig:
    path = Path(path)
    doc = parse_toml(path.read_text(encoding="utf-8"), str(path))
    return pathway_from_dict(doc, path.parent)


def pathway_from_dict(doc: dict, base_dir: Path) -> PathwayConfig:
    if "base" not in doc:
        raise ModelFileError("pathway: missing 'base' model")
    base = doc["base"]
    if isinstance(base, str):
        model_path = base_dir / base
        base = parse_toml(model_path.read_text(encoding="utf-8"), str(model_path))
        model_dir = model_path.parent
    else:
        model_dir = base_dir

    table = doc.get("years", {})
    if not isinstance(table, dict):
        raise ModelFileError("pathway: 'years' must be a table of [years.<label>] sections")
    years = [str(y) for y in table]
    try:
        order = [float(y) for y in years]
    except ValueError as err:
        raise ModelFileError(f"pathway: year labels must be numeric ({err})") from err
    if any(b <= a for a, b in zip(order, order[1:])):
        raise ModelFileError("pathway: years must be strictly increasing")

    co2 = doc.get("co2", {})
    unit = co2.get("unit", "t")
    if unit not in CO2_UNITS:
        raise ModelFileError(f"pathway: unknown CO2 unit {unit!r}")
    budgets = {str(y): float(v) * CO2_UNITS[unit] for y, v in co2.get("budgets", {}).items()}
    missing = set(budgets) - set(years)
    if missing:
        raise ModelFileError(f"pathway: CO2 budget for unlisted year(s) {', '.join(sorted(missing))}")

    overrides, phase_out, retrofit = {}, {}, {}
    for y, spec in table.items():
        y = str(y)
        spec = dict(spec or {})
        phase_out[y] = list(spec.pop("phase_out", []))
        retrofit[y] = [Retrofit(r["from"], r["to"], float(r.get("factor", 1.0))) for r in spec.pop("retrofit", [])]
        bad = set(spec) - set(OVERRIDE_SECTIONS)
        if bad:
            raise ModelFileError(f"pathway year {y}: unknown section(s) {', '.join(sorted(bad))}")
        overrides[y] = spec
    return PathwayConfig(base=base, base_dir=model_dir, years=years, co2_budgets=budgets,
                         lifetimes={k: float(v) for k, v in doc.get("lifetimes", {}).items()},
                         overrides=overrides, phase_out=phase_out, retrofit=retrofit)


# ---------------------------------------------------------------------------
# runs


@dataclass
class YearResult:
    year: str
    model: EnergyModel
    state: SolvedState
    analysis: Analysis | None
    lower_bounds: dict  # extendable id -> capacity lower bound used this year
    budget: float | None

    @property
    def co2_price(self) -> float:
        p = self.state.co2_price
        return 0.0 if p is None else p

    @property
    def emissions(self) -> float:
        return self.state.emissions()


@dataclass
class PathwayResult:
    years: list = field(default_factory=list)  # [YearResult]

    def __getitem__(self, year) -> YearResult:
        for yr in self.years:
            if yr.year == str(year):
                return yr
        raise KeyError(year)

    @property
    def co2_price(self) -> dict:
        return {yr.year: yr.co2_price for yr in self.years}

    @property
    def emissions(self) -> dict:
        return {yr.year: yr.emissions for yr in self.years}


class _Vintages:
    """Built capacity per technology and build year, with step-wise expiry."""

    def __init__(self, lifetimes: dict):
        self.lifetimes = lifetimes
        self.stock: dict = {}  # id -> [(build year, capacity)]

    def surviving(self, comp: str, year: str) -> float:
        life = self.lifetimes.get(comp, math.inf)
        return sum(c for b, c in self.stock.get(comp, []) if float(year) - float(b) < life)

    def add(self, comp: str, year: str, capacity: float) -> None:
        if capacity > 0:
            self.stock.setdefault(comp, []).append((year, capacity))

    def move(self, source: str, target: str, factor: float) -> None:
        moved = [(b, c * factor) for b, c in self.stock.pop(source, [])]
        self.stock.setdefault(target, []).extend(moved)

    def drop(self, comp: str) -> None:
        self.stock.pop(comp, None)


def _components(model: EnergyModel):
    return list(model.generators) + list(model.converters) + list(model.stores)


def _apply_year(model: EnergyModel, cfg: PathwayConfig, year: str, stock: _Vintages, seen: set):
    """Carry surviving capacity into ``model`` and apply retrofits and phase-outs."""
    for r in cfg.retrofit.get(year, []):
        stock.move(r.source, r.target, r.factor)
    out = model
    bounds = {}
    for comp in _components(model):
        if comp.id in cfg.phase_out.get(year, []):
            stock.drop(comp.id)
            out = out.replace_component(replace(comp, capacity_existing=0.0, capacity_min=0.0, capacity_max=0.0))
            if comp.extendable:
                bounds[comp.id] = 0.0
            continue
        if not comp.extendable:
            continue
        if comp.id not in seen:
            # base capacity enters as a vintage built in the first year the component appears
            stock.add(comp.id, year, comp.capacity_existing)
            seen.add(comp.id)
        surv = stock.surviving(comp.id, year)
        out = out.replace_component(replace(comp, capacity_existing=surv,
                                            capacity_max=max(comp.capacity_max, surv)))
        bounds[comp.id] = max(comp.capacity_min, surv)
    unknown = (set(cfg.phase_out.get(year, [])) | {r.target for r in cfg.retrofit.get(year, [])}) \
        - {c.id for c in _components(model)}
    if unknown:
        raise PathwayError(year, f"unknown component(s) {', '.join(sorted(unknown))}")
    return out, bounds


def run_myopic(cfg: PathwayConfig, backend=None, market_carrier: str | None = None, threads: int = 1,
               with_analysis: bool = True) -> PathwayResult:
    """Solve every year in order; each year only sees capacity built before it."""
    stock = _Vintages(cfg.lifetimes)
    seen: set = set()
    result = PathwayResult()
    for year in cfg.years:
        model, bounds = _apply_year(cfg.model_for(year), cfg, year, stock, seen)
        problems = validate(model)
        if problems:
            raise PathwayError(year, "; ".join(f"{d.component}: {d.message}" for d in problems))
        state = solve_model(model, EXPANSION, backend=backend)
        if not state.optimal:
            raise PathwayError(year, f"solver status {state.status} {state.message}".strip())
        for cid in bounds:
            built = state.capacities[cid] - stock.surviving(cid, year)
            stock.add(cid, year, built if built > 1e-9 else 0.0)
        log.info("year %s solved, objective %.6g", year, state.objective)
        an = analyze(state, market_carrier, threads=threads, label=year) if with_analysis else None
        budget = model.co2.budget if model.co2 is not None else None
        result.years.append(YearResult(year, model, state, an, bounds, budget))
    return result


@dataclass
class ShortTermComparison:
    year: str
    state: SolvedState
    analysis: Analysis
    lt_opex: float
    st_opex: float
    pdc_correlation: float
    setter_agreement: float

    @property
    def opex_relative_diff(self) -> float:
        return abs(self.st_opex - self.lt_opex) / max(abs(self.lt_opex), 1e-12)


def run_short_term(year_result: YearResult, backend=None, market_carrier: str | None = None,
                   threads: int = 1) -> ShortTermComparison:
    """Dispatch-only re-solve with the year's optimal capacities fixed."""
    model, lt = year_result.model, year_result.state
    missing = [c for c in model.extendable_ids() if c not in lt.capacities]
    if missing:
        raise PathwayError(year_result.year, f"missing capacities for {', '.join(missing)}")
    fixed = {c: lt.capacities[c] for c in model.extendable_ids()}
    st = solve_model(model, DISPATCH_ONLY, fixed_capacities=fixed, backend=backend)
    if not st.optimal:
        raise PathwayError(year_result.year, f"dispatch-only solve status {st.status}")
    lt_an = year_result.analysis or analyze(lt, market_carrier, threads=threads, label=year_result.year)
    st_an = analyze(st, market_carrier, threads=threads, label=year_result.year)
    return ShortTermComparison(
        year=year_result.year,
        state=st,
        analysis=st_an,
        lt_opex=lt.operational_cost(),
        st_opex=st.operational_cost(),
        pdc_correlation=pdc_correlation(lt_an.pdc, st_an.pdc),
        setter_agreement=setter_agreement(lt_an.verdicts, st_an.verdicts, lt.weights),
    )
