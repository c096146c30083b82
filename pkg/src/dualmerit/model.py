"""In-memory description of a single-region, multi-carrier energy system.

Everything here is immutable. Time-varying parameters are either a scalar
(constant over all snapshots) or a tuple with one value per snapshot; use
:func:`series` to expand them.

Converter capacity is always denominated on the *input* port: a converter
with capacity ``F`` draws at most ``availability * F`` units of its input
carrier per hour, and delivers ``eta * f`` on each output port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

Profile = Union[float, tuple]

DEFAULT_PERIOD_HOURS = 8760.0
DEFAULT_SHED_PRICE = 2000.0
ATMOSPHERE_ID = "co2-atmosphere"
OFFSET_ID = "co2-offset"
SHED_SUFFIX = "-shed"


def series(value: Profile, n: int) -> np.ndarray:
    """Expand a scalar or per-snapshot profile into an array of length ``n``."""
    if isinstance(value, (tuple, list, np.ndarray)):
        arr = np.asarray(value, dtype=float)
        if arr.shape != (n,):
            raise ValueError(f"profile has length {arr.size}, expected {n}")
        return arr
    return np.full(n, float(value))


def at(value: Profile, t: int) -> float:
    if isinstance(value, (tuple, list, np.ndarray)):
        return float(value[t])
    return float(value)


def as_profile(value) -> Profile:
    """Normalise user input (scalar, list, array) into a hashable profile."""
    if isinstance(value, (tuple, list, np.ndarray)):
        return tuple(float(v) for v in value)
    return float(value)


@dataclass(frozen=True)
class Carrier:
    id: str
    unit: str = "MWh"
    is_electricity: bool = False


@dataclass(frozen=True)
class SnapshotSet:
    timestamps: tuple
    weights: tuple
    duration: float = DEFAULT_PERIOD_HOURS

    def __post_init__(self):
        object.__setattr__(self, "timestamps", tuple(str(t) for t in self.timestamps))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def __len__(self):
        return len(self.timestamps)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @classmethod
    def hourly(cls, n: int, start: str = "2030-01-01T00:00", weight: float = 1.0,
               duration: float | None = None) -> "SnapshotSet":
        """``n`` evenly spaced snapshots of ``weight`` hours each.

        ``duration`` defaults to ``n * weight`` so the set is self-consistent.
        """
        stamps = np.datetime64(start) + np.arange(n) * np.timedelta64(int(round(weight * 60)), "m")
        stamps = [str(s)[:16] for s in stamps]
        return cls(tuple(stamps), (weight,) * n, n * weight if duration is None else duration)


@dataclass(frozen=True)
class GeneratorSpec:
    id: str
    carrier: str
    marginal_cost: float = 0.0
    capital_cost: float = 0.0
    capacity_existing: float = 0.0
    capacity_min: float = 0.0
    capacity_max: float = math.inf
    availability: Profile = 1.0
    volume_limit: float | None = None
    co2_intensity: float = 0.0
    extendable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "availability", as_profile(self.availability))


@dataclass(frozen=True)
class ConverterSpec:
    """One column of the lossy incidence matrix.

    ``ports`` holds ``(carrier, coefficient)`` pairs: ``-1`` on the input,
    an efficiency (scalar or profile) on every output.
    """

    id: str
    ports: tuple
    marginal_cost: float = 0.0
    capital_cost: float = 0.0
    capacity_existing: float = 0.0
    capacity_min: float = 0.0
    capacity_max: float = math.inf
    availability: Profile = 1.0
    extendable: bool = False

    def __post_init__(self):
        ports = tuple((str(c), as_profile(k)) for c, k in self.ports)
        object.__setattr__(self, "ports", ports)
        object.__setattr__(self, "availability", as_profile(self.availability))

    @property
    def input_carrier(self) -> str | None:
        for carrier, coeff in self.ports:
            if not isinstance(coeff, tuple) and coeff == -1.0:
                return carrier
        return None

    @property
    def output_carriers(self) -> list[str]:
        return [c for c, k in self.ports if np.all(np.asarray(k, dtype=float) > 0)]


@dataclass(frozen=True)
class StoreSpec:
    """Energy store on ``carrier``.

    A store listing ``linked_charger``/``linked_discharger`` is
    capacity-constrained (battery pattern): it normally sits on its own
    carrier and the converters move energy to and from the market.
    ``soc_min`` is the absolute lower SOC bound; ``-inf`` removes it.
    ``inflow`` is a raw carrier-units-per-hour profile (no normalisation).
    """

    id: str
    carrier: str
    capital_cost: float = 0.0
    capacity_existing: float = 0.0
    capacity_min: float = 0.0
    capacity_max: float = math.inf
    cyclic: bool = True
    initial_soc: float | None = None
    standing_loss: float = 0.0
    charge_efficiency: float = 1.0
    discharge_efficiency: float = 1.0
    linked_charger: str | None = None
    linked_discharger: str | None = None
    inflow: Profile = 0.0
    soc_min: float = 0.0
    extendable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "inflow", as_profile(self.inflow))

    @property
    def has_inflow(self) -> bool:
        return bool(np.any(np.asarray(self.inflow, dtype=float) != 0.0))


@dataclass(frozen=True)
class LoadSpec:
    id: str
    carrier: str
    profile: Profile = 0.0
    sheddable: bool = True
    shed_price: float = DEFAULT_SHED_PRICE

    def __post_init__(self):
        object.__setattr__(self, "profile", as_profile(self.profile))

    @property
    def peak(self) -> float:
        return float(np.max(np.asarray(self.profile, dtype=float)))


@dataclass(frozen=True)
class Co2Policy:
    budget: float
    carrier: str = "co2"
    offset_volume: float = 0.0
    offset_price: float = 0.0


@dataclass(frozen=True)
class EnergyModel:
    carriers: tuple
    snapshots: SnapshotSet
    generators: tuple = ()
    converters: tuple = ()
    stores: tuple = ()
    loads: tuple = ()
    co2: Co2Policy | None = None

    def __post_init__(self):
        for name in ("carriers", "generators", "converters", "stores", "loads"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    # -- lookup -------------------------------------------------------------
    @property
    def n_snapshots(self) -> int:
        return len(self.snapshots)

    @property
    def electricity(self) -> str:
        flagged = [c.id for c in self.carriers if c.is_electricity]
        if len(flagged) != 1:
            raise ValueError("model must flag exactly one electricity carrier")
        return flagged[0]

    def carrier_ids(self) -> list[str]:
        return [c.id for c in self.carriers]

    def generator(self, gid: str) -> GeneratorSpec:
        return _find(self.all_generators(), gid, "generator")

    def converter(self, cid: str) -> ConverterSpec:
        return _find(self.converters, cid, "converter")

    def store(self, sid: str) -> StoreSpec:
        return _find(self.all_stores(), sid, "store")

    def load(self, lid: str) -> LoadSpec:
        return _find(self.loads, lid, "load")

    # -- derived components -------------------------------------------------
    def shed_generators(self) -> tuple:
        """Load shedding as generators priced at the value of lost load."""
        return tuple(
            GeneratorSpec(
                id=load.id + SHED_SUFFIX,
                carrier=load.carrier,
                marginal_cost=load.shed_price,
                capacity_existing=load.peak,
                capacity_max=load.peak,
            )
            for load in self.loads
            if load.sheddable and load.peak > 0
        )

    def all_generators(self) -> tuple:
        return self.generators + self.shed_generators()

    def atmosphere(self) -> StoreSpec | None:
        if self.co2 is None:
            return None
        return StoreSpec(
            id=ATMOSPHERE_ID,
            carrier=self.co2.carrier,
            capacity_existing=self.co2.budget,
            capacity_min=self.co2.budget,
            capacity_max=self.co2.budget,
            cyclic=False,
            initial_soc=0.0,
            soc_min=-math.inf,
        )

    def all_stores(self) -> tuple:
        atm = self.atmosphere()
        return self.stores + ((atm,) if atm is not None else ())

    def extendable_ids(self) -> list[str]:
        comps = list(self.generators) + list(self.converters) + list(self.stores)
        return [c.id for c in comps if c.extendable]

    def linked_store(self, converter_id: str) -> tuple[StoreSpec, str] | None:
        """Return ``(store, "charger"|"discharger")`` if the converter is a store port."""
        for s in self.stores:
            if s.linked_charger == converter_id:
                return s, "charger"
            if s.linked_discharger == converter_id:
                return s, "discharger"
        return None

    def replace_component(self, comp) -> "EnergyModel":
        for name in ("generators", "converters", "stores", "loads"):
            items = getattr(self, name)
            if any(c.id == comp.id for c in items):
                return replace(self, **{name: tuple(comp if c.id == comp.id else c for c in items)})
        raise KeyError(comp.id)


def _find(items: Sequence, cid: str, kind: str):
    for item in items:
        if item.id == cid:
            return item
    raise KeyError(f"unknown {kind} id {cid!r}")


@dataclass(frozen=True)
class Diagnostic:
    component: str
    rule: str
    message: str = ""

    def __str__(self):
        return f"{self.component}: {self.rule}" + (f" ({self.message})" if self.message else "")


def incidence_column(model: EnergyModel, converter_id: str, snapshot: int) -> list[tuple[str, float]]:
    """Resolved incidence-matrix column of a converter at one snapshot."""
    conv = model.converter(converter_id)
    return [(carrier, at(coeff, snapshot)) for carrier, coeff in conv.ports]


def validate(model: EnergyModel) -> list[Diagnostic]:
    """Check every structural invariant; an empty list means the model is usable."""
    out: list[Diagnostic] = []
    add = lambda comp, rule, msg="": out.append(Diagnostic(comp, rule, msg))  # noqa: E731
    n = model.n_snapshots

    ids = [c.id for c in model.carriers]
    for cid in sorted({c for c in ids if ids.count(c) > 1}):
        add(cid, "duplicate carrier id")
    n_elec = sum(c.is_electricity for c in model.carriers)
    if n_elec > 1:
        add("carriers", "multiple electricity carriers")
    elif n_elec == 0:
        add("carriers", "no electricity carrier")
    known = set(ids)

    snaps = model.snapshots
    if n == 0:
        add("snapshots", "empty snapshot set")
    if len(snaps.weights) != n:
        add("snapshots", "weights length mismatch", f"{len(snaps.weights)} weights for {n} timestamps")
    for ts, w in zip(snaps.timestamps, snaps.weights):
        if not w > 0:
            add(f"snapshot {ts}", "non-positive weight", f"w={w:g}")
    if n and abs(sum(snaps.weights) - snaps.duration) > 1e-6 * max(1.0, snaps.duration):
        add("snapshots", "weights do not sum to period duration",
            f"sum={sum(snaps.weights):g}, duration={snaps.duration:g}")

    comp_ids = [c.id for c in (*model.generators, *model.converters, *model.stores, *model.loads)]
    for cid in sorted({c for c in comp_ids if comp_ids.count(c) > 1}):
        add(cid, "duplicate component id")

    def check_profile(cid, name, value, lo=None, hi=None):
        try:
            arr = series(value, n)
        except ValueError as err:
            add(cid, f"{name} length mismatch", str(err))
            return None
        if lo is not None and np.any(arr < lo - 1e-12):
            add(cid, f"{name} below {lo:g}")
        if hi is not None and np.any(arr > hi + 1e-12):
            add(cid, f"{name} above {hi:g}")
        return arr

    def check_bounds(comp):
        if comp.capacity_min > comp.capacity_max:
            add(comp.id, "capacity_min exceeds capacity_max")
        if comp.capacity_existing < 0 or comp.capacity_min < 0:
            add(comp.id, "negative capacity")

    for g in model.generators:
        if g.carrier not in known:
            add(g.id, "unknown carrier", g.carrier)
        check_profile(g.id, "availability", g.availability, 0.0, 1.0)
        check_bounds(g)
        if g.volume_limit is not None and g.volume_limit < 0:
            add(g.id, "negative volume limit")
        if g.co2_intensity and model.co2 is None:
            add(g.id, "emissions without co2 policy")

    for k in model.converters:
        negatives = []
        positives = 0
        for carrier, coeff in k.ports:
            if carrier not in known:
                add(k.id, "unknown carrier", carrier)
            arr = check_profile(k.id, f"coefficient on {carrier}", coeff)
            if arr is None:
                continue
            if np.all(arr > 0):
                positives += 1
            elif np.all(arr < 0):
                negatives.append(arr)
            else:
                add(k.id, "non-positive efficiency", carrier)
        if not any(np.all(a == -1.0) for a in negatives):
            add(k.id, "missing input port")
        elif len(negatives) > 1:
            add(k.id, "multiple input ports")
        if positives == 0:
            add(k.id, "missing output port")
        check_profile(k.id, "availability", k.availability, 0.0, 1.0)
        check_bounds(k)

    conv_ids = {k.id for k in model.converters}
    for s in model.stores:
        if s.carrier not in known:
            add(s.id, "unknown carrier", s.carrier)
        check_bounds(s)
        for name in ("charge_efficiency", "discharge_efficiency"):
            eff = getattr(s, name)
            if not 0 < eff <= 1:
                add(s.id, f"{name} outside (0, 1]")
        if s.cyclic == (s.initial_soc is not None):
            add(s.id, "exactly one of cyclic / initial_soc required")
        if not 0 <= s.standing_loss < 1:
            add(s.id, "standing_loss outside [0, 1)")
        check_profile(s.id, "inflow", s.inflow, 0.0)
        linked = [c for c in (s.linked_charger, s.linked_discharger) if c is not None]
        for cid in linked:
            if cid not in conv_ids:
                add(s.id, "unknown linked converter", cid)
            elif s.carrier not in [c for c, _ in model.converter(cid).ports]:
                add(s.id, "linked converter does not touch store carrier", cid)
        if not linked and (s.charge_efficiency != 1 or s.discharge_efficiency != 1):
            add(s.id, "efficiency on SOC-only store requires linked converters")

    for load in model.loads:
        if load.carrier not in known:
            add(load.id, "unknown carrier", load.carrier)
        check_profile(load.id, "profile", load.profile, 0.0)

    if model.co2 is not None:
        if not math.isfinite(model.co2.budget):
            add("co2", "budget not finite")
        if model.co2.offset_volume < 0:
            add("co2", "negative offset volume")
        if model.co2.carrier not in known:
            add("co2", "unknown carrier", model.co2.carrier)

    # every loaded carrier needs some way to be supplied
    suppliers = {g.carrier for g in model.generators}
    suppliers |= {s.carrier for s in model.stores}
    for k in model.converters:
        suppliers |= {c for c, coeff in k.ports if np.all(np.asarray(coeff, dtype=float) > 0)}
    for load in model.loads:
        if load.carrier in known and load.carrier not in suppliers and not load.sheddable:
            add(load.id, "no supply path", load.carrier)
    return out
