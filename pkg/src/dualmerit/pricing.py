"""Ex-post bids and asks on a market carrier, reconstructed from stationarity.

Every dispatch variable satisfies ``o - sum_i M_i * price_i + mu_lower - mu_upper = 0``.
Solving that equation for the price of the market carrier, with all other
carrier prices taken from the solution, gives the price at which the
component is indifferent to running: its ask (supply side) or bid (demand
side). Converter operating costs are per unit of input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import SolvedState
from .model import SHED_SUFFIX, ConverterSpec, GeneratorSpec, StoreSpec, at

SUPPLY = "supply"
DEMAND = "demand"

GENERATOR = "generator"
CONVERTER_OUTPUT = "converter_output"
CONVERTER_INPUT = "converter_input"
STORE_LEVEL = "store_level"
LOAD = "load"


@dataclass(frozen=True)
class BidRecord:
    technology: str
    snapshot: int
    timestamp: str
    side: str
    price: float
    volume_max: float
    volume_dispatched: float
    origin: str
    msv: float | None = None
    carrier: str = ""

    @property
    def utilization(self) -> float:
        if self.volume_max <= 0:
            return 0.0
        return self.volume_dispatched / self.volume_max

    @property
    def zero_volume(self) -> bool:
        return self.volume_max <= 0


@dataclass(frozen=True)
class MarginalStorageValue:
    store: str
    snapshot: int
    value: float


@dataclass(frozen=True)
class StoreLevelPrices:
    """Storage-carrier prices and the SOC relations that link them.

    ``flat_steps[t]`` is True when the SOC at the end of snapshot ``t`` sits
    strictly inside its bounds, so its stationarity condition forces
    ``value[t] == retention[t+1] * value[t+1]`` (or ``value[T-1] == end_value``
    for the last snapshot).
    """

    store: str
    values: tuple  # MarginalStorageValue per snapshot
    flat_steps: tuple
    retention: tuple
    end_value: float  # lambda_cyc for cyclic stores, 0 otherwise
    start_value: float  # lambda_cyc or lambda_init

    def step_gaps(self) -> np.ndarray:
        """``value[t] - retention[t+1]*value[t+1]`` for every step, end value last."""
        v = np.array([m.value for m in self.values])
        nxt = np.append(np.asarray(self.retention[1:]) * v[1:], self.end_value)
        return v - nxt


def _price(state: SolvedState, carrier: str, t: int) -> float:
    return float(state.prices[carrier][t])


def _timestamp(state: SolvedState, t: int) -> str:
    return state.model.snapshots.timestamps[t]


def generator_ask(state: SolvedState, generator: GeneratorSpec | str, snapshot: int) -> BidRecord:
    """Ask = marginal cost + volume-limit rent + emissions valued at the carbon price."""
    gen = state.model.generator(generator) if isinstance(generator, str) else generator
    t = snapshot
    price = gen.marginal_cost + state.mu_volume.get(gen.id, 0.0)
    if gen.co2_intensity:
        price -= gen.co2_intensity * _price(state, state.model.co2.carrier, t)
    cap = state.capacities[gen.id]
    return BidRecord(
        technology=gen.id,
        snapshot=t,
        timestamp=_timestamp(state, t),
        side=SUPPLY,
        price=float(price),
        volume_max=float(at(gen.availability, t) * cap),
        volume_dispatched=float(state.dispatch[gen.id][t]),
        origin=GENERATOR,
        carrier=gen.carrier,
    )


def _port_coefficient(conv: ConverterSpec, carrier: str, t: int) -> float:
    for c, k in conv.ports:
        if c == carrier:
            return at(k, t)
    raise ValueError(f"converter {conv.id} has no port on {carrier!r}")


def _indifference_price(state: SolvedState, conv: ConverterSpec, carrier: str, t: int) -> float:
    """Solve the converter's stationarity condition for the price on ``carrier``.

    Co-products and the input are valued at their solved prices; for a
    single-output converter on its output this is ``(price_in + o) / eta``.
    """
    coeff = _port_coefficient(conv, carrier, t)
    if coeff == 0:
        raise ZeroDivisionError(f"converter {conv.id} has zero efficiency on {carrier!r}")
    others = sum(at(k, t) * _price(state, c, t) for c, k in conv.ports if c != carrier)
    return (conv.marginal_cost - others) / coeff


def _msv(state: SolvedState, conv: ConverterSpec, t: int) -> float | None:
    linked = state.model.linked_store(conv.id)
    if linked is None:
        return None
    return _price(state, linked[0].carrier, t)


def _linked_flow(state: SolvedState, conv_id: str | None, store_carrier: str, t: int) -> float:
    """Energy (store units) moved into or out of a store by its partner converter in snapshot t."""
    if not conv_id:
        return 0.0
    conv = state.model.converter(conv_id)
    return abs(_port_coefficient(conv, store_carrier, t)) * state.dispatch[conv_id][t] * state.weights[t]


def converter_ask(state: SolvedState, converter: ConverterSpec | str, output_carrier: str,
                  snapshot: int) -> BidRecord:
    conv = state.model.converter(converter) if isinstance(converter, str) else converter
    t = snapshot
    eta = _port_coefficient(conv, output_carrier, t)
    if eta <= 0:
        raise ValueError(f"{conv.id} does not output {output_carrier!r}")
    price = _indifference_price(state, conv, output_carrier, t)
    vmax = at(conv.availability, t) * state.capacities[conv.id] * eta
    linked = state.model.linked_store(conv.id)
    if linked is not None and linked[1] == "discharger":
        store = linked[0]
        # same-snapshot charging through the linked charger is also available
        energy = state.soc[store.id][t] + _linked_flow(state, store.linked_charger, store.carrier, t)
        vmax = min(vmax, energy * eta / state.weights[t])
    return BidRecord(
        technology=conv.id,
        snapshot=t,
        timestamp=_timestamp(state, t),
        side=SUPPLY,
        price=float(price),
        volume_max=float(max(vmax, 0.0)),
        volume_dispatched=float(state.dispatch[conv.id][t] * eta),
        origin=CONVERTER_OUTPUT,
        msv=_msv(state, conv, t),
        carrier=output_carrier,
    )


def converter_bid(state: SolvedState, converter: ConverterSpec | str, snapshot: int) -> BidRecord:
    """Willingness to pay for the input carrier: output values minus operating cost."""
    conv = state.model.converter(converter) if isinstance(converter, str) else converter
    t = snapshot
    carrier = conv.input_carrier
    price = _indifference_price(state, conv, carrier, t)
    vmax = at(conv.availability, t) * state.capacities[conv.id]
    linked = state.model.linked_store(conv.id)
    if linked is not None and linked[1] == "charger":
        store = linked[0]
        eta = _port_coefficient(conv, store.carrier, t)
        headroom = state.capacities[store.id] - state.soc[store.id][t]
        headroom += _linked_flow(state, store.linked_discharger, store.carrier, t)
        vmax = min(vmax, headroom / eta / state.weights[t])
    return BidRecord(
        technology=conv.id,
        snapshot=t,
        timestamp=_timestamp(state, t),
        side=DEMAND,
        price=float(price),
        volume_max=float(max(vmax, 0.0)),
        volume_dispatched=float(state.dispatch[conv.id][t]),
        origin=CONVERTER_INPUT,
        msv=_msv(state, conv, t),
        carrier=carrier,
    )


def store_level_prices(state: SolvedState, store: StoreSpec | str, tol: float = 1e-6) -> StoreLevelPrices:
    """Marginal storage values and which SOC steps must be price-flat."""
    st = state.model.store(store) if isinstance(store, str) else store
    T = state.model.n_snapshots
    w = state.weights
    lam = state.prices[st.carrier]
    e = state.soc[st.id]
    cap = state.capacities[st.id]
    scale = max(1.0, abs(cap))
    flat = []
    for j in range(1, T + 1):
        above_floor = not np.isfinite(st.soc_min) or e[j] > st.soc_min + tol * scale
        below_cap = e[j] < cap - tol * scale
        flat.append(bool(above_floor and below_cap))
    values = tuple(MarginalStorageValue(st.id, t, float(lam[t])) for t in range(T))
    end = state.lambda_cyc.get(st.id, 0.0) if st.cyclic else 0.0
    start = state.lambda_cyc[st.id] if st.cyclic else state.lambda_init[st.id]
    retention = tuple(float(r) for r in (1.0 - st.standing_loss) ** w)
    return StoreLevelPrices(st.id, values, tuple(flat), retention, float(end), float(start))


def _store_continuation_value(state: SolvedState, st: StoreSpec, t: int) -> float:
    """Value of one unit still stored at the end of snapshot ``t``."""
    T = state.model.n_snapshots
    if t + 1 < T:
        keep = (1.0 - st.standing_loss) ** state.weights[t + 1]
        return float(keep * state.prices[st.carrier][t + 1])
    return float(state.lambda_cyc.get(st.id, 0.0)) if st.cyclic else 0.0


def store_level_bids(state: SolvedState, store: StoreSpec, snapshot: int) -> list[BidRecord]:
    """Supply and demand records of a store attached directly to the market carrier."""
    t = snapshot
    w = state.weights[t]
    e = state.soc[store.id]
    keep = (1.0 - store.standing_loss) ** w
    net = (e[t + 1] - keep * e[t]) / w  # net charging rate
    price = _store_continuation_value(state, store, t)
    cap = state.capacities[store.id]
    supply_max = max(e[t] - (store.soc_min if np.isfinite(store.soc_min) else 0.0), 0.0)
    common = dict(technology=store.id, snapshot=t, timestamp=_timestamp(state, t),
                  price=price, origin=STORE_LEVEL, msv=price, carrier=store.carrier)
    return [
        BidRecord(side=SUPPLY, volume_max=float(supply_max * store.discharge_efficiency / w),
                  volume_dispatched=float(max(-net, 0.0)), **common),
        BidRecord(side=DEMAND, volume_max=float(max(cap - e[t], 0.0) / store.charge_efficiency / w),
                  volume_dispatched=float(max(net, 0.0)), **common),
    ]


def volume_bids(state: SolvedState, snapshot: int, market_carrier: str | None = None) -> list[BidRecord]:
    """All supply and demand records on ``market_carrier`` for one snapshot."""
    model = state.model
    carrier = market_carrier or model.electricity
    t = snapshot
    out: list[BidRecord] = []
    # shedding is carried by the load's own demand record, not as a supply step
    for gen in model.generators:
        if gen.carrier == carrier:
            out.append(generator_ask(state, gen, t))
    for conv in model.converters:
        for c, k in conv.ports:
            if c != carrier:
                continue
            if at(k, t) > 0:
                out.append(converter_ask(state, conv, carrier, t))
            elif c == conv.input_carrier:
                out.append(converter_bid(state, conv, t))
    for st in model.all_stores():
        if st.carrier == carrier:
            out.extend(store_level_bids(state, st, t))
    for load in model.loads:
        if load.carrier == carrier:
            d = at(load.profile, t)
            shed = state.dispatch.get(load.id + SHED_SUFFIX)
            served = d - (float(shed[t]) if shed is not None else 0.0)
            out.append(BidRecord(load.id, t, _timestamp(state, t), DEMAND, float(load.shed_price),
                                 float(d), max(served, 0.0), LOAD, carrier=carrier))
    return out


def reconstruct_all(state: SolvedState, market_carrier: str | None = None, threads: int = 1) -> list[BidRecord]:
    """Records for every snapshot, in snapshot order."""
    if not state.optimal:
        raise ValueError("bid reconstruction needs an optimal state")
    T = state.model.n_snapshots
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda t: volume_bids(state, t, market_carrier), range(T)))
    else:
        chunks = [volume_bids(state, t, market_carrier) for t in range(T)]
    return [rec for chunk in chunks for rec in chunk]


def sort_key(rec: BidRecord):
    return (rec.snapshot, rec.side, rec.price, rec.technology)


def record_residual(state: SolvedState, rec: BidRecord) -> float:
    """Stationarity residual of the variable behind ``rec``, rebuilt from the record.

    For a generator this is ``ask - price + mu_lower - mu_upper``; converter
    records are rescaled by their port coefficient, so the value matches
    the LP-level residual of the dispatch variable.
    """
    model = state.model
    t = rec.snapshot
    lam = _price(state, rec.carrier, t)
    if rec.origin == GENERATOR:
        return rec.price - lam + state.mu_lower[rec.technology][t] - state.mu_upper[rec.technology][t]
    if rec.origin in (CONVERTER_OUTPUT, CONVERTER_INPUT):
        conv = model.converter(rec.technology)
        coeff = _port_coefficient(conv, rec.carrier, t)
        return coeff * (rec.price - lam) + state.mu_lower[conv.id][t] - state.mu_upper[conv.id][t]
    raise ValueError(f"no single dispatch variable behind {rec.origin} records")


def bid_table(records):
    """Records as a DataFrame in the bids.csv column order and sort."""
    import pandas as pd

    cols = ["timestamp", "technology", "side", "origin", "price", "volume_max", "volume_dispatched", "msv"]
    rows = sorted(records, key=sort_key)
    return pd.DataFrame([{c: getattr(r, c) for c in cols} for r in rows], columns=cols)
