"""Market curves, price-setter identification and price statistics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .pricing import DEMAND, SUPPLY, BidRecord

PRICE_TOL = 0.01
UTIL_MAX = 0.99
UTIL_MIN = 0.01
MIN_ENERGY = 10.0
ZERO_PRICE = 1.0
MIN_COVERAGE = 0.05

UNIQUE_SUPPLY = "unique_supply"
UNIQUE_DEMAND = "unique_demand"
TIEBREAK_SUPPLY = "variance_tiebreak_supply"
TIEBREAK_DEMAND = "variance_tiebreak_demand"
NO_CANDIDATE = "no_candidate"


@dataclass(frozen=True)
class CurveStep:
    start: float
    end: float
    price: float
    technology: str


@dataclass(frozen=True)
class MarketCurve:
    snapshot: int | None
    side: str
    steps: tuple

    @property
    def total(self) -> float:
        return self.steps[-1].end if self.steps else 0.0

    def price_at(self, volume: float) -> float | None:
        """Step price at cumulative ``volume``; None beyond the end of the curve."""
        ends = np.array([s.end for s in self.steps])
        i = int(np.searchsorted(ends, volume, side="right"))
        return self.steps[i].price if i < len(self.steps) else None


def build_curves(bids) -> tuple[MarketCurve, MarketCurve]:
    """Supply ascending and demand descending step curves from one snapshot's records.

    Zero-volume records are dropped; ties in price are ordered by technology id.
    """
    bids = [b for b in bids if b.volume_max > 0]
    snaps = {b.snapshot for b in bids}
    if len(snaps) > 1:
        raise ValueError("build_curves expects records for a single snapshot")
    snap = snaps.pop() if snaps else None

    def curve(side, key):
        recs = sorted((b for b in bids if b.side == side), key=key)
        steps, pos = [], 0.0
        for b in recs:
            steps.append(CurveStep(pos, pos + b.volume_max, b.price, b.technology))
            pos += b.volume_max
        return MarketCurve(snap, side, tuple(steps))

    return (curve(SUPPLY, lambda b: (b.price, b.technology)),
            curve(DEMAND, lambda b: (-b.price, b.technology)))


# ---------------------------------------------------------------------------
# price setter


@dataclass(frozen=True)
class Candidate:
    technology: str
    side: str
    price: float
    utilization: float
    variance: float


@dataclass(frozen=True)
class PriceSetterVerdict:
    snapshot: int
    timestamp: str
    market_price: float
    candidates: tuple
    chosen: str | None
    side: str | None
    rule_fired: str


def bid_variances(records, weights) -> dict:
    """Weighted population variance of each (technology, side)'s prices over the period."""
    w = np.asarray(weights, dtype=float)
    prices: dict = defaultdict(list)
    snaps: dict = defaultdict(list)
    for r in records:
        prices[r.technology, r.side].append(r.price)
        snaps[r.technology, r.side].append(r.snapshot)
    out = {}
    for key, p in prices.items():
        p = np.asarray(p)
        ww = w[np.asarray(snaps[key])]
        mean = np.average(p, weights=ww)
        out[key] = float(np.average((p - mean) ** 2, weights=ww))
    return out


def candidate_ok(rec: BidRecord, market_price: float, weight: float = 1.0, price_tol: float = PRICE_TOL,
                 util_max: float = UTIL_MAX, util_min: float = UTIL_MIN, min_energy: float = MIN_ENERGY) -> bool:
    if abs(rec.price - market_price) > price_tol:
        return False
    util = rec.utilization
    if not util < util_max:
        return False
    return util > util_min or weight * rec.volume_dispatched >= min_energy


def identify_price_setter(bids, market_price: float, variances: dict, weight: float = 1.0,
                          **thresholds) -> PriceSetterVerdict:
    bids = list(bids)
    snapshot = bids[0].snapshot if bids else -1
    timestamp = bids[0].timestamp if bids else ""
    cands = []
    for rec in bids:
        if candidate_ok(rec, market_price, weight, **thresholds):
            var = variances[rec.technology, rec.side]
            cands.append(Candidate(rec.technology, rec.side, rec.price, rec.utilization, var))
    cands.sort(key=lambda c: (c.side != SUPPLY, c.technology))
    supply = [c for c in cands if c.side == SUPPLY]
    pool = supply or cands
    if not pool:
        return PriceSetterVerdict(snapshot, timestamp, market_price, tuple(cands), None, None, NO_CANDIDATE)
    if len(pool) == 1:
        rule = UNIQUE_SUPPLY if supply else UNIQUE_DEMAND
        best = pool[0]
    else:
        rule = TIEBREAK_SUPPLY if supply else TIEBREAK_DEMAND
        # variances equal to ~1e-9 relative count as ties, resolved by id
        best = min(pool, key=lambda c: (round(c.variance, 9), c.technology))
    return PriceSetterVerdict(snapshot, timestamp, market_price, tuple(cands), best.technology, best.side, rule)


# ---------------------------------------------------------------------------
# single-period clearing oracle


@dataclass(frozen=True)
class OracleClearing:
    price: float
    volume: float
    dispatched: dict  # (technology, side) -> MW
    flag: str = ""  # "", "degenerate", "no_intersection"


def clear_single_period_oracle(bids) -> OracleClearing:
    """Intersect the step curves of one snapshot by direct enumeration.

    Only valid without intertemporal coupling. At a vertical overlap the
    supply-side price of the marginal accepted step is returned; a
    horizontal overlap clears at the midpoint volume. If nothing trades the
    price is the highest demand step (flag ``no_intersection``).
    """
    supply, demand = build_curves(bids)
    s = [(st.price, st.end - st.start, st.technology) for st in supply.steps]
    d = [(st.price, st.end - st.start, st.technology) for st in demand.steps]
    if not s and not d:
        return OracleClearing(float("nan"), 0.0, {}, "no_intersection")
    sp = np.array([x[0] for x in s])
    sv = np.array([x[1] for x in s])
    dp = np.array([x[0] for x in d])
    dv = np.array([x[1] for x in d])
    tol = 1e-9 * max(1.0, sv.sum(), dv.sum())

    def window(p):
        lo = max(sv[sp < p].sum(), dv[dp > p].sum())
        hi = min(sv[sp <= p].sum(), dv[dp >= p].sum())
        return lo, hi

    levels = np.unique(np.concatenate([sp, dp]))
    probes = list(levels)
    probes += list((levels[:-1] + levels[1:]) / 2)
    probes += [levels[0] - 1.0, levels[-1] + 1.0]
    clearing = sorted(p for p in probes if window(p)[0] <= window(p)[1] + tol)

    lo_q, hi_q = window(clearing[0]) if clearing else (0.0, 0.0)
    if not clearing or max(window(p)[1] for p in clearing) <= tol:
        price = float(dp.max()) if dp.size else float(sp.min())
        return OracleClearing(price, 0.0, {}, "no_intersection")

    flag = ""
    p_lo, p_hi = clearing[0], clearing[-1]
    if p_hi - p_lo > 1e-12:
        flag = "degenerate"
        supply_levels = [p for p in np.unique(sp) if p_lo - 1e-12 <= p <= p_hi + 1e-12]
        price = float(supply_levels[0]) if supply_levels else float(p_lo)
    else:
        price = float(p_lo)
    lo_q, hi_q = window(price)
    volume = 0.5 * (lo_q + hi_q)

    dispatched = {}
    for side, steps in ((SUPPLY, s), (DEMAND, d)):
        remaining = volume
        ordered = steps if side == SUPPLY else steps  # already in merit order
        for p, v, tech in ordered:
            take = min(v, max(remaining, 0.0))
            if (side == SUPPLY and p > price) or (side == DEMAND and p < price):
                take = 0.0
            dispatched[tech, side] = take
            remaining -= take
    return OracleClearing(price, float(volume), dispatched, flag)


# ---------------------------------------------------------------------------
# period statistics


@dataclass(frozen=True)
class PriceDurationCurve:
    label: str
    prices: np.ndarray  # descending
    weights: np.ndarray
    zero_price_share: float


def price_duration(prices, weights, label: str = "", zero_price: float = ZERO_PRICE) -> PriceDurationCurve:
    p = np.asarray(prices, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(-p, kind="stable")
    total = math.fsum(w)  # exactly rounded, so recounts in any order agree bit for bit
    share = math.fsum(w[p < zero_price]) / total if total > 0 else 0.0
    return PriceDurationCurve(label, p[order], w[order], share)


def price_duration_of(state, market_carrier: str | None = None, label: str = "") -> PriceDurationCurve:
    carrier = market_carrier or state.model.electricity
    return price_duration(state.prices[carrier], state.weights, label)


@dataclass(frozen=True)
class AveragedCurve:
    side: str
    bins: np.ndarray  # upper edge of each bin, MW
    mean_price: np.ndarray
    coverage: np.ndarray


def averaged_curves(curves, weights, bin_width: float = 1.0,
                    min_coverage: float = MIN_COVERAGE) -> tuple[AveragedCurve, AveragedCurve]:
    """Weighted mean price per volume bin across snapshots.

    A snapshot covers a bin when its curve extends past the bin midpoint.
    Bins covered by less than ``min_coverage`` of the weighted period are dropped.
    """
    w = np.asarray(weights, dtype=float)
    out = []
    for side in (SUPPLY, DEMAND):
        side_curves = [c for c in curves if c.side == side]
        total_w = sum(w[c.snapshot] for c in side_curves) if side_curves else 0.0
        max_vol = max((c.total for c in side_curves), default=0.0)
        n_bins = int(np.ceil(max_vol / bin_width)) if max_vol > 0 else 0
        mids = (np.arange(n_bins) + 0.5) * bin_width
        num = np.zeros(n_bins)
        cov = np.zeros(n_bins)
        for c in side_curves:
            if not c.steps:
                continue
            ends = np.array([st.end for st in c.steps])
            prices = np.array([st.price for st in c.steps])
            idx = np.searchsorted(ends, mids, side="right")
            inside = idx < len(ends)
            num[inside] += w[c.snapshot] * prices[idx[inside]]
            cov[inside] += w[c.snapshot]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = num / cov
            coverage = cov / total_w if total_w > 0 else cov
        keep = coverage >= min_coverage - 1e-12
        edges = (np.arange(n_bins) + 1) * bin_width
        out.append(AveragedCurve(side, edges[keep], mean[keep], coverage[keep]))
    return out[0], out[1]


def weighted_quantile(values, weights, q: float) -> float:
    """Smallest value whose cumulative weight share reaches ``q``."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / w.sum()
    i = int(np.searchsorted(cum, q - 1e-12, side="left"))
    return float(v[order][min(i, len(v) - 1)])


def price_band(price: float, q30: float, q70: float) -> str:
    if price < q30:
        return "low"
    if price <= q70:
        return "mid"
    return "high"


@dataclass(frozen=True)
class SetterStatistics:
    rows: tuple  # (technology, side, share, band)
    undetermined_share: float
    q30: float
    q70: float

    def share(self, technology: str, side: str, band: str = "all") -> float:
        for tech, s, share, b in self.rows:
            if tech == technology and s == side and b == band:
                return share
        return 0.0


def setter_statistics(verdicts, weights, q_low: float = 0.3, q_high: float = 0.7) -> SetterStatistics:
    """Weighted price-setting shares per technology, overall and per price band.

    Shares are normalised over decided snapshots (band-wise for the bands);
    ``no_candidate`` snapshots are reported separately as undetermined.
    """
    w = np.asarray(weights, dtype=float)
    verdicts = list(verdicts)
    if not verdicts:
        return SetterStatistics((), 0.0, float("nan"), float("nan"))
    prices = np.array([v.market_price for v in verdicts])
    vw = np.array([w[v.snapshot] for v in verdicts])
    q30 = weighted_quantile(prices, vw, q_low)
    q70 = weighted_quantile(prices, vw, q_high)
    decided = [(v, wt) for v, wt in zip(verdicts, vw) if v.rule_fired != NO_CANDIDATE]
    undetermined = float(vw.sum() - sum(wt for _, wt in decided)) / float(vw.sum())

    rows = []
    for band in ("all", "low", "mid", "high"):
        acc: dict = defaultdict(float)
        total = 0.0
        for v, wt in decided:
            if band != "all" and price_band(v.market_price, q30, q70) != band:
                continue
            acc[v.chosen, v.side] += wt
            total += wt
        for (tech, side), wt in sorted(acc.items(), key=lambda kv: (kv[0][1] != SUPPLY, kv[0][0])):
            rows.append((tech, side, wt / total, band))
    return SetterStatistics(tuple(rows), undetermined, q30, q70)
