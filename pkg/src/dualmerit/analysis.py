"""Full price-formation analytics for one solved period."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import clearing
from .lp import SolvedState
from .pricing import reconstruct_all


@dataclass
class Analysis:
    market_carrier: str
    bids: list
    curves: dict  # snapshot -> (supply MarketCurve, demand MarketCurve)
    variances: dict
    verdicts: list
    pdc: clearing.PriceDurationCurve
    averaged: tuple
    stats: clearing.SetterStatistics

    def top_setters(self, n: int = 5) -> list:
        rows = [r for r in self.stats.rows if r[3] == "all"]
        return sorted(rows, key=lambda r: (-r[2], r[1], r[0]))[:n]


def analyze(state: SolvedState, market_carrier: str | None = None, threads: int = 1, bin_width: float = 1.0,
            label: str = "", **thresholds) -> Analysis:
    carrier = market_carrier or state.model.electricity
    w = state.weights
    bids = reconstruct_all(state, carrier, threads=threads)
    by_snap = defaultdict(list)
    for rec in bids:
        by_snap[rec.snapshot].append(rec)
    T = state.model.n_snapshots
    curves = {t: clearing.build_curves(by_snap[t]) for t in range(T)}
    variances = clearing.bid_variances(bids, w)
    lam = state.prices[carrier]
    verdicts = [
        clearing.identify_price_setter(by_snap[t], float(lam[t]), variances, weight=float(w[t]), **thresholds)
        for t in range(T)
    ]
    flat = [c for pair in curves.values() for c in pair]
    return Analysis(
        market_carrier=carrier,
        bids=bids,
        curves=curves,
        variances=variances,
        verdicts=verdicts,
        pdc=clearing.price_duration(lam, w, label),
        averaged=clearing.averaged_curves(flat, w, bin_width=bin_width),
        stats=clearing.setter_statistics(verdicts, w),
    )


def pdc_correlation(a: clearing.PriceDurationCurve, b: clearing.PriceDurationCurve) -> float:
    """Pearson correlation of two price-duration curves of equal length."""
    x, y = np.asarray(a.prices), np.asarray(b.prices)
    if x.shape != y.shape:
        raise ValueError("price-duration curves differ in length")
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 1.0 if np.allclose(x, y) else 0.0
    return float(np.corrcoef(x, y)[0, 1])


def setter_agreement(a: list, b: list, weights) -> float:
    """Weighted share of snapshots where both runs name the same price setter."""
    w = np.asarray(weights, dtype=float)
    same = np.array([(u.chosen, u.side) == (v.chosen, v.side) for u, v in zip(a, b)])
    return float(w[same].sum() / w.sum())
