"""CSV export and import of solved states and analytics.

All numbers are written with 9 significant digits; row order is fixed by
the data (snapshot order, then component order in the model), so reruns on
the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .analysis import Analysis
from .io import load_model, save_model
from .lp import KktReport, SolvedState

SPILL_SUFFIX = ":spill"
MODEL_FILE = "model.toml"
REQUIRED_STATE_FILES = ("state.csv", "prices.csv", "dispatch.csv", "capacities.csv",
                        "duals_bounds.csv", "soc.csv", "duals_other.csv", MODEL_FILE)


class MissingOutputError(FileNotFoundError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        if np.isnan(x):
            return ""
        v = float(x)
        return format(0.0 if v == 0 else v, ".9g")
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingOutputError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# solved state


def write_state(state: SolvedState, out, kkt: KktReport | None = None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = state.model
    stamps = model.snapshots.timestamps
    save_model(model, out / MODEL_FILE)
    write_csv(out / "state.csv", ["key", "value"], [
        ("status", state.status),
        ("mode", state.mode),
        ("objective", state.objective),
        ("co2_price", state.co2_price),
    ])
    if not state.optimal:
        return
    write_csv(out / "prices.csv", ["timestamp", "carrier", "lambda"],
              [(ts, c, state.prices[c][t]) for t, ts in enumerate(stamps) for c in model.carrier_ids()])

    dispatch_ids = [g.id for g in model.all_generators()] + [k.id for k in model.converters]
    rows = []
    for t, ts in enumerate(stamps):
        for cid in dispatch_ids:
            rows.append((ts, cid, state.dispatch[cid][t]))
        for sid, s in state.spill.items():
            rows.append((ts, sid + SPILL_SUFFIX, s[t]))
        if state.offset is not None:
            rows.append((ts, "co2-offset", state.offset[t]))
    write_csv(out / "dispatch.csv", ["timestamp", "component", "value"], rows)

    write_csv(out / "capacities.csv", ["component", "capacity"], list(state.capacities.items()))

    store_ids = [s.id for s in model.all_stores()]
    rows = []
    for t, ts in enumerate(stamps):
        for cid in dispatch_ids:
            rows.append((ts, cid, state.mu_lower[cid][t], state.mu_upper[cid][t]))
        for sid in store_ids:
            rows.append((ts, sid, state.mu_lower[sid][t + 1], state.mu_upper[sid][t + 1]))
    write_csv(out / "duals_bounds.csv", ["timestamp", "component", "mu_lower", "mu_upper"], rows)

    rows = [("initial", sid, state.soc[sid][0]) for sid in store_ids]
    rows += [(ts, sid, state.soc[sid][t + 1]) for t, ts in enumerate(stamps) for sid in store_ids]
    write_csv(out / "soc.csv", ["timestamp", "store", "soc"], rows)

    rows = [("mu_volume", k, v) for k, v in state.mu_volume.items()]
    rows += [("lambda_cyc", k, v) for k, v in state.lambda_cyc.items()]
    rows += [("lambda_init", k, v) for k, v in state.lambda_init.items()]
    write_csv(out / "duals_other.csv", ["kind", "component", "value"], rows)

    if kkt is not None:
        (out / "kkt_report.txt").write_text("\n".join(kkt.lines()) + "\n", encoding="utf-8")


def read_state(directory) -> SolvedState:
    """Rebuild a SolvedState from the CSVs written by :func:`write_state`."""
    d = Path(directory)
    for name in REQUIRED_STATE_FILES:
        if not (d / name).exists():
            raise MissingOutputError(f"missing solve output {name} in {d}")
    model = load_model(d / MODEL_FILE)
    meta = {r["key"]: r["value"] for r in read_csv(d / "state.csv")}
    T = model.n_snapshots
    pos = {ts: t for t, ts in enumerate(model.snapshots.timestamps)}

    def num(s):
        return float(s) if s != "" else np.nan

    prices = {c: np.zeros(T) for c in model.carrier_ids()}
    for r in read_csv(d / "prices.csv"):
        prices[r["carrier"]][pos[r["timestamp"]]] = num(r["lambda"])

    dispatch, spill, offset = {}, {}, None
    for r in read_csv(d / "dispatch.csv"):
        comp, t, v = r["component"], pos[r["timestamp"]], num(r["value"])
        if comp.endswith(SPILL_SUFFIX):
            spill.setdefault(comp[: -len(SPILL_SUFFIX)], np.zeros(T))[t] = v
        elif comp == "co2-offset":
            offset = offset if offset is not None else np.zeros(T)
            offset[t] = v
        else:
            dispatch.setdefault(comp, np.zeros(T))[t] = v

    caps = {r["component"]: num(r["capacity"]) for r in read_csv(d / "capacities.csv")}
    store_ids = {s.id for s in model.all_stores()}
    mu_lo, mu_up = {}, {}
    for r in read_csv(d / "duals_bounds.csv"):
        comp, t = r["component"], pos[r["timestamp"]]
        if comp in store_ids:
            lo = mu_lo.setdefault(comp, np.full(T + 1, np.nan))
            up = mu_up.setdefault(comp, np.full(T + 1, np.nan))
            lo[t + 1], up[t + 1] = num(r["mu_lower"]), num(r["mu_upper"])
        else:
            mu_lo.setdefault(comp, np.zeros(T))[t] = num(r["mu_lower"])
            mu_up.setdefault(comp, np.zeros(T))[t] = num(r["mu_upper"])

    soc = {}
    for r in read_csv(d / "soc.csv"):
        arr = soc.setdefault(r["store"], np.zeros(T + 1))
        arr[0 if r["timestamp"] == "initial" else pos[r["timestamp"]] + 1] = num(r["soc"])

    other = {"mu_volume": {}, "lambda_cyc": {}, "lambda_init": {}}
    for r in read_csv(d / "duals_other.csv"):
        other[r["kind"]][r["component"]] = num(r["value"])

    return SolvedState(
        status=meta["status"],
        model=model,
        mode=meta.get("mode", "expansion"),
        objective=num(meta.get("objective", "")),
        dispatch=dispatch,
        soc=soc,
        spill=spill,
        offset=offset,
        capacities=caps,
        prices=prices,
        mu_lower=mu_lo,
        mu_upper=mu_up,
        **other,
    )


def read_capacities(path) -> dict:
    return {r["component"]: float(r["capacity"]) for r in read_csv(Path(path))}


# ---------------------------------------------------------------------------
# analytics


def _safe_name(timestamp: str) -> str:
    return re.sub(r"[^0-9A-Za-z_.-]", "-", timestamp)


def write_analysis(an: Analysis, out, timestamps) -> None:
    from .pricing import bid_table

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    table = bid_table(an.bids)
    write_csv(out / "bids.csv", list(table.columns), table.itertuples(index=False, name=None))

    write_csv(out / "price_setters.csv",
              ["timestamp", "price", "chosen_technology", "side", "rule_fired", "n_candidates"],
              [(v.timestamp or timestamps[v.snapshot], v.market_price, v.chosen or "undetermined",
                v.side or "", v.rule_fired, len(v.candidates)) for v in an.verdicts])

    for t, (sup, dem) in an.curves.items():
        rows = [(c.side, st.start, st.end, st.price, st.technology) for c in (sup, dem) for st in c.steps]
        write_csv(out / "curves" / f"{_safe_name(timestamps[t])}.csv",
                  ["side", "step_start", "step_end", "price", "technology"], rows)

    write_csv(out / "pdc.csv", ["rank", "weight", "price"],
              [(i + 1, w, p) for i, (w, p) in enumerate(zip(an.pdc.weights, an.pdc.prices))])

    for avg in an.averaged:
        write_csv(out / f"averaged_{avg.side}.csv", ["mw_bin", "mean_price", "coverage"],
                  zip(avg.bins, avg.mean_price, avg.coverage))

    rows = list(an.stats.rows)
    rows.append(("undetermined", "", an.stats.undetermined_share, "all"))
    write_csv(out / "stats.csv", ["technology", "side", "share", "band"], rows)


def summary_lines(an: Analysis) -> list[str]:
    lines = [f"market_carrier {an.market_carrier}",
             f"zero_price_share {an.pdc.zero_price_share:.4f}",
             f"undetermined_share {an.stats.undetermined_share:.4f}",
             "top price setters:"]
    for tech, side, share, _ in an.top_setters(5):
        lines.append(f"  {tech:<24} {side:<7} {share:.4f}")
    return lines
