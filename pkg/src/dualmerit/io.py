"""Model definition files: TOML documents with optional CSV time series.

Layout::

    [carriers]
    elec = { unit = "MWh_el", is_electricity = true }

    [snapshots]
    start = "2030-01-01T00:00"   # or timestamps = [...] / file = "ts.csv"
    count = 24
    weight = 1.0                  # scalar, list, or "ts.csv#weight"
    duration = 24.0

    [generators.solar]
    carrier = "elec"
    availability = "profiles.csv#solar"

    [converters.ocgt]
    ports = { gas = -1, elec = 0.4 }

Any time-series field accepts a scalar, an inline list, or ``file.csv#column``
(first CSV column holds ISO-8601 timestamps, one header row).
"""

from __future__ import annotations

import dataclasses
import math
import sys
from pathlib import Path

import pandas as pd
import tomli_w

from .model import (
    DEFAULT_PERIOD_HOURS,
    Carrier,
    Co2Policy,
    ConverterSpec,
    EnergyModel,
    GeneratorSpec,
    LoadSpec,
    SnapshotSet,
    StoreSpec,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ModelFileError(ValueError):
    pass


PROFILE_FIELDS = {
    "generators": {"availability"},
    "converters": {"availability"},
    "stores": {"inflow"},
    "loads": {"profile"},
}
SECTIONS = {
    "generators": GeneratorSpec,
    "converters": ConverterSpec,
    "stores": StoreSpec,
    "loads": LoadSpec,
}


class _CsvCache:
    def __init__(self, base: Path):
        self.base = base
        self.frames: dict[Path, pd.DataFrame] = {}

    def column(self, ref: str) -> pd.Series:
        fname, sep, col = ref.partition("#")
        if not sep or not col:
            raise ModelFileError(f"time-series reference {ref!r} must look like file.csv#column")
        path = (self.base / fname).resolve()
        if path not in self.frames:
            if not path.exists():
                raise ModelFileError(f"missing CSV file for {ref!r}: {path}")
            frame = pd.read_csv(path, encoding="utf-8")
            self.frames[path] = frame.set_index(frame.columns[0])
        frame = self.frames[path]
        if col not in frame.columns:
            raise ModelFileError(f"missing CSV column {ref!r}")
        return frame[col]


def parse_toml(text: str, source: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ModelFileError(f"{source}: {err}") from err


def load_model(path) -> EnergyModel:
    path = Path(path)
    doc = parse_toml(path.read_text(encoding="utf-8"), str(path))
    return model_from_dict(doc, base=path.parent)


def loads_model(text: str, base=".") -> EnergyModel:
    return model_from_dict(parse_toml(text), base=Path(base))


def model_from_dict(doc: dict, base: Path = Path(".")) -> EnergyModel:
    csv = _CsvCache(Path(base))
    unknown = set(doc) - {"carriers", "snapshots", "co2", *SECTIONS}
    if unknown:
        raise ModelFileError(f"unknown section(s): {', '.join(sorted(unknown))}")

    carriers = []
    for cid, spec in doc.get("carriers", {}).items():
        spec = spec if isinstance(spec, dict) else {"unit": spec}
        carriers.append(Carrier(id=cid, unit=spec.get("unit", "MWh"),
                                is_electricity=bool(spec.get("is_electricity", False))))

    snapshots = _snapshots(doc.get("snapshots", {}), csv)
    n = len(snapshots)

    def resolve(value, where):
        if isinstance(value, str):
            col = csv.column(value)
            if len(col) != n:
                raise ModelFileError(f"{where}: {value!r} has {len(col)} rows, expected {n}")
            return tuple(float(v) for v in col.to_numpy())
        if isinstance(value, list):
            return tuple(float(v) for v in value)
        return value

    components = {}
    for section, cls in SECTIONS.items():
        items = []
        names = {f.name for f in dataclasses.fields(cls)}
        for cid, raw in doc.get(section, {}).items():
            raw = dict(raw)
            bad = set(raw) - names
            if bad:
                raise ModelFileError(f"{section}.{cid}: unknown field(s) {', '.join(sorted(bad))}")
            for key in PROFILE_FIELDS[section] & set(raw):
                raw[key] = resolve(raw[key], f"{section}.{cid}.{key}")
            if section == "converters":
                ports = raw.get("ports", {})
                pairs = ports.items() if isinstance(ports, dict) else ports
                raw["ports"] = tuple((c, resolve(k, f"{section}.{cid}.ports.{c}")) for c, k in pairs)
            try:
                items.append(cls(id=cid, **raw))
            except TypeError as err:
                raise ModelFileError(f"{section}.{cid}: {err}") from err
        components[section] = tuple(items)

    co2 = None
    if "co2" in doc:
        try:
            co2 = Co2Policy(**doc["co2"])
        except TypeError as err:
            raise ModelFileError(f"co2: {err}") from err
    return EnergyModel(carriers=tuple(carriers), snapshots=snapshots, co2=co2, **components)


def _snapshots(spec: dict, csv: _CsvCache) -> SnapshotSet:
    duration = float(spec.get("duration", DEFAULT_PERIOD_HOURS))
    weight = spec.get("weight", spec.get("weights", 1.0))
    if "timestamps" in spec:
        stamps = [str(s) for s in spec["timestamps"]]
    elif "file" in spec:
        frame = pd.read_csv(csv.base / spec["file"], encoding="utf-8")
        stamps = [str(s) for s in frame.iloc[:, 0]]
    elif "count" in spec:
        count = int(spec["count"])
        step = float(weight) if not isinstance(weight, (list, str)) else 1.0
        return SnapshotSet.hourly(count, start=spec.get("start", "2030-01-01T00:00"),
                                  weight=step, duration=duration)
    else:
        raise ModelFileError("snapshots: need one of timestamps, file or count")
    if isinstance(weight, str):
        weights = tuple(float(v) for v in csv.column(weight).to_numpy())
    elif isinstance(weight, list):
        weights = tuple(float(v) for v in weight)
    else:
        weights = (float(weight),) * len(stamps)
    return SnapshotSet(tuple(stamps), weights, duration)


def model_to_dict(model: EnergyModel) -> dict:
    """Serialise with every time series inlined (lossless round trip)."""
    doc: dict = {"carriers": {}}
    for c in model.carriers:
        doc["carriers"][c.id] = {"unit": c.unit, "is_electricity": c.is_electricity}
    snaps = model.snapshots
    doc["snapshots"] = {
        "timestamps": list(snaps.timestamps),
        "weights": list(snaps.weights),
        "duration": snaps.duration,
    }
    for section in SECTIONS:
        items = getattr(model, section)
        if not items:
            continue
        doc[section] = {}
        for comp in items:
            entry = {}
            for f in dataclasses.fields(comp):
                if f.name == "id":
                    continue
                value = getattr(comp, f.name)
                if value is None:
                    continue
                if f.name == "ports":
                    value = {c: (list(k) if isinstance(k, tuple) else k) for c, k in value}
                elif isinstance(value, tuple):
                    value = list(value)
                entry[f.name] = value
            doc[section][comp.id] = entry
    if model.co2 is not None:
        doc["co2"] = dataclasses.asdict(model.co2)
    return doc


def dumps_model(model: EnergyModel) -> str:
    return tomli_w.dumps(_finite_safe(model_to_dict(model)))


def save_model(model: EnergyModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def _finite_safe(obj):
    # tomli_w handles inf/nan floats natively; ints must stay ints
    if isinstance(obj, dict):
        return {k: _finite_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_safe(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        raise ModelFileError("NaN cannot be serialised")
    return obj
