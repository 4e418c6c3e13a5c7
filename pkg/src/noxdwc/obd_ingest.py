"""Parse, validate, unit-normalize and segment 1 Hz OBD CSV logs."""

from __future__ import annotations

import enum
import io
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import DataError, EmptyInputError, SchemaError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEGMENT_GAP_S = 1.5

# attribute -> (quantity, canonical unit)
ATTRIBUTES: dict[str, tuple[str, str]] = {
    "engRPM": ("speed_rot", "rpm"),
    "EGRkgph": ("mass_flow", "kg/h"),
    "AirInkgph": ("mass_flow", "kg/h"),
    "intakeT": ("temperature", "K"),
    "intakeP": ("pressure", "Pa"),
    "Fuelconskgph": ("mass_flow", "kg/h"),
    "accelpedalpos": ("fraction", "%"),
    "ExhaustT": ("temperature", "K"),
    "WheelSpeed": ("speed", "km/h"),
    "EngTq": ("torque", "N*m"),
    "InstFuelEcon": ("economy", "mpg"),
    "SCRingps": ("small_mass_flow", "g/s"),
}
NUMERIC_ATTRIBUTES = tuple(ATTRIBUTES)

# unit -> (scale, offset) such that canonical = value * scale + offset
UNITS: dict[str, dict[str, tuple[float, float]]] = {
    "speed_rot": {"rpm": (1.0, 0.0), "rev/min": (1.0, 0.0), "rev/s": (60.0, 0.0)},
    "mass_flow": {"kg/h": (1.0, 0.0), "g/s": (3.6, 0.0), "kg/s": (3600.0, 0.0), "lb/h": (0.45359237, 0.0)},
    "small_mass_flow": {"g/s": (1.0, 0.0), "mg/s": (1e-3, 0.0), "kg/h": (1 / 3.6, 0.0), "g/h": (1 / 3600, 0.0)},
    "temperature": {"K": (1.0, 0.0), "C": (1.0, 273.15), "degC": (1.0, 273.15), "F": (5 / 9, 273.15 - 32 * 5 / 9)},
    "pressure": {"Pa": (1.0, 0.0), "kPa": (1e3, 0.0), "bar": (1e5, 0.0), "psi": (6894.757293168, 0.0)},
    "fraction": {"%": (1.0, 0.0), "percent": (1.0, 0.0), "ratio": (100.0, 0.0)},
    "speed": {"km/h": (1.0, 0.0), "mph": (1.609344, 0.0), "m/s": (3.6, 0.0)},
    "torque": {"N*m": (1.0, 0.0), "Nm": (1.0, 0.0), "lbf*ft": (1.3558179483314004, 0.0)},
    "economy": {"mpg": (1.0, 0.0), "km/l": (1.0, 0.0)},
}

# Attributes mined per parameter set; keys are report labels, values are columns.
PARAMETER_SETS: dict[int, dict[str, str]] = {
    1: {a: a for a in ("engRPM", "EGRkgph", "AirInkgph", "intakeT", "intakeP", "Fuelconskgph")},
    2: {f"{a}delta": f"{a}delta" for a in ("engRPM", "EGRkgph", "AirInkgph", "intakeT", "intakeP", "Fuelconskgph")},
    3: {
        "accelpedalpos": "accelpedalpos",
        "ExhaustT": "ExhaustT",
        "Wheelspeed": "WheelSpeed",
        "EngTq": "EngTq",
        "InstFuelCon": "InstFuelEcon",
    },
    4: {
        "accelpedalposdelta": "accelpedalposdelta",
        "ExhaustTdelta": "ExhaustTdelta",
        "Wheelspeeddelta": "WheelSpeeddelta",
        "EngTqdelta": "EngTqdelta",
        "InstFuelConsdelta": "InstFuelEcondelta",
    },
}
DELTA_ATTRIBUTES = ("engRPM", "EGRkgph", "AirInkgph", "intakeT", "intakeP", "Fuelconskgph",
                    "accelpedalpos", "ExhaustT", "WheelSpeed", "EngTq", "InstFuelEcon")
PHYSICS_ATTRIBUTES = ("engRPM", "EGRkgph", "AirInkgph", "intakeT", "intakeP", "Fuelconskgph", "SCRingps")
MINING_ATTRIBUTES = tuple(c for s in (1, 3) for c in PARAMETER_SETS[s].values())
_NON_NEGATIVE = ("engRPM", "EGRkgph", "AirInkgph", "intakeT", "intakeP", "Fuelconskgph", "ExhaustT", "SCRingps")


class RecordFlag(enum.IntFlag):
    PARSE_ERROR = 1  # a non-empty cell failed to parse and was cleared
    MISSING = 2  # at least one attribute is absent
    OUT_OF_RANGE = 4  # a physically non-negative attribute is negative
    VALID_PHYSICS = 8
    VALID_MINING = 16


@dataclass(frozen=True)
class ValidityConfig:
    fuel_floor: float = 0.1  # kg/h
    idle_floor: float = 400.0  # rev/min


@dataclass(frozen=True)
class ColumnMapping:
    """Maps canonical attribute names to CSV column names and declared units."""

    columns: Mapping[str, str] = field(default_factory=dict)
    units: Mapping[str, str] = field(default_factory=dict)
    timestamp: str = "timestamp"
    trip_index: str = "trip_index"

    def column(self, attr: str) -> str:
        return self.columns.get(attr, attr)

    def unit(self, attr: str) -> str:
        return self.units.get(attr, ATTRIBUTES[attr][1])

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnMapping":
        cols = dict(d.get("columns", {}))
        units = dict(d.get("units", {}))
        for attr in list(cols) + list(units):
            if attr not in ATTRIBUTES and attr not in ("timestamp", "trip_index"):
                raise DataError(f"mapping names unknown attribute {attr!r}")
        for attr, unit in units.items():
            quantity = ATTRIBUTES[attr][0]
            if unit not in UNITS[quantity]:
                raise DataError(f"unit {unit!r} not supported for {attr}; choose from {sorted(UNITS[quantity])}")
        return cls(
            columns={k: v for k, v in cols.items() if k in ATTRIBUTES},
            units=units,
            timestamp=cols.get("timestamp", "timestamp"),
            trip_index=cols.get("trip_index", "trip_index"),
        )

    @classmethod
    def from_toml(cls, path: str | os.PathLike) -> "ColumnMapping":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))


@dataclass(frozen=True)
class ObdRecord:
    timestamp: float
    trip_index: int
    engRPM: float
    EGRkgph: float
    AirInkgph: float
    intakeT: float
    intakeP: float
    Fuelconskgph: float
    accelpedalpos: float
    ExhaustT: float
    WheelSpeed: float
    EngTq: float
    InstFuelEcon: float
    SCRingps: float
    validity: RecordFlag = RecordFlag(0)

    def __getitem__(self, key):
        return getattr(self, key)


@dataclass(frozen=True)
class RecordSet:
    """Ordered OBD records held column-wise.

    ``frame`` has one row per record with columns ``timestamp``,
    ``trip_index``, ``segment``, every attribute in canonical units, any
    ``<attr>delta`` columns, and an integer ``flags`` column. Absent values
    are NaN. Operations return new record sets; never mutate ``frame``.
    """

    frame: pd.DataFrame
    source: str = "<memory>"
    dropped_rows: int = 0
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def flags(self) -> np.ndarray:
        return self.frame["flags"].to_numpy()

    def has(self, flag: RecordFlag) -> np.ndarray:
        return (self.flags & int(flag)) != 0

    @property
    def delta_columns(self) -> list[str]:
        return [c for c in self.frame.columns if c.endswith("delta")]

    def record(self, i: int) -> ObdRecord:
        row = self.frame.iloc[i]
        kw = {a: float(row[a]) for a in NUMERIC_ATTRIBUTES}
        return ObdRecord(
            timestamp=float(row["timestamp"]),
            trip_index=int(row["trip_index"]),
            validity=RecordFlag(int(row["flags"])),
            **kw,
        )

    def records(self) -> Iterator[ObdRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def segments(self) -> list[dict]:
        out = []
        seg = self.frame["segment"].to_numpy()
        if len(seg) == 0:
            return out
        starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
        ends = np.r_[starts[1:], len(seg)]
        ts = self.frame["timestamp"].to_numpy()
        trips = self.frame["trip_index"].to_numpy()
        for s, e in zip(starts, ends):
            out.append({
                "segment": int(seg[s]),
                "trip_index": int(trips[s]),
                "start_row": int(s),
                "n_rows": int(e - s),
                "t_start": float(ts[s]),
                "t_end": float(ts[e - 1]),
            })
        return out

    def manifest(self) -> dict:
        flags = self.flags
        tallies = {f.name: int(np.count_nonzero(flags & int(f))) for f in RecordFlag}
        return {
            "schema_version": self.schema_version,
            "source": self.source,
            "rows": len(self),
            "dropped_rows": self.dropped_rows,
            "flag_counts": tallies,
            "segments": self.segments(),
        }


def _read_text(source) -> tuple[str, str]:
    if isinstance(source, (str, os.PathLike)):
        name = str(source)
        raw = Path(source).read_bytes()
    else:
        name = getattr(source, "name", "<stream>")
        raw = source.read()
    if isinstance(raw, str):
        return raw, name
    return raw.decode("utf-8-sig"), name


def _strip_comments(text: str) -> str:
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return "".join(lines[i:])


def convert_units(values, attr: str, unit: str):
    """Convert `values` of `attr` declared in `unit` to the canonical unit."""
    quantity = ATTRIBUTES[attr][0]
    try:
        scale, offset = UNITS[quantity][unit]
    except KeyError:
        raise DataError(f"unit {unit!r} not supported for {attr}") from None
    if scale == 1.0 and offset == 0.0:
        return values
    return values * scale + offset


def _to_float(col: pd.Series) -> np.ndarray:
    """Exact decimal-to-float parse; unparseable cells become NaN.

    ``pd.to_numeric`` alone is not correctly rounded, so it only locates the
    bad cells and the good ones go through Python's float parser.
    """
    ok = pd.to_numeric(col, errors="coerce").notna().to_numpy()
    out = np.full(len(col), np.nan)
    if ok.any():
        out[ok] = col[ok].astype(float).to_numpy()
    return out


def _parse_timestamps(col: pd.Series) -> np.ndarray:
    numeric = _to_float(col)
    if np.isfinite(numeric).sum() >= col.ne("").sum() / 2:
        return numeric
    parsed = pd.to_datetime(col, errors="coerce", utc=True)
    secs = (parsed - pd.Timestamp(0, tz="UTC")) / pd.Timedelta(seconds=1)
    return secs.to_numpy(dtype=float)


def assign_segments(timestamps: np.ndarray, trips: np.ndarray, gap: float = SEGMENT_GAP_S) -> np.ndarray:
    """Segment ids: a new segment starts on trip change, a gap > `gap` s, or a non-increasing timestamp."""
    if len(timestamps) == 0:
        return np.zeros(0, dtype=np.int64)
    dt = np.diff(timestamps)
    brk = (np.diff(trips) != 0) | (dt > gap) | (dt <= 0)
    return np.r_[0, np.cumsum(brk)].astype(np.int64)


def parse_obd_csv(source: str | os.PathLike | BinaryIO, mapping: ColumnMapping | None = None) -> RecordSet:
    """Read an OBD CSV into a :class:`RecordSet` in canonical units.

    Unparseable numeric cells become NaN and set ``PARSE_ERROR``; rows whose
    timestamp cannot be parsed are dropped and counted in ``dropped_rows``.

    Raises:
        EmptyInputError: the file has no header or no data rows.
        SchemaError: a mapped attribute column is missing.
    """
    mapping = mapping or ColumnMapping()
    text, name = _read_text(source)
    body = _strip_comments(text)
    if not body.strip():
        raise EmptyInputError(f"{name}: empty input")
    df = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False, skipinitialspace=True)
    if df.empty:
        raise EmptyInputError(f"{name}: no data rows")

    if mapping.timestamp not in df.columns:
        raise SchemaError("timestamp" if mapping.timestamp == "timestamp" else mapping.timestamp)
    for attr in NUMERIC_ATTRIBUTES:
        if mapping.column(attr) not in df.columns:
            raise SchemaError(attr, f"missing mandatory column {mapping.column(attr)!r} for attribute {attr}")

    ts = _parse_timestamps(df[mapping.timestamp].str.strip())
    keep = np.isfinite(ts)
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("%s: dropped %d rows with unparseable timestamps", name, dropped)
    df = df.loc[keep].reset_index(drop=True)
    ts = ts[keep]

    if mapping.trip_index in df.columns:
        trips = np.nan_to_num(_to_float(df[mapping.trip_index].str.strip()), nan=-1).astype(np.int64)
    else:
        trips = np.zeros(len(df), dtype=np.int64)

    flags = np.zeros(len(df), dtype=np.int64)
    out = {"timestamp": ts, "trip_index": trips, "segment": assign_segments(ts, trips)}
    for attr in NUMERIC_ATTRIBUTES:
        raw = df[mapping.column(attr)].str.strip()
        vals = _to_float(raw)
        vals[~np.isfinite(vals)] = np.nan
        bad = np.isnan(vals) & (raw != "").to_numpy()
        flags[bad] |= RecordFlag.PARSE_ERROR
        flags[np.isnan(vals)] |= RecordFlag.MISSING
        out[attr] = convert_units(vals, attr, mapping.unit(attr))
    out["flags"] = flags
    return RecordSet(pd.DataFrame(out), source=name, dropped_rows=dropped)


def validate_records(rs: RecordSet, cfg: ValidityConfig = ValidityConfig()) -> RecordSet:
    """Recompute ``VALID_PHYSICS``/``VALID_MINING``. Never drops records."""
    f = rs.frame
    flags = rs.flags & ~int(RecordFlag.VALID_PHYSICS | RecordFlag.VALID_MINING | RecordFlag.OUT_OF_RANGE)

    negative = np.zeros(len(f), dtype=bool)
    for attr in _NON_NEGATIVE:
        negative |= (f[attr] < 0).to_numpy()
    flags = np.where(negative, flags | int(RecordFlag.OUT_OF_RANGE), flags)

    present = f[list(PHYSICS_ATTRIBUTES)].notna().all(axis=1).to_numpy()
    with np.errstate(invalid="ignore"):
        physics = (
            present
            & ~negative
            & (f["Fuelconskgph"] >= cfg.fuel_floor).to_numpy()
            & (f["engRPM"] >= cfg.idle_floor).to_numpy()
            & (f["AirInkgph"] > 0).to_numpy()
            & (f["intakeT"] > 0).to_numpy()
            & (f["intakeP"] > 0).to_numpy()
        )
    mining = f[list(MINING_ATTRIBUTES)].notna().all(axis=1).to_numpy()
    flags = flags | np.where(physics, int(RecordFlag.VALID_PHYSICS), 0) | np.where(mining, int(RecordFlag.VALID_MINING), 0)
    frame = f.copy()
    frame["flags"] = flags.astype(np.int64)
    return replace(rs, frame=frame)


def compute_deltas(rs: RecordSet, attrs) -> RecordSet:
    """Add ``<attr>delta`` columns: a(t) - a(t-1) within a segment, NaN at segment heads."""
    attrs = list(attrs)
    for a in attrs:
        if a not in DELTA_ATTRIBUTES:
            raise DataError(f"no delta defined for attribute {a!r}")
    frame = rs.frame.copy()
    grouped = frame.groupby("segment", sort=False)
    for a in attrs:
        frame[f"{a}delta"] = grouped[a].diff()
    return replace(rs, frame=frame)


def delta_sources(set_id: int) -> list[str]:
    """Raw attributes whose deltas parameter set `set_id` needs."""
    cols = PARAMETER_SETS[set_id].values()
    return [c[: -len("delta")] for c in cols if c.endswith("delta")]


def write_canonical_csv(rs: RecordSet, dest, header_lines: list[str] = ()) -> None:
    """Write records in canonical units; re-parsing with the default mapping is lossless."""
    cols = ["timestamp", "trip_index", *NUMERIC_ATTRIBUTES]
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    rs.frame[cols].to_csv(buf, index=False, float_format=None, lineterminator="\n")
    data = buf.getvalue()
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(data)
    else:
        dest.write(data)


def load_records(path, mapping: ColumnMapping | None = None, cfg: ValidityConfig = ValidityConfig()) -> RecordSet:
    """Parse, validate and add every delta column used by parameter sets 2 and 4."""
    rs = validate_records(parse_obd_csv(path, mapping), cfg)
    return compute_deltas(rs, DELTA_ATTRIBUTES)
