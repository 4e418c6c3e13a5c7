"""Run configuration: TOML loading, CLI overrides and the provenance hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import DataError
from .features import EngineSpec
from .obd_ingest import PARAMETER_SETS, ColumnMapping, ValidityConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def sample_dataset() -> Path:
    """Path of the bundled 500-row synthetic OBD log."""
    return Path(str(resources.files("noxdwc") / "data" / "sample_obd.csv"))


@dataclass(frozen=True)
class DwcParams:
    set_id: int = 1
    L: int = 3
    threshold: float = 30.0  # ppm, summed over the window
    epsilon: float = 2.5
    minsupp: float = 0.01
    delta: float = 0.0  # s
    mode: str = "sum"
    constant_only: bool = False
    edge_correction: bool = True
    max_size: int | None = None

    def __post_init__(self):
        if self.set_id not in PARAMETER_SETS:
            raise DataError(f"parameter set must be one of {sorted(PARAMETER_SETS)}, got {self.set_id}")
        if self.L < 1:
            raise DataError(f"window length L must be >= 1, got {self.L}")
        if not 0 < self.minsupp <= 1:
            raise DataError(f"minsupp must lie in (0, 1], got {self.minsupp}")
        if self.delta < 0 or self.threshold < 0:
            raise DataError("delta and threshold must be non-negative")
        if self.mode not in ("sum", "every"):
            raise DataError(f"unknown divergence mode {self.mode!r}")


@dataclass(frozen=True)
class RunConfig:
    data: Path | None = None  # None -> bundled sample
    mapping: ColumnMapping = field(default_factory=ColumnMapping)
    engine: EngineSpec = field(default_factory=EngineSpec)
    validity: ValidityConfig = field(default_factory=ValidityConfig)
    model: str = "proposed"
    split: float | None = None  # training fraction
    seed: int = 0
    foreign_coefficients: Path | None = None
    max_iter: int = 500_000
    dwc: DwcParams = field(default_factory=DwcParams)
    out: Path = Path("noxdwc_out")

    @property
    def dataset(self) -> Path:
        return self.data if self.data is not None else sample_dataset()

    def replace(self, **kw) -> "RunConfig":
        dwc_keys = {f.name for f in dataclasses.fields(DwcParams)}
        dwc_kw = {k: kw.pop(k) for k in list(kw) if k in dwc_keys}
        cfg = dataclasses.replace(self, **kw)
        if dwc_kw:
            cfg = dataclasses.replace(cfg, dwc=dataclasses.replace(cfg.dwc, **dwc_kw))
        return cfg

    def to_dict(self) -> dict:
        return {
            "data": {"name": self.dataset.name, "sha256": file_digest(self.dataset)},
            "columns": dict(self.mapping.columns),
            "units": dict(self.mapping.units),
            "timestamp_column": self.mapping.timestamp,
            "trip_column": self.mapping.trip_index,
            "engine": self.engine.to_dict(),
            "validity": dataclasses.asdict(self.validity),
            "model": self.model,
            "split": self.split,
            "seed": self.seed,
            "foreign_coefficients": (
                file_digest(self.foreign_coefficients) if self.foreign_coefficients else None
            ),
            "max_iter": self.max_iter,
            "dwc": dataclasses.asdict(self.dwc),
        }

    def hash(self) -> str:
        """sha256 over the canonical JSON of every setting except the output directory."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, os.PathLike):
        return str(obj)
    if hasattr(obj, "item"):  # numpy scalar
        return _clean(obj.item())
    return obj


def canonical_json(obj, indent: int | None = None) -> str:
    """Sorted-key JSON with non-finite floats written as null."""
    sep = (",", ":") if indent is None else (",", ": ")
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, separators=sep, allow_nan=False)


def load_config(path=None, **overrides) -> RunConfig:
    """Build a RunConfig from an optional TOML file, then apply non-None overrides.

    Relative paths inside the file resolve against the file's directory.
    """
    kw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise DataError(f"{path}: invalid TOML: {exc}") from None
        base = path.parent
        kw = _from_doc(doc, base)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("data", "out", "foreign_coefficients"):
        if kw.get(key) is not None:
            kw[key] = Path(kw[key])
    return RunConfig().replace(**kw)


def _from_doc(doc: dict, base: Path) -> dict:
    known = {"data", "columns", "units", "engine", "validity", "model", "dwc", "output"}
    unknown = set(doc) - known
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    kw: dict = {}
    data = doc.get("data", {})
    if "path" in data:
        kw["data"] = base / data["path"]
    kw["mapping"] = ColumnMapping.from_dict({"columns": doc.get("columns", {}), "units": doc.get("units", {})})

    engine = dict(doc.get("engine", {}))
    if "file" in engine:
        file_spec = EngineSpec.from_toml(base / engine.pop("file")).to_dict()
        engine = {**file_spec, **engine}
    kw["engine"] = EngineSpec.from_dict(engine)
    try:
        kw["validity"] = ValidityConfig(**doc.get("validity", {}))
    except TypeError as exc:
        raise DataError(f"[validity]: {exc}") from None

    model = doc.get("model", {})
    bad = set(model) - {"id", "split", "seed", "max_iter", "foreign_coefficients"}
    if bad:
        raise DataError(f"unknown [model] keys: {sorted(bad)}")
    for key in ("id", "split", "seed", "max_iter"):
        if key in model:
            kw["model" if key == "id" else key] = model[key]
    if "foreign_coefficients" in model:
        kw["foreign_coefficients"] = base / model["foreign_coefficients"]

    dwc = dict(doc.get("dwc", {}))
    if "set" in dwc:
        dwc["set_id"] = dwc.pop("set")
    names = {f.name for f in dataclasses.fields(DwcParams)}
    bad = set(dwc) - names
    if bad:
        raise DataError(f"unknown [dwc] keys: {sorted(bad)}")
    kw.update(dwc)
    if set(doc.get("output", {})) - {"dir"}:
        raise DataError("[output] accepts only `dir`")
    if "dir" in doc.get("output", {}):
        kw["out"] = base / doc["output"]["dir"]
    return kw
