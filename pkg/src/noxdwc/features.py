"""Per-record physics features for the NOx regression.

Every function takes a record-like mapping ``r`` (an :class:`ObdRecord`, a
dict of floats, or a DataFrame with attribute columns) and works
elementwise, so the same code handles one record or a whole table.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import thermo
from .errors import DataError, NoxDwcError, SingularityError
from .obd_ingest import RecordFlag, RecordSet

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

M_O2, M_N2, M_CO2, M_H2O = 0.032, 0.028, 0.044, 0.018
PA_PER_BAR = 1e5


@dataclass(frozen=True)
class EngineSpec:
    """Engine and fuel constants. Defaults target a Cummins ISB6.7."""

    n_cyl: int = 6
    CR: float = 17.3
    gamma: float = 1.35
    stroke: float = 0.124  # m
    bore: float = 0.107  # m
    injector_flow_const: float = 113.0
    injection_scale: float = 2e6
    fuel_density: float = 835.0  # kg/m^3
    cetane_number: float = 45.0
    activation_energy: float | None = None  # J/mol; None -> 618840/(CN + 25)
    R_u: float = 8.314
    LHV: float = 42.64e6  # J/kg
    M_fuel: float = 0.19065  # kg/mol
    M_product: float = 0.02885  # kg/mol
    M_NOx: float = 0.040  # kg/mol
    phi_NOx: float = 0.9
    o2_coeff: float = 19.90  # stoichiometric O2 per mol fuel as written in the O2-dilution balance
    fuel_carbon: float = 13.88
    fuel_hydrogen: float = 24.06
    ignition_delay_form: str = "additive"  # or "multiplicative"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                raise ValueError(f"EngineSpec.{f.name} must be positive, got {v}")
        if not 0 < self.phi_NOx <= 1:
            raise ValueError(f"phi_NOx must lie in (0, 1], got {self.phi_NOx}")
        if self.ignition_delay_form not in ("additive", "multiplicative"):
            raise ValueError(f"unknown ignition_delay_form {self.ignition_delay_form!r}")

    @property
    def E_a(self) -> float:
        if self.activation_energy is not None:
            return self.activation_energy
        return 618840.0 / (self.cetane_number + 25.0)

    @property
    def fuel(self) -> thermo.FuelSpec:
        return thermo.FuelSpec(self.fuel_carbon, self.fuel_hydrogen)

    @property
    def afr_stoich(self) -> float:
        """Stoichiometric air/fuel mass ratio."""
        o2 = self.fuel.o2_stoich
        air_molar_mass = thermo.O2_IN_AIR * M_O2 + (1 - thermo.O2_IN_AIR) * M_N2
        return o2 / thermo.O2_IN_AIR * air_molar_mass / self.M_fuel

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EngineSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown EngineSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path) -> "EngineSpec":
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
        return cls.from_dict(d.get("engine", d))


def _arr(x):
    return np.asarray(x, dtype=float)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def mean_piston_speed(engRPM, es: EngineSpec):
    return 2 * es.stroke * _arr(engRPM) / 60


def _ignition_delay(r, es: EngineSpec):
    mps = mean_piston_speed(r["engRPM"], es)
    t_comp = _arr(r["intakeT"]) * es.CR ** (es.gamma - 1)
    p_comp = _arr(r["intakeP"]) / PA_PER_BAR * es.CR**es.gamma
    with np.errstate(invalid="ignore", divide="ignore"):
        pressure_term = (21.2 / (p_comp - 12.4)) ** 0.63
    temperature_term = es.E_a * (1 / (es.R_u * t_comp) - 1 / 17190)
    if es.ignition_delay_form == "additive":
        exponent = temperature_term + pressure_term
    else:
        exponent = temperature_term * pressure_term
    theta = (0.36 + 0.22 * mps) * np.exp(exponent)
    return np.where(p_comp > 12.4, theta, np.nan)


def ignition_delay(r, es: EngineSpec):
    """Ignition delay in crank-angle degrees.

    The pressure term is evaluated in bar, with ``intakeP`` in Pa on input.

    Raises:
        SingularityError: compressed pressure at or below 12.4 bar.
    """
    theta = _ignition_delay(r, es)
    if np.any(np.isnan(theta)):
        raise SingularityError("intakeP * CR^gamma <= 12.4 bar: ignition delay correlation is singular")
    return _out(theta)


def _raw_premixed_fraction(theta_ID, r):
    return 0.45 * _arr(theta_ID) * _arr(r["engRPM"]) * 60 * 6 / (_arr(r["Fuelconskgph"]) * 1e6)


def premixed_fraction(theta_ID, r):
    """Premixed-burn fraction, clamped to [0, 1]."""
    return _out(np.clip(_raw_premixed_fraction(theta_ID, r), 0.0, 1.0))


def injection_time(r, es: EngineSpec):
    fuel = _arr(r["Fuelconskgph"])
    rpm = _arr(r["engRPM"])
    return _out(fuel * es.injection_scale / (es.n_cyl * 60 * es.injector_flow_const * es.fuel_density * rpm))


def residence_time(r, beta, es: EngineSpec):
    """Diffusion-burn residence time in seconds."""
    return _out(_arr(injection_time(r, es)) * (1 - _arr(beta)))


def global_equivalence_ratio(r, es: EngineSpec):
    return _out(es.afr_stoich * _arr(r["Fuelconskgph"]) / _arr(r["AirInkgph"]))


def exhaust_composition(r, es: EngineSpec) -> dict:
    """Complete-combustion exhaust mass fractions for O2, N2, CO2 and H2O.

    Rich records (global equivalence ratio above 1) get zero excess O2 and
    trigger a single warning per call.
    """
    phi_g = _arr(global_equivalence_ratio(r, es))
    rich = phi_g > 1
    if np.any(rich):
        warnings.warn(f"{int(np.count_nonzero(rich))} rich record(s): exhaust O2 set to zero", RuntimeWarning, stacklevel=2)
    o2 = es.fuel.o2_stoich
    n2_moles = (1 - thermo.O2_IN_AIR) / thermo.O2_IN_AIR * o2 / phi_g
    o2_moles = np.where(rich, 0.0, o2 * (1 / phi_g - 1))
    masses = {
        "O2": o2_moles * M_O2,
        "N2": n2_moles * M_N2,
        "CO2": np.full_like(phi_g, es.fuel_carbon * M_CO2),
        "H2O": np.full_like(phi_g, es.fuel_hydrogen / 2 * M_H2O),
    }
    total = masses["O2"] + masses["N2"] + masses["CO2"] + masses["H2O"]
    return {k: _out(v / total) for k, v in masses.items()}


def oxygen_mole_fraction(r, X_exh: dict, es: EngineSpec):
    """O2 mole fraction of the EGR-diluted charge, per mol fuel at phi_NOx.

    Kept term-for-term as published, including the EGR denominator term that
    is not multiplied by the fuel molar mass.
    """
    egr = _arr(r["EGRkgph"])
    fuel = _arr(r["Fuelconskgph"])
    phi = es.phi_NOx
    xo2, xn2, xco2, xh2o = (_arr(X_exh[k]) for k in ("O2", "N2", "CO2", "H2O"))
    num = es.o2_coeff / phi + xo2 * egr * es.M_fuel / (M_O2 * fuel)
    den = 1 + es.o2_coeff * 4.76 / phi + egr / fuel * (xo2 / M_O2 + xn2 / M_N2 + xco2 / M_CO2 + xh2o / M_H2O)
    return _out(num / den)


def exhaust_mass_flow(r):
    """Tailpipe exhaust flow in kg/h: fresh air plus fuel (EGR recirculates internally)."""
    return _out(_arr(r["AirInkgph"]) + _arr(r["Fuelconskgph"]))


def observed_nox(r, es: EngineSpec):
    """Observed NOx mole fraction from the SCR-inlet NOx mass flow."""
    return _out(_arr(r["SCRingps"]) * 3.6 * es.M_product / (es.M_NOx * _arr(exhaust_mass_flow(r))))


def peak_temperature(r, es: EngineSpec):
    return _out(thermo.peak_compression_temperature(_arr(r["intakeT"]), es.CR, es.gamma))


def flame_temperature(r, es: EngineSpec):
    """Adiabatic flame temperature (K) of lean products at phi_NOx."""
    n = thermo.product_moles(es.phi_NOx, es.fuel)
    return _out(thermo.adiabatic_flame_temperature(_arr(peak_temperature(r, es)), n, es.LHV, es.M_fuel))


FEATURE_COLUMNS = (
    "theta_ID", "beta", "beta_clamped", "t_inj", "t_res", "t_res_hat",
    "x_O2", "T_peak", "T_adiab", "T_adiab_hat", "x_NOx_obs",
)
# Raw inputs carried alongside the features so fitting can run from the feature file alone.
CARRIED_COLUMNS = ("engRPM", "Fuelconskgph", "intakeT")


@dataclass(frozen=True)
class FeatureRow:
    t_res: float
    t_res_hat: float
    x_O2: float
    T_adiab: float
    T_adiab_hat: float
    x_NOx_obs: float
    beta: float = 0.0
    beta_clamped: bool = False
    theta_ID: float = float("nan")
    engRPM: float = float("nan")
    Fuelconskgph: float = float("nan")
    intakeT: float = float("nan")
    record_index: int = -1

    def __getitem__(self, key):
        return getattr(self, key)


@dataclass(frozen=True)
class FeatureTable:
    """Features aligned one-to-one with the source records.

    Rows for records without ``VALID_PHYSICS`` (or whose computation failed)
    are NaN with ``present`` False.
    """

    frame: pd.DataFrame
    errors: list = field(default_factory=list)  # (record index, message)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def present(self) -> np.ndarray:
        return self.frame["present"].to_numpy(dtype=bool)

    def valid(self) -> pd.DataFrame:
        return self.frame.loc[self.present]

    def row(self, i: int) -> FeatureRow | None:
        r = self.frame.iloc[i]
        if not bool(r["present"]):
            return None
        kw = {f.name: r[f.name] for f in dataclasses.fields(FeatureRow) if f.name in r.index}
        kw["beta_clamped"] = bool(kw.get("beta_clamped", False))
        return FeatureRow(record_index=i, **{k: v for k, v in kw.items() if k != "record_index"})


def _compute(sub: pd.DataFrame, es: EngineSpec) -> dict:
    theta = _ignition_delay(sub, es)
    raw_beta = _raw_premixed_fraction(theta, sub)
    beta = np.clip(raw_beta, 0.0, 1.0)
    t_inj = _arr(injection_time(sub, es))
    t_res = t_inj * (1 - beta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        X = exhaust_composition(sub, es)
    x_o2 = _arr(oxygen_mole_fraction(sub, X, es))
    t_peak = _arr(peak_temperature(sub, es))
    n = thermo.product_moles(es.phi_NOx, es.fuel)
    t_adiab = np.asarray(thermo.adiabatic_flame_temperature(t_peak, n, es.LHV, es.M_fuel), dtype=float)
    return {
        "theta_ID": theta,
        "beta": beta,
        "beta_clamped": (raw_beta < 0) | (raw_beta > 1),
        "t_inj": t_inj,
        "t_res": t_res,
        "t_res_hat": t_res * _arr(sub["engRPM"]),
        "x_O2": x_o2,
        "T_peak": t_peak,
        "T_adiab": t_adiab,
        "T_adiab_hat": t_adiab / _arr(sub["intakeT"]),
        "x_NOx_obs": _arr(observed_nox(sub, es)),
    }


def build_feature_table(rs: RecordSet, es: EngineSpec = EngineSpec()) -> FeatureTable:
    """Compute features for every ``VALID_PHYSICS`` record.

    Per-record failures (singular ignition-delay term, flame temperature
    outside the property range) are collected in ``errors`` and leave that
    row absent; the batch never aborts.
    """
    frame = rs.frame
    n = len(frame)
    cols = {c: np.full(n, np.nan) for c in FEATURE_COLUMNS}
    cols["beta_clamped"] = np.zeros(n, dtype=bool)
    errors = []

    idx = np.flatnonzero(rs.has(RecordFlag.VALID_PHYSICS))
    sub = frame.iloc[idx]
    p_comp = _arr(sub["intakeP"]) / PA_PER_BAR * es.CR**es.gamma
    singular = p_comp <= 12.4
    for i in idx[singular]:
        errors.append((int(i), "ignition delay singular: intakeP * CR^gamma <= 12.4 bar"))
    idx = idx[~singular]
    sub = frame.iloc[idx]

    if len(idx):
        try:
            res = _compute(sub, es)
        except NoxDwcError:
            # isolate the failing records one at a time
            keep, parts = [], []
            for i in idx:
                try:
                    parts.append(_compute(frame.iloc[[i]], es))
                    keep.append(i)
                except NoxDwcError as exc:
                    errors.append((int(i), str(exc)))
            idx = np.asarray(keep, dtype=np.int64)
            res = {k: np.concatenate([p[k] for p in parts]) if parts else np.zeros(0) for k in FEATURE_COLUMNS}
        for k in FEATURE_COLUMNS:
            cols[k][idx] = res[k]

    present = np.zeros(n, dtype=bool)
    present[idx] = True
    out = pd.DataFrame({
        "timestamp": frame["timestamp"].to_numpy(),
        "segment": frame["segment"].to_numpy(),
        "present": present,
        **{c: frame[c].to_numpy() for c in CARRIED_COLUMNS},
        **cols,
    })
    if errors:
        logger.warning("%d record(s) failed feature computation", len(errors))
    return FeatureTable(out, sorted(errors))


def read_feature_csv(path) -> FeatureTable:
    frame = pd.read_csv(path, skiprows=_comment_rows(path), float_precision="round_trip")
    frame["present"] = frame["present"].astype(bool)
    frame["beta_clamped"] = frame["beta_clamped"].astype(bool)
    return FeatureTable(frame)


def _comment_rows(path) -> int:
    n = 0
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n += 1
    return n
