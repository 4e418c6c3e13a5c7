"""NOx model zoo: Arrhenius baseline, its regressed form, and the power-law
family (full model plus drop-one-term variants)."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, DataError, NumericError
from .features import M_O2, EngineSpec
from .regression import POWER_LAW_TERMS, FitProblem, levenberg_marquardt, log_linear_init

POWER_LAW_VARIANTS: dict[str, tuple[str, ...]] = {
    "model_whole": POWER_LAW_TERMS,
    "model_alt": POWER_LAW_TERMS,
    "model1": ("a", "b", "c", "d"),
    "model2": ("a", "b", "c", "e"),
    "model3": ("a", "b", "d", "e"),
    "model4": ("a", "c", "d", "e"),
    "model5": ("a", "b", "c"),
}
BASELINE_MODELS = ("baseline", "regressed")
MODEL_IDS = ("baseline", "regressed", "proposed", *POWER_LAW_VARIANTS)
BASELINE_PROXIES = {
    "T_bz": "T_adiab",
    "t_comb": "t_res",
    "O2_consumption": "stoichiometric O2 mass flow from Fuelconskgph",
}


def canonical_model_id(model_id: str) -> str:
    m = model_id.lower()
    if m == "proposed":
        return "model_whole"
    if m not in MODEL_IDS:
        raise ValueError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")
    return m


def model_terms(model_id: str) -> tuple[str, ...]:
    m = canonical_model_id(model_id)
    return ("A", "B") if m in BASELINE_MODELS else POWER_LAW_VARIANTS[m]


@dataclass(frozen=True)
class ModelCoefficients:
    model_id: str
    names: tuple[str, ...]
    values: tuple[float, ...]
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "model_id", canonical_model_id(self.model_id))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.names) != len(self.values):
            raise ArityError("names and values differ in length")
        if self.model_id in POWER_LAW_VARIANTS and self.as_dict().get("a", 1.0) <= 0:
            raise ValueError("coefficient a must be positive")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    def with_model(self, model_id: str) -> "ModelCoefficients":
        return ModelCoefficients(model_id, self.names, self.values, dict(self.diagnostics))

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "names": list(self.names),
            "values": list(self.values),
            "coefficients": self.as_dict(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelCoefficients":
        return cls(d["model_id"], tuple(d["names"]), tuple(d["values"]), d.get("diagnostics", {}))

    @classmethod
    def load(cls, path) -> "ModelCoefficients":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_json_dict(d.get("coefficients_record", d))


KUMAR = ModelCoefficients("baseline", ("A", "B"), (2.6e7, 1100.0))
REGRESSED_TRANSIT_BUS = ModelCoefficients("regressed", ("A", "B"), (1876153.48, -4168.18))
TRANSIT_BUS = ModelCoefficients("model_whole", POWER_LAW_TERMS, (2.15e-3, 0.013, 0.36, 0.082, 2117.33))
DELIVERY_TRUCK = ModelCoefficients("model_whole", POWER_LAW_TERMS, (7.46e-4, 0.235, 0.74, 0.820, 732.51))


def o2_consumption(fuel_kgph, es: EngineSpec = EngineSpec()):
    """Stoichiometric O2 mass flow (kg/h) consumed by burning `fuel_kgph`."""
    return np.asarray(fuel_kgph, dtype=float) * es.fuel.o2_stoich * M_O2 / es.M_fuel


def baseline_predict(f, r, A: float, B: float, es: EngineSpec = EngineSpec()):
    """Arrhenius baseline NOx in ppm.

    Burn-zone temperature, combustion duration and O2 consumption are taken
    as T_adiab, t_res and the stoichiometric O2 flow of the fuel.
    """
    if B < 0:
        warnings.warn(f"baseline activation constant B = {B} is negative", RuntimeWarning, stacklevel=2)
    T = np.asarray(f["T_adiab"], dtype=float)
    t_res = np.asarray(f["t_res"], dtype=float)
    rpm = np.asarray(r["engRPM"], dtype=float)
    out = A * np.exp(-B / T) * np.sqrt(o2_consumption(r["Fuelconskgph"], es)) * t_res / rpm
    return float(out) if np.ndim(out) == 0 else out


def _power_law(f, p: dict[str, float]):
    t = np.asarray(f["t_res_hat"], dtype=float)
    out = p["a"]
    if "b" in p:
        if p["b"] < 0 and np.any(t == 0):
            raise NumericError("t_res_hat = 0 with negative exponent b")
        out = out * t ** p["b"]
    if "c" in p:
        out = out * np.asarray(f["x_O2"], dtype=float) ** p["c"]
    if "d" in p:
        out = out * np.asarray(f["T_adiab_hat"], dtype=float) ** p["d"]
    if "e" in p:
        out = out * np.exp(-p["e"] / np.asarray(f["T_adiab"], dtype=float))
    out = out * np.ones_like(t)
    return float(out) if np.ndim(out) == 0 else out


def proposed_predict(f, c: ModelCoefficients):
    """NOx mole fraction from the full power-law/Arrhenius model."""
    return variant_predict("model_whole", f, c)


def variant_predict(variant: str, f, c: ModelCoefficients):
    v = canonical_model_id(variant)
    if v not in POWER_LAW_VARIANTS:
        raise ValueError(f"{variant!r} is not a power-law variant")
    terms = POWER_LAW_VARIANTS[v]
    if tuple(c.names) != terms:
        raise ArityError(f"{v} expects coefficients {terms}, got {tuple(c.names)}")
    return _power_law(f, c.as_dict())


def to_ppm(x):
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("mole fraction must be non-negative")
    out = xa * 1e6
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PredictionSeries:
    predicted: np.ndarray  # ppm, NaN where absent
    observed: np.ndarray  # ppm
    model_id: str = ""

    def __post_init__(self):
        if len(self.predicted) != len(self.observed):
            raise ValueError("predicted and observed differ in length")

    @property
    def divergence(self) -> np.ndarray:
        return self.predicted - self.observed

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.predicted) & np.isfinite(self.observed)

    def __len__(self) -> int:
        return len(self.predicted)


def predict_ppm(frame, coeffs: ModelCoefficients, es: EngineSpec = EngineSpec()):
    """Predictions in ppm for complete feature rows."""
    if coeffs.model_id in BASELINE_MODELS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return baseline_predict(frame, frame, coeffs["A"], coeffs["B"], es)
    return to_ppm(variant_predict(coeffs.model_id, frame, coeffs))


def predict_series(features, coeffs: ModelCoefficients, es: EngineSpec = EngineSpec()) -> PredictionSeries:
    """Predicted and observed ppm aligned to the feature table; absent rows stay NaN."""
    frame = features.frame
    present = features.present
    pred = np.full(len(frame), np.nan)
    obs = np.full(len(frame), np.nan)
    if coeffs.model_id in BASELINE_MODELS and coeffs["B"] < 0:
        warnings.warn(f"baseline activation constant B = {coeffs['B']} is negative", RuntimeWarning, stacklevel=2)
    if present.any():
        sub = frame.loc[present]
        pred[present] = predict_ppm(sub, coeffs, es)
        obs[present] = to_ppm(sub["x_NOx_obs"].to_numpy())
    return PredictionSeries(pred, obs, coeffs.model_id)


def _fit_power_law(frame, model_id: str, max_iter: int, x0: dict | None = None):
    terms = POWER_LAW_VARIANTS[model_id]
    observed = frame["x_NOx_obs"].to_numpy(dtype=float) * 1e6
    cols = {k: frame[k].to_numpy(dtype=float) for k in ("t_res_hat", "x_O2", "T_adiab_hat", "T_adiab")}
    init = x0 or log_linear_init(cols, observed / 1e6, terms)
    start = [math.log(init["a"])] + [init[k] for k in terms[1:]]

    def residuals(p):
        params = dict(zip(terms, p))
        params["a"] = math.exp(params["a"])
        return _power_law(cols, params) * 1e6 - observed

    names = ("log_a", *terms[1:])
    res = levenberg_marquardt(FitProblem(residuals, start, names, max_iter=max_iter))
    values = [math.exp(res.x[0]), *res.x[1:].tolist()]
    return values, res, init


def _fit_baseline(frame, max_iter: int, es: EngineSpec):
    observed = frame["x_NOx_obs"].to_numpy(dtype=float) * 1e6
    T = frame["T_adiab"].to_numpy(dtype=float)
    shape = (
        np.sqrt(o2_consumption(frame["Fuelconskgph"].to_numpy(dtype=float), es))
        * frame["t_res"].to_numpy(dtype=float)
        / frame["engRPM"].to_numpy(dtype=float)
    )

    def best_A(B):
        basis = shape * np.exp(-B / T)
        denom = math.fsum((basis * basis).tolist())
        return math.fsum((basis * observed).tolist()) / denom if denom > 0 else 0.0

    # A enters linearly: scan B with A solved in closed form, then polish both.
    grid = np.linspace(-10000.0, 10000.0, 81)
    costs = []
    for B in grid:
        A = best_A(B)
        r = A * shape * np.exp(-B / T) - observed
        costs.append(math.fsum((r * r).tolist()))
    B0 = float(grid[int(np.argmin(costs))])
    init = {"A": best_A(B0), "B": B0}

    def residuals(p):
        return p[0] * shape * np.exp(-p[1] / T) - observed

    res = levenberg_marquardt(FitProblem(residuals, [init["A"], init["B"]], ("A", "B"), max_iter=max_iter))
    return res.x.tolist(), res, init


def fit_model(features, model_id: str, es: EngineSpec = EngineSpec(), max_iter: int = 500_000,
              mask=None, x0: dict | None = None) -> ModelCoefficients:
    """Fit `model_id` by Levenberg-Marquardt on ppm residuals.

    ``baseline`` is not fitted and returns the published literature constants.
    `mask` restricts the training rows (combined with feature presence).
    `x0` overrides the default starting point (power-law family only).
    """
    m = canonical_model_id(model_id)
    if m == "baseline":
        return KUMAR.with_model("baseline")
    if m == "model_alt":
        raise ValueError("model_alt is evaluated with foreign coefficients, never fitted")
    present = features.present
    if mask is not None:
        present = present & np.asarray(mask, dtype=bool)
    frame = features.frame.loc[present]
    terms = model_terms(m)
    if len(frame) < len(terms):
        raise DataError(f"only {len(frame)} usable feature rows; {m} needs at least {len(terms)}")

    if m == "regressed":
        values, res, init = _fit_baseline(frame, max_iter, es)
    else:
        values, res, init = _fit_power_law(frame, m, max_iter, x0)
    diagnostics = {
        "iterations": res.iterations,
        "function_evaluations": res.n_eval,
        "converged": res.converged,
        "convergence_reason": res.reason,
        "sum_squared_residuals_ppm2": res.cost,
        "final_residual_norm_ppm": math.sqrt(res.cost),
        "n_rows": res.n_residuals,
        "residual_space": "ppm",
        "initial_guess": {k: float(v) for k, v in init.items()},
        "cost_trace": res.downsampled_trace(),
    }
    if m == "regressed":
        diagnostics["baseline_proxies"] = BASELINE_PROXIES
    if not res.converged:
        diagnostics["iteration_cap_reached"] = True
    return ModelCoefficients(m, terms, values, diagnostics)

