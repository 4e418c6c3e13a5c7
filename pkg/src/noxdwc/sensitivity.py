"""Drop-column study: fit every power-law variant and compare accuracy."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import NoxDwcError
from .features import EngineSpec, FeatureTable
from .models import POWER_LAW_VARIANTS, ModelCoefficients, fit_model, predict_ppm, to_ppm
from .regression import POWER_LAW_TERMS

logger = logging.getLogger(__name__)

FITTED_VARIANTS = ("model_whole", "model1", "model2", "model3", "model4", "model5")
METRICS = ("r_squared", "rmse", "mae")


@dataclass
class VariantResult:
    model_id: str
    coefficients: ModelCoefficients | None = None
    train: metrics.AccuracyReport | None = None
    test: metrics.AccuracyReport | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        c = self.coefficients
        return {
            "terms": list(POWER_LAW_VARIANTS[self.model_id]),
            "status": "ok" if self.ok else "failed",
            "error": self.error,
            "coefficients": c.as_dict() if c else None,
            "diagnostics": c.diagnostics if c else None,
            "train": self.train.to_dict() if self.train else None,
            "test": self.test.to_dict() if self.test else None,
        }


@dataclass
class SensitivityReport:
    variants: dict[str, VariantResult]
    notes: list[str] = field(default_factory=list)

    def ranking(self, metric: str, split: str = "train") -> list[str]:
        """Variant ids best-first by `metric`; failed variants are omitted."""
        rows = [(getattr(getattr(v, split), metric), k) for k, v in self.variants.items()
                if getattr(v, split) is not None]
        sign = -1 if metric == "r_squared" else 1
        return [k for _, k in sorted(rows, key=lambda t: (sign * t[0], t[1]))]

    def to_dict(self) -> dict:
        splits = ["train"] + (["test"] if any(v.test for v in self.variants.values()) else [])
        return {
            "variants": {k: v.to_dict() for k, v in self.variants.items()},
            "rankings": {s: {m: self.ranking(m, s) for m in METRICS} for s in splits},
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "terms", "split", "status", "n", *METRICS])
        for k, v in self.variants.items():
            terms = " ".join(POWER_LAW_VARIANTS[k])
            for split in ("train", "test"):
                acc = getattr(v, split)
                if acc is not None:
                    w.writerow([k, terms, split, "ok", acc.n, *(repr(getattr(acc, m)) for m in METRICS)])
            if not v.ok:
                w.writerow([k, terms, "train", "failed", 0, "", "", ""])
        return buf.getvalue()


def _evaluate(frame, coeffs: ModelCoefficients, es: EngineSpec) -> metrics.AccuracyReport:
    pred = predict_ppm(frame, coeffs, es)
    obs = to_ppm(frame["x_NOx_obs"].to_numpy(dtype=float))
    return metrics.accuracy(pred, obs)


def _sse(frame, coeffs: ModelCoefficients, es: EngineSpec) -> float:
    acc = _evaluate(frame, coeffs, es)
    return acc.rmse**2 * acc.n


def _embed(coeffs: ModelCoefficients) -> dict[str, float]:
    """Variant coefficients as a full-model starting point; a dropped term has exponent 0."""
    full = {k: 0.0 for k in POWER_LAW_TERMS}
    full.update(coeffs.as_dict())
    return full


def run_sensitivity(
    features: FeatureTable,
    foreign_coeffs: ModelCoefficients | None = None,
    es: EngineSpec = EngineSpec(),
    mask=None,
    variants=FITTED_VARIANTS,
    max_iter: int = 500_000,
    n_jobs: int | None = None,
    polish: bool = True,
) -> SensitivityReport:
    """Fit each variant independently and score it.

    `mask` selects the training rows; when given, the remaining present rows
    are scored as a test split. ``model_alt`` is added when `foreign_coeffs`
    is supplied and is only evaluated, never fitted.

    With `polish`, if a nested variant ends with a lower in-sample error than
    the full model, the full model is refit starting from that variant's
    coefficients (dropped exponents set to 0). The full model contains every
    variant, so this only corrects a local minimum.
    """
    present = features.present
    train = present if mask is None else present & np.asarray(mask, dtype=bool)
    test = None if mask is None else present & ~np.asarray(mask, dtype=bool)
    if not train.any():
        raise ValueError("no usable training rows")
    train_frame = features.frame.loc[train]
    test_frame = features.frame.loc[test] if test is not None and test.sum() >= 2 else None

    def score(res: VariantResult) -> VariantResult:
        try:
            res.train = _evaluate(train_frame, res.coefficients, es)
            if test_frame is not None:
                res.test = _evaluate(test_frame, res.coefficients, es)
        except (NoxDwcError, ValueError) as exc:
            res.error = f"evaluation failed: {exc}"
        return res

    def fit_one(model_id: str) -> VariantResult:
        try:
            coeffs = fit_model(features, model_id, es, max_iter=max_iter, mask=train)
        except (NoxDwcError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("%s fit failed: %s", model_id, exc)
            return VariantResult(model_id, error=str(exc))
        return score(VariantResult(model_id, coeffs))

    with ThreadPoolExecutor(n_jobs) as pool:
        results = dict(zip(variants, pool.map(fit_one, variants)))

    notes = []
    whole = results.get("model_whole")
    if polish and whole is not None and whole.ok:
        whole_sse = _sse(train_frame, whole.coefficients, es)
        nested = [(_sse(train_frame, r.coefficients, es), k) for k, r in results.items()
                  if k != "model_whole" and r.ok]
        if nested and min(nested)[0] < whole_sse:
            best_sse, best = min(nested)
            refit = fit_model(features, "model_whole", es, max_iter=max_iter, mask=train,
                              x0=_embed(results[best].coefficients))
            if _sse(train_frame, refit, es) < whole_sse:
                diag = dict(refit.diagnostics, polished_from=best, unpolished_sse_ppm2=whole_sse)
                refit = ModelCoefficients(refit.model_id, refit.names, refit.values, diag)
                results["model_whole"] = score(VariantResult("model_whole", refit))
                notes.append(f"model_whole refit from {best} coefficients after landing in a worse local minimum")

    if foreign_coeffs is not None:
        alt = foreign_coeffs.with_model("model_alt")
        results["model_alt"] = score(VariantResult("model_alt", alt))
    return SensitivityReport(results, notes)
