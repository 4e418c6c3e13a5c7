"""Prediction accuracy and signed divergence."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class AccuracyReport:
    r_squared: float
    rmse: float  # ppm
    mae: float  # ppm
    n: int
    over_count: int
    under_count: int
    zero_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {obs.shape}")
    return pred, obs


def divergence(pred, obs) -> np.ndarray:
    """Signed predicted - observed; positive is over-prediction."""
    pred, obs = _pair(pred, obs)
    return pred - obs


def classify(div) -> dict[str, int]:
    div = np.asarray(div, dtype=float)
    return {
        "over": int(np.count_nonzero(div > 0)),
        "under": int(np.count_nonzero(div < 0)),
        "zero": int(np.count_nonzero(div == 0)),
    }


def accuracy(pred, obs) -> AccuracyReport:
    """R^2 against the mean of `obs`, RMSE and MAE.

    Raises:
        ValueError: length mismatch, fewer than two points, or constant `obs`.
    """
    pred, obs = _pair(pred, obs)
    n = pred.size
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    err = pred - obs
    mean_obs = math.fsum(obs.tolist()) / n
    ss_tot = math.fsum(((obs - mean_obs) ** 2).tolist())
    if ss_tot == 0:
        raise ValueError("R^2 undefined: observations are all identical")
    ss_res = math.fsum((err * err).tolist())
    tally = classify(err)
    return AccuracyReport(
        r_squared=1 - ss_res / ss_tot,
        rmse=math.sqrt(ss_res / n),
        mae=math.fsum(np.abs(err).tolist()) / n,
        n=n,
        over_count=tally["over"],
        under_count=tally["under"],
        zero_count=tally["zero"],
    )
