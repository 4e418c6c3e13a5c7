"""Levenberg-Marquardt nonlinear least squares.

All reductions over residual rows use :func:`math.fsum`, which is correctly
rounded, so a fit is bit-identical under any permutation of the rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

DEFAULT_GUESS = {"a": 1e-3, "b": 0.1, "c": 0.1, "d": 0.1, "e": 1000.0}
MIN_INIT_ROWS = 10


@dataclass
class FitProblem:
    residuals: Callable[[np.ndarray], np.ndarray]
    x0: Sequence[float]
    param_names: tuple[str, ...] = ()
    max_iter: int = 500_000
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-12
    lambda0: float = 1e-3
    increase: float = 2.0
    decrease: float = 3.0
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if min(self.gtol, self.xtol, self.ftol) <= 0:
            raise ValueError("tolerances must be positive")

    def name(self, i: int) -> str:
        return self.param_names[i] if i < len(self.param_names) else f"p[{i}]"


@dataclass
class FitResult:
    x: np.ndarray
    cost: float  # sum of squared residuals
    iterations: int
    n_eval: int
    converged: bool
    reason: str
    n_residuals: int
    cost_trace: list[float] = field(default_factory=list)  # cost after each accepted step

    def downsampled_trace(self, max_points: int = 50) -> list[float]:
        t = self.cost_trace
        if len(t) <= max_points:
            return list(t)
        idx = np.unique(np.linspace(0, len(t) - 1, max_points).round().astype(int))
        return [t[i] for i in idx]


def _sumsq(r: np.ndarray) -> float:
    return math.fsum((r * r).tolist())


def _normal_equations(J: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = J.shape[1]
    A = np.empty((n, n))
    g = np.empty(n)
    for i in range(n):
        g[i] = math.fsum((J[:, i] * r).tolist())
        for j in range(i, n):
            A[i, j] = A[j, i] = math.fsum((J[:, i] * J[:, j]).tolist())
    return A, g


def numeric_jacobian(fn, x, names: Sequence[str] = (), rel_step: float = 1e-6, abs_step: float = 1e-9) -> np.ndarray:
    """Central-difference Jacobian with step ``max(rel_step*|x_i|, abs_step)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        h = max(rel_step * abs(x[i]), abs_step)
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        with np.errstate(all="ignore"):
            col = (np.asarray(fn(up), dtype=float) - np.asarray(fn(down), dtype=float)) / (up[i] - down[i])
        if not np.all(np.isfinite(col)):
            name = names[i] if i < len(names) else f"p[{i}]"
            raise NumericError(f"non-finite residual while differentiating with respect to {name}")
        cols.append(col)
    return np.column_stack(cols)


def levenberg_marquardt(fp: FitProblem) -> FitResult:
    x = np.asarray(fp.x0, dtype=float).copy()
    with np.errstate(all="ignore"):
        r = np.asarray(fp.residuals(x), dtype=float)
    if r.ndim != 1 or len(r) < len(x):
        raise NumericError(f"need at least {len(x)} residuals, got {r.size}")
    cost = _sumsq(r)
    if not math.isfinite(cost):
        raise NumericError("non-finite cost at the initial point")
    jac = fp.jacobian or (lambda p: numeric_jacobian(fp.residuals, p, fp.param_names))

    n_eval = 1
    J = jac(x)
    A, g = _normal_equations(J, r)
    lam = fp.lambda0
    trace = [cost]
    reason, converged = "max_iter", False
    it = 0
    while it < fp.max_iter:
        if cost == 0.0:
            reason, converged = "zero_residual", True
            break
        diag = np.diag(A).copy()
        scale = np.sqrt(np.where(diag > 0, diag, 1.0)) * math.sqrt(cost)
        if np.max(np.abs(g) / scale) <= fp.gtol:
            reason, converged = "gradient", True
            break
        it += 1
        damp = np.where(diag > 0, diag, 1.0)
        try:
            step = np.linalg.solve(A + lam * np.diag(damp), -g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            lam *= fp.increase
            continue
        small_step = np.linalg.norm(step) <= fp.xtol * (np.linalg.norm(x) + fp.xtol)
        x_new = x + step
        with np.errstate(all="ignore"):
            r_new = np.asarray(fp.residuals(x_new), dtype=float)
        n_eval += 1
        cost_new = _sumsq(r_new)
        if math.isfinite(cost_new) and cost_new < cost:
            rel = (cost - cost_new) / cost
            x, r, cost = x_new, r_new, cost_new
            trace.append(cost)
            lam /= fp.decrease
            if rel <= fp.ftol:
                reason, converged = "cost", True
                break
            if small_step:
                reason, converged = "step", True
                break
            J = jac(x)
            A, g = _normal_equations(J, r)
        else:
            if small_step:
                reason, converged = "step", True
                break
            lam *= fp.increase
            if lam > 1e300:
                reason, converged = "damping", True
                break
    return FitResult(x, cost, it, n_eval, converged, reason, len(r), trace)


POWER_LAW_TERMS = ("a", "b", "c", "d", "e")


def _design(features, terms: Sequence[str]):
    cols = []
    f = features
    t = np.asarray(f["t_res_hat"], dtype=float)
    xo = np.asarray(f["x_O2"], dtype=float)
    th = np.asarray(f["T_adiab_hat"], dtype=float)
    ta = np.asarray(f["T_adiab"], dtype=float)
    with np.errstate(all="ignore"):
        logs = {"a": np.ones_like(t), "b": np.log(t), "c": np.log(xo), "d": np.log(th), "e": -1.0 / ta}
    for k in terms:
        cols.append(logs[k])
    return np.column_stack(cols)


def log_linear_init(features, observed, terms: Sequence[str] = POWER_LAW_TERMS) -> dict[str, float]:
    """Starting point for the power-law family from OLS in log space.

    `observed` is the NOx mole fraction. Rows with any non-positive input
    are skipped. Returns the default guess when fewer than 10 rows remain.
    """
    terms = tuple(terms)
    X = _design(features, terms)
    with np.errstate(all="ignore"):
        y = np.log(np.asarray(observed, dtype=float))
    ok = np.all(np.isfinite(X), axis=1) & np.isfinite(y)
    if ok.sum() < max(MIN_INIT_ROWS, len(terms)):
        return {k: DEFAULT_GUESS[k] for k in terms}
    A, g = _normal_equations(X[ok], y[ok])
    try:
        beta = np.linalg.solve(A, g)
    except np.linalg.LinAlgError:
        return {k: DEFAULT_GUESS[k] for k in terms}
    if not np.all(np.isfinite(beta)):
        return {k: DEFAULT_GUESS[k] for k in terms}
    guess = dict(zip(terms, beta.tolist()))
    guess["a"] = math.exp(guess["a"])
    return guess


def train_test_mask(n: int, train_fraction: float, seed: int = 0) -> np.ndarray:
    """Boolean mask selecting a reproducible random training subset."""
    if not 0 < train_fraction <= 1:
        raise ValueError(f"train fraction must lie in (0, 1], got {train_fraction}")
    n_train = int(round(n * train_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[perm[:n_train]] = True
    return mask
