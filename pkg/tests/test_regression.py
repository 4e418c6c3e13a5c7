import math

import numpy as np
import pytest
from _synth import feature_frame, synthetic_features
from hypothesis import given
from hypothesis import strategies as st

from noxdwc import regression as R
from noxdwc.errors import NumericError
from noxdwc.models import TRANSIT_BUS, _power_law, fit_model, proposed_predict


def test_jacobian_linear():
    M = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 7.0]])
    y = np.array([1.0, 2.0, 3.0])
    J = R.numeric_jacobian(lambda p: M @ p - y, [0.3, -1.2])
    assert np.allclose(J, M, rtol=1e-6, atol=0)


def test_jacobian_square():
    J = R.numeric_jacobian(lambda p: p**2, [3.0])
    assert J[0, 0] == pytest.approx(6.0, rel=1e-6)


def test_jacobian_non_finite_names_parameter():
    def fn(p):
        return np.array([math.log(p[1]) if p[1] > 0 else float("nan"), p[0]])

    # finite at the point, but the backward step in beta crosses zero
    with pytest.raises(NumericError, match="beta"):
        R.numeric_jacobian(fn, [1.0, 1e-10], ("alpha", "beta"))


def test_jacobian_matches_power_law_partials():
    rng = np.random.default_rng(3)
    f = feature_frame(50, rng)
    cols = {k: f[k].to_numpy() for k in ("t_res_hat", "x_O2", "T_adiab_hat", "T_adiab")}
    obs = proposed_predict(f, TRANSIT_BUS) * 1e6 * 1.01
    p0 = np.array([math.log(2.15e-3), 0.013, 0.36, 0.082, 2117.33])

    def residuals(p):
        return _power_law(cols, {"a": math.exp(p[0]), "b": p[1], "c": p[2], "d": p[3], "e": p[4]}) * 1e6 - obs

    pred = residuals(p0) + obs
    analytic = np.column_stack([
        pred,
        pred * np.log(cols["t_res_hat"]),
        pred * np.log(cols["x_O2"]),
        pred * np.log(cols["T_adiab_hat"]),
        -pred / cols["T_adiab"],
    ])
    J = R.numeric_jacobian(residuals, p0)
    assert np.allclose(J, analytic, rtol=1e-5, atol=0)


def test_exact_problem_recovers_coefficients():
    ft, truth = synthetic_features(400, seed=1)
    c = fit_model(ft, "model_whole")
    rel_cost = c.diagnostics["sum_squared_residuals_ppm2"] / float(np.sum((truth * 1e6) ** 2))
    assert rel_cost < 1e-18
    pred = proposed_predict(ft.frame, c)
    assert np.allclose(pred, truth, rtol=1e-8)


def test_noisy_problem_matches_generator():
    ft, truth = synthetic_features(3000, seed=2, noise=0.01)
    c = fit_model(ft, "model_whole")
    pred = proposed_predict(ft.frame, c) * 1e6
    obs = ft.frame["x_NOx_obs"].to_numpy() * 1e6
    rmse = math.sqrt(np.mean((pred - truth * 1e6) ** 2))
    assert rmse / obs.mean() < 0.02


def test_quadratic_toy_converges_fast():
    res = R.levenberg_marquardt(R.FitProblem(lambda p: np.array([p[0] - 3.0, 2 * (p[0] - 3.0)]), [10.0]))
    assert res.converged and res.iterations <= 20
    assert res.x[0] == pytest.approx(3.0, abs=1e-9)


def test_nonlinear_scalar_root():
    res = R.levenberg_marquardt(R.FitProblem(lambda p: np.array([p[0] ** 2 - 2.0]), [1.0]))
    assert res.x[0] == pytest.approx(math.sqrt(2), rel=1e-12)
    assert res.iterations <= 20


def test_rank_deficient_problem_does_not_fail():
    res = R.levenberg_marquardt(R.FitProblem(lambda p: np.array([p[0] + p[1] - 1, p[0] + p[1] - 1]), [5.0, 5.0]))
    assert res.x.sum() == pytest.approx(1.0, abs=1e-8)


def test_non_finite_initial_cost():
    with pytest.raises(NumericError):
        R.levenberg_marquardt(R.FitProblem(lambda p: np.array([np.inf, 1.0]), [0.0]))


def test_iteration_cap_flagged():
    ft, _ = synthetic_features(200, seed=5, noise=0.05)
    c = fit_model(ft, "model_whole", max_iter=1, x0={"a": 1e-3, "b": 0.5, "c": 0.5, "d": 0.5, "e": 10.0})
    assert c.diagnostics["converged"] is False
    assert c.diagnostics["iteration_cap_reached"] is True
    assert c.diagnostics["convergence_reason"] == "max_iter"


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError):
        R.FitProblem(lambda p: p, [1.0], gtol=0.0)


@given(st.integers(0, 10_000))
def test_accepted_cost_non_increasing(seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, 30)
    y = 2.0 * np.exp(-1.3 * x) + 0.05 * rng.normal(size=x.size)
    res = R.levenberg_marquardt(R.FitProblem(lambda p: p[0] * np.exp(-p[1] * x) - y, rng.uniform(0.1, 3, 2)))
    assert all(b <= a for a, b in zip(res.cost_trace, res.cost_trace[1:]))
    assert res.cost == res.cost_trace[-1]


def test_log_linear_init_exact():
    ft, truth = synthetic_features(200, seed=7)
    g = R.log_linear_init(ft.frame, truth)
    expected = dict(zip("abcde", TRANSIT_BUS.values))
    for k in "bcde":
        assert g[k] == pytest.approx(expected[k], rel=1e-6, abs=1e-6)
    assert g["a"] == pytest.approx(expected["a"], rel=1e-5)


def test_log_linear_init_fallback():
    ft, truth = synthetic_features(50, seed=8)
    assert R.log_linear_init(ft.frame, np.zeros_like(truth)) == R.DEFAULT_GUESS
    assert R.log_linear_init(ft.frame.iloc[:5], truth[:5], ("a", "b")) == {"a": 1e-3, "b": 0.1}


def test_initializer_cost_not_below_final():
    ft, _ = synthetic_features(800, seed=9, noise=0.03)
    c = fit_model(ft, "model_whole")
    init = c.diagnostics["initial_guess"]
    obs = ft.frame["x_NOx_obs"].to_numpy() * 1e6
    r0 = _power_law(ft.frame, init) * 1e6 - obs
    assert math.fsum((r0 * r0).tolist()) >= c.diagnostics["sum_squared_residuals_ppm2"]


def test_fit_is_row_order_invariant():
    ft, _ = synthetic_features(500, seed=11, noise=0.02)
    perm = np.random.default_rng(0).permutation(len(ft))
    shuffled = type(ft)(ft.frame.iloc[perm].reset_index(drop=True))
    a = fit_model(ft, "model_whole")
    b = fit_model(shuffled, "model_whole")
    assert a.values == b.values


def test_fit_repeatable_bitwise():
    ft, _ = synthetic_features(300, seed=12, noise=0.02)
    assert fit_model(ft, "model3").values == fit_model(ft, "model3").values


def test_train_test_mask():
    m = R.train_test_mask(1000, 0.8, seed=4)
    assert m.sum() == 800
    assert np.array_equal(m, R.train_test_mask(1000, 0.8, seed=4))
    assert not np.array_equal(m, R.train_test_mask(1000, 0.8, seed=5))
    with pytest.raises(ValueError):
        R.train_test_mask(10, 0.0)


def test_downsampled_trace():
    res = R.FitResult(np.zeros(1), 0.0, 0, 0, True, "x", 1, list(range(1000)))
    t = res.downsampled_trace(50)
    assert len(t) == 50 and t[0] == 0 and t[-1] == 999
