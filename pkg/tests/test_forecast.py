import csv
import math

import numpy as np
import pytest

from dynafactor._errors import NumericalError, ValidationError
from dynafactor.factor import fit
from dynafactor.forecast import (
    VarModel,
    andrews_bandwidth,
    bartlett_lrv,
    diebold_mariano,
    diffusion_index_forecast,
    dm_from_loss,
    fit_ar,
    fit_var,
    forecast_factors,
    forecast_panel,
    rolling_origin_evaluate,
)
from dynafactor.simulate import DgpSpec, generate

from oracles import ols_ar1_slope


def _simulate_var(rng, coef, n, intercept=None, burn=200):
    r = coef.shape[0]
    c = np.zeros(r) if intercept is None else intercept
    x = np.zeros((n + burn, r))
    eps = rng.standard_normal((n + burn, r))
    for t in range(1, n + burn):
        x[t] = c + coef @ x[t - 1] + eps[t]
    return x[burn:]


def _model(coef, intercept):
    coef = np.atleast_2d(coef)
    return VarModel(1, coef[None], np.asarray(intercept, float), np.eye(coef.shape[0]))


# ---------------------------------------------------------------- VAR

def test_fit_var_recovers_coefficients(rng):
    coef = np.array([[0.5, 0.1, 0.0], [-0.2, 0.3, 0.1], [0.0, 0.2, 0.6]])
    x = _simulate_var(rng, coef, 10000, intercept=np.array([1.0, -0.5, 0.2]))
    model = fit_var(x, 1)
    assert np.abs(model.coefs[0] - coef).max() < 0.05
    np.testing.assert_allclose(model.sigma, np.eye(3), atol=0.05)
    assert model.r == 3 and model.n_obs == 10000


def test_fit_var_white_noise(rng):
    n = 2000
    model = fit_var(rng.standard_normal((n, 3)), 2)
    assert np.abs(model.coefs).max() < 4 / math.sqrt(n)


def test_fit_var_scalar_reduction(rng):
    x = _simulate_var(rng, np.array([[0.7]]), 500)
    model = fit_var(x, 1, intercept=False)
    assert model.coefs[0, 0, 0] == pytest.approx(ols_ar1_slope(x[:, 0]), rel=1e-12)
    assert model.intercept[0] == 0.0


def test_fit_var_residual_denominator(rng):
    x = rng.standard_normal((60, 2))
    model = fit_var(x, 1)
    design = np.hstack([np.ones((59, 1)), x[:-1]])
    beta, *_ = np.linalg.lstsq(design, x[1:], rcond=None)
    resid = x[1:] - design @ beta
    np.testing.assert_allclose(model.sigma, resid.T @ resid / (60 - 1 - 3), atol=1e-12)


def test_fit_var_errors(rng):
    with pytest.raises(ValidationError):
        fit_var(rng.standard_normal((4, 3)), 1)
    with pytest.raises(ValidationError):
        fit_var(rng.standard_normal((40, 2)), 0)
    x = rng.standard_normal((100, 1))
    with pytest.raises(NumericalError):
        fit_var(np.hstack([x, 2 * x]), 1)
    assert fit_var(np.zeros((30, 0))).r == 0


def test_fit_ar_is_diagonal(rng):
    x = _simulate_var(rng, np.diag([0.8, 0.3]), 3000)
    model = fit_ar(x, 1)
    assert model.coefs[0, 0, 1] == 0.0 and model.coefs[0, 1, 0] == 0.0
    assert model.coefs[0, 0, 0] == pytest.approx(0.8, abs=0.05)


@pytest.mark.slow
def test_fit_var_self_consistency():
    rng = np.random.default_rng(12)
    x = _simulate_var(rng, np.array([[0.6, 0.2], [0.1, 0.4]]), 2000)
    first = fit_var(x, 1)
    est = []
    for s in range(200):
        xs = _simulate_var(np.random.default_rng(s), first.coefs[0], 2000, first.intercept)
        est.append(fit_var(xs, 1).coefs[0])
    est = np.array(est)
    se = est.std(axis=0) / math.sqrt(len(est))
    # least-squares bias is O(1/n); allow it on top of the Monte Carlo error
    assert np.all(np.abs(est.mean(axis=0) - first.coefs[0]) < 4 * se + 2.0 / 2000)


# ---------------------------------------------------------------- forecasts

def test_forecast_zero_coefficients():
    model = _model(np.zeros((2, 2)), [1.5, -2.0])
    for h in (1, 4):
        np.testing.assert_allclose(forecast_factors(model, np.ones((3, 2)), h), [1.5, -2.0])


def test_forecast_ar1_closed_form():
    model = _model([[0.6]], [0.0])
    for h in (1, 2, 7):
        assert forecast_factors(model, [[2.0]], h)[0] == pytest.approx(0.6**h * 2.0, rel=1e-14)


def test_forecast_tends_to_stationary_mean(rng):
    q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    coef = q @ np.diag([0.9, -0.5, 0.2]) @ q.T
    model = _model(coef, [1.0, 0.5, -1.0])
    assert model.spectral_radius() <= 0.9 + 1e-12
    far = forecast_factors(model, [[10.0, -5.0, 3.0]], 500)
    np.testing.assert_allclose(far, model.stationary_mean(), atol=1e-6)


def test_forecast_var2_companion(rng):
    x = _simulate_var(rng, np.array([[0.5]]), 400)
    model = fit_var(x, 2)
    direct = model.intercept + model.coefs[0] @ x[-1] + model.coefs[1] @ x[-2]
    np.testing.assert_allclose(forecast_factors(model, x, 1), direct, atol=1e-12)
    assert model.companion().shape == (2, 2)
    with pytest.raises(ValidationError):
        forecast_factors(model, x, 0)
    with pytest.raises(ValidationError):
        forecast_factors(model, x[-1:], 1)


def test_forecast_panel_in_loading_span():
    panel, _ = generate(DgpSpec("Ex1", p=5, n=300, r=3, seed=3))
    est = fit(panel)
    model = fit_var(est.factors)
    for h in (1, 3):
        yhat = forecast_panel(est, model, h)
        resid = yhat - est.a1 @ (est.a1.T @ yhat)
        assert np.abs(resid).max() < 1e-12
        np.testing.assert_allclose(forecast_panel(est, model, h, include_mean=True), yhat + est.mean)
    with pytest.raises(ValidationError):
        forecast_panel(est, fit_var(est.factors[:, :2]), 1)


def test_forecast_panel_without_factors(rng):
    est = fit(rng.standard_normal((300, 4)), r_override=0)
    model = fit_var(est.factors)
    np.testing.assert_array_equal(forecast_panel(est, model, 2), np.zeros(4))


def _oracle_gap(n, seed):
    spec = DgpSpec("Ex1", p=5, n=n + 1, r=3, seed=seed)
    panel, truth = generate(spec)
    # compare with the conditional mean, so the target carries no noise;
    # the panel itself keeps its noise, which the estimator needs
    est = fit(panel.values[:n], r_override=3)
    yhat = forecast_panel(est, fit_var(est.factors), 1, include_mean=True)
    best = truth.l1 @ (truth.phi * truth.factors[n - 1])
    return np.linalg.norm(yhat - best) / math.sqrt(5)


@pytest.mark.slow
def test_forecast_error_to_oracle_shrinks():
    meds = [np.median([_oracle_gap(n, s) for s in range(60)]) for n in (200, 1000, 5000)]
    assert meds[0] > meds[1] > meds[2]


# ---------------------------------------------------------------- diffusion index

def test_diffusion_index_constant_target(rng):
    f = rng.standard_normal((100, 2))
    assert diffusion_index_forecast(np.full(100, 3.25), f, 2) == pytest.approx(3.25, abs=1e-12)


def test_diffusion_index_exact_linear(rng):
    f = rng.standard_normal((120, 3))
    beta = np.array([0.5, -1.0, 2.0])
    h = 2
    y = np.zeros(120)
    y[h:] = 0.7 + f[:-h] @ beta
    assert diffusion_index_forecast(y, f, h) == pytest.approx(0.7 + f[-1] @ beta, abs=1e-10)
    with pytest.raises(ValidationError):
        diffusion_index_forecast(y[:5], f[:5], 2)


@pytest.mark.slow
def test_diffusion_index_beats_sample_mean():
    wins = 0
    for s in range(100):
        panel, _ = generate(DgpSpec("Ex1", p=5, n=200, r=3, seed=s))
        rep = rolling_origin_evaluate(panel, origins=range(150, 200), methods=("di", "mean"))
        wins += rep.mse_by_target["di"][0].mean() < rep.mse_by_target["mean"][0].mean()
    assert wins >= 90


# ---------------------------------------------------------------- rolling origin

def _panel(seed=0, n=160):
    return generate(DgpSpec("Ex1", p=5, n=n, r=3, seed=seed))[0]


def test_rolling_oracle_is_exact():
    y = _panel().values

    def oracle(train, h):
        return y[len(train) + h - 1]

    rep = rolling_origin_evaluate(y, origins=range(120, 150), horizons=(1, 2), methods=(oracle,))
    assert rep.fe_by_horizon["oracle"] == [0.0, 0.0]


def test_single_origin_fe_equals_error():
    y = _panel().values
    rep = rolling_origin_evaluate(y, origins=[130], horizons=(1,), methods=("zero",))
    want = np.linalg.norm(y[130]) / math.sqrt(5)
    assert rep.fe_by_horizon["zero"][0] == pytest.approx(want, rel=1e-14)


def test_fe_is_column_mean():
    rep = rolling_origin_evaluate(_panel(1), origins=range(100, 140), horizons=(1, 2, 3),
                                  methods=("var", "ar", "di", "lyb-var", "zero", "mean"))
    for m in rep.methods:
        errs = rep.per_origin_errors(m)
        assert errs.shape == (40, 3)
        assert rep.fe_by_horizon[m] == [float(v) for v in errs.mean(axis=0)]
    with pytest.raises(ValidationError):
        rep.per_origin_errors()


def test_default_origins_and_validation():
    y = _panel(n=120).values
    rep = rolling_origin_evaluate(y, horizons=(1, 3))
    assert rep.origins == list(range(68, 118))
    with pytest.raises(ValidationError):
        rolling_origin_evaluate(y, origins=[118], horizons=(3,))
    with pytest.raises(ValidationError):
        rolling_origin_evaluate(y, methods=("arima",))
    with pytest.raises(ValidationError):
        rolling_origin_evaluate(y, methods=("var",), dm_pairs=[("var", "zero")])
    with pytest.raises(ValidationError):
        rolling_origin_evaluate(y, horizons=(0,))


def test_failed_origins_are_excluded():
    y = _panel().values
    # the Ljung-Box test needs more than m + 1 rows, so tau = 8 fails
    rep = rolling_origin_evaluate(y, origins=[8, 100, 101], methods=("var",))
    assert len(rep.failures) == 1 and rep.failures[0]["origin"] == 8
    assert rep.failures[0]["stage"] == "select_r"
    assert np.isnan(rep.errors["var"][0, 0])
    assert rep.fe_by_horizon["var"][0] == pytest.approx(np.mean(rep.errors["var"][1:, 0]))
    assert rep.r_hats[0] is None and rep.to_dict()["n_failures"] == 1


def test_freeze_r_and_threads():
    y = _panel(2).values
    kw = dict(origins=range(100, 130), horizons=(1, 2), methods=("var", "zero"), dm_pairs=[("var", "zero")])
    a = rolling_origin_evaluate(y, **kw)
    b = rolling_origin_evaluate(y, threads=3, **kw)
    assert a.to_dict() == b.to_dict()
    frozen = rolling_origin_evaluate(y, freeze_r=True, **kw)
    assert len(set(frozen.r_hats)) == 1
    assert frozen.config.r_override == frozen.r_hats[0]
    assert len(a.dm_results) == 2 and a.dm_results[0]["pair"] == ["var", "zero"]


def test_csv_rows(tmp_path):
    rep = rolling_origin_evaluate(_panel(3).values, origins=range(100, 105), horizons=(1, 2),
                                  methods=("var", "mean"))
    path = tmp_path / "fc.csv"
    rep.write_csv(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 2
    assert list(rows[0]) == ["origin", "horizon", "var", "mean"]
    assert float(rows[1]["mean"]) == rep.errors["mean"][0, 1]
    assert int(rows[2]["origin"]) == 101


@pytest.mark.slow
def test_fe_grows_with_horizon():
    fe = np.zeros(3)
    for s in range(50):
        rep = rolling_origin_evaluate(_panel(s, 200), origins=range(150, 198), horizons=(1, 2, 3))
        fe += rep.fe_by_horizon["var"]
    assert fe[0] <= fe[1] <= fe[2]


@pytest.mark.slow
def test_var_beats_zero_forecast():
    wins = 0
    for s in range(100):
        rep = rolling_origin_evaluate(_panel(s, 300), methods=("var", "zero"))
        wins += rep.fe_by_horizon["var"][0] < rep.fe_by_horizon["zero"][0]
    assert wins >= 90


# ---------------------------------------------------------------- Diebold-Mariano

def test_dm_identical_series(rng):
    e = rng.standard_normal(100)
    res = diebold_mariano(e, e)
    assert math.isnan(res.statistic) and res.p_value == 1.0
    assert res.to_dict()["statistic"] is None


def test_dm_antisymmetric(rng):
    a, b = rng.standard_normal(200), 1.1 * rng.standard_normal(200)
    ab, ba = diebold_mariano(a, b, 2), diebold_mariano(b, a, 2)
    assert ab.statistic == -ba.statistic
    assert ab.long_run_variance == ba.long_run_variance
    stat, pval, lrv = ab
    assert pval == pytest.approx(0.5 * math.erfc(-stat / math.sqrt(2)))


def test_dm_errors(rng):
    with pytest.raises(ValidationError):
        diebold_mariano(rng.standard_normal(30), rng.standard_normal(31))
    with pytest.raises(ValidationError):
        diebold_mariano(rng.standard_normal(10), rng.standard_normal(10))


def test_bartlett_lrv_iid_and_bandwidth(rng):
    d = rng.standard_normal(400)
    assert bartlett_lrv(d, 1) == pytest.approx(np.var(d), rel=1e-12)
    dc = d - d.mean()
    g1 = dc[1:] @ dc[:-1] / 400
    assert bartlett_lrv(d, 2) == pytest.approx(np.var(d) + 2 * 0.5 * g1, rel=1e-12)
    assert andrews_bandwidth(d) >= 1
    ar = np.zeros(400)
    for t in range(1, 400):
        ar[t] = 0.8 * ar[t - 1] + d[t]
    assert andrews_bandwidth(ar) > andrews_bandwidth(d)
    assert dm_from_loss(d, h=6).bandwidth >= 6


@pytest.mark.slow
def test_dm_size():
    rejects = sum(
        dm_from_loss(np.random.default_rng(s).standard_normal(500)).p_value < 0.05 for s in range(1000)
    )
    assert abs(rejects / 1000 - 0.05) <= 0.02


def test_dm_power():
    rejects = sum(
        dm_from_loss(np.random.default_rng(s).normal(-0.5, 1.0, 500)).p_value < 0.05 for s in range(200)
    )
    assert rejects / 200 >= 0.99
