"""Factor-based forecasts and their out-of-sample evaluation.

Panel forecasts are ``y_{t+h} = A1 x_{t+h}`` with ``x`` forecast by a VAR (or
per-factor AR) fitted to the extracted factors. Diffusion-index forecasts
regress each target directly on the current factors. Competing methods are
compared by rolling-origin errors and the Diebold-Mariano statistic with a
Bartlett long-run variance.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from ._errors import DynaFactorError, NumericalError, ValidationError
from .factor import FactorFit, FitConfig, fit
from .metrics import origin_error
from .moments import build_m
from .panel import as_array, as_panel
from .serialize import matrix_to_json
from .simulate import lyb_ratio_estimator

logger = logging.getLogger(__name__)

__all__ = [
    "VarModel",
    "fit_var",
    "fit_ar",
    "forecast_factors",
    "forecast_panel",
    "diffusion_index_forecast",
    "ForecastReport",
    "rolling_origin_evaluate",
    "DMResult",
    "diebold_mariano",
    "dm_from_loss",
    "andrews_bandwidth",
    "bartlett_lrv",
    "BUILTIN_METHODS",
]

MAX_CONDITION = 1e10
BUILTIN_METHODS = ("var", "ar", "di", "lyb-var", "zero", "mean")


# ---------------------------------------------------------------------------
# VAR on factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarModel:
    """``x_t = c + sum_j Phi_j x_{t-j} + u_t``.

    Attributes
    ----------
    order : int
    coefs : ndarray, shape (order, r, r)
        ``coefs[j - 1]`` is ``Phi_j``.
    intercept : ndarray, shape (r,)
    sigma : ndarray, shape (r, r)
        Residual covariance.
    n_obs : int
        Length of the series the model was fitted to.
    """

    order: int
    coefs: np.ndarray
    intercept: np.ndarray
    sigma: np.ndarray
    n_obs: int = 0

    @property
    def r(self) -> int:
        return self.intercept.shape[0]

    def companion(self) -> np.ndarray:
        r, q = self.r, self.order
        top = np.hstack(list(self.coefs)) if q else np.zeros((r, 0))
        comp = np.zeros((r * q, r * q))
        comp[:r] = top
        comp[r:, : r * (q - 1)] = np.eye(r * (q - 1))
        return comp

    def spectral_radius(self) -> float:
        if self.r == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))

    def stationary_mean(self) -> np.ndarray:
        """``(I - sum_j Phi_j)^{-1} c``."""
        a = np.eye(self.r) - self.coefs.sum(axis=0)
        return np.linalg.solve(a, self.intercept)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "coefs": [matrix_to_json(c) for c in self.coefs],
            "intercept": [float(v) for v in self.intercept],
            "sigma": matrix_to_json(self.sigma),
            "n_obs": self.n_obs,
        }


def _lagged_design(x, order, intercept=True):
    n = x.shape[0]
    lags = [x[order - j : n - j] for j in range(1, order + 1)]
    const = [np.ones((n - order, 1))] if intercept else []
    return np.hstack(const + lags), x[order:]


def _lstsq(design, target):
    cond = np.linalg.cond(design.T @ design)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"regressor cross-product is singular (condition {cond:.3g})")
    beta, *_ = np.linalg.lstsq(design, target, rcond=None)
    return beta


def _empty_model(order, n):
    return VarModel(order, np.zeros((order, 0, 0)), np.zeros(0), np.zeros((0, 0)), n)


def _check_var_input(factors, order):
    x = as_array(factors)
    n, r = x.shape
    if order < 1:
        raise ValidationError(f"order must be positive, got {order}")
    if r > 0 and n <= r * order + 1:
        raise ValidationError(f"VAR({order}) in {r} variables needs n > {r * order + 1}, got {n}")
    return x, n, r


def fit_var(factors, order: int = 1, intercept: bool = True) -> VarModel:
    """Least-squares VAR, equation by equation.

    The residual covariance uses the denominator ``n - order - (r*order + 1)``
    (one fewer parameter without an intercept). With ``intercept=False`` the
    intercept is fixed at zero.
    """
    x, n, r = _check_var_input(factors, order)
    if r == 0:
        return _empty_model(order, n)
    design, target = _lagged_design(x, order, intercept)
    beta = _lstsq(design, target)
    resid = target - design @ beta
    k = int(intercept)
    dof = n - order - (r * order + k)
    sigma = resid.T @ resid / dof
    coefs = np.stack([beta[k + j * r : k + (j + 1) * r].T for j in range(order)])
    c = beta[0].copy() if intercept else np.zeros(r)
    return VarModel(order, coefs, c, 0.5 * (sigma + sigma.T), n)


def fit_ar(factors, order: int = 1) -> VarModel:
    """Separate AR fits per factor, returned as a diagonal VAR."""
    x, n, r = _check_var_input(factors, order)
    if r == 0:
        return _empty_model(order, n)
    coefs = np.zeros((order, r, r))
    intercept = np.zeros(r)
    resid = np.zeros((n - order, r))
    for i in range(r):
        design, target = _lagged_design(x[:, [i]], order)
        beta = _lstsq(design, target[:, 0])
        intercept[i] = beta[0]
        coefs[:, i, i] = beta[1:]
        resid[:, i] = target[:, 0] - design @ beta
    sigma = resid.T @ resid / (n - order - (order + 1))
    return VarModel(order, coefs, intercept, 0.5 * (sigma + sigma.T), n)


def forecast_factors(model: VarModel, history, h: int) -> np.ndarray:
    """Iterated ``h``-step forecast from the last ``order`` rows of ``history``."""
    if h < 1:
        raise ValidationError(f"horizon must be positive, got {h}")
    if model.r == 0:
        return np.zeros(0)
    x = as_array(history)
    if x.shape[1] != model.r:
        raise ValidationError(f"history has {x.shape[1]} columns, model has {model.r}")
    if x.shape[0] < model.order:
        raise ValidationError(f"need {model.order} rows of history, got {x.shape[0]}")
    window = [x[-j] for j in range(1, model.order + 1)]  # most recent first
    for _ in range(h):
        nxt = model.intercept + sum(c @ w for c, w in zip(model.coefs, window))
        window = [nxt] + window[:-1]
    return window[0]


def forecast_panel(fit_: FactorFit, model: VarModel, h: int, include_mean: bool = False) -> np.ndarray:
    """``A1`` times the ``h``-step factor forecast from the fitted factors.

    With ``include_mean`` the column means removed before fitting are added
    back, giving a forecast on the scale of the raw panel.
    """
    if model.r != fit_.r_hat:
        raise ValidationError(f"model has {model.r} factors, fit has {fit_.r_hat}")
    if fit_.r_hat == 0:
        out = np.zeros(fit_.p)
    else:
        out = fit_.a1 @ forecast_factors(model, fit_.factors, h)
    return out + fit_.mean if include_mean else out


# ---------------------------------------------------------------------------
# diffusion index
# ---------------------------------------------------------------------------

def _di_forecasts(targets, factors, h):
    y = as_array(targets)
    x = as_array(factors)
    n, r = x.shape
    if y.shape[0] != n:
        raise ValidationError(f"target has {y.shape[0]} rows, factors have {n}")
    if h < 1:
        raise ValidationError(f"horizon must be positive, got {h}")
    if n - h < r + 2:
        raise ValidationError(f"need n - h >= r + 2, got n={n}, h={h}, r={r}")
    design = np.hstack([np.ones((n - h, 1)), x[: n - h]])
    beta = _lstsq(design, y[h:])
    return np.concatenate([[1.0], x[-1]]) @ beta


def diffusion_index_forecast(target, factors, h: int) -> float:
    """Direct ``h``-step forecast of one series from the current factors.

    Regresses ``y_{t+h}`` on ``(1, x_t)`` over ``t = 1..n-h`` and evaluates
    the fit at ``x_n``.
    """
    y = np.asarray(target, dtype=float).ravel()
    return float(_di_forecasts(y[:, None], factors, h)[0])


# ---------------------------------------------------------------------------
# Diebold-Mariano
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DMResult:
    """Outcome of :func:`diebold_mariano`.

    ``statistic`` is ``nan`` when the long-run variance is zero; the p-value
    is then 1. Negative statistics favor the first method. Iterates as
    ``(statistic, p_value, long_run_variance)``.
    """

    statistic: float
    p_value: float
    long_run_variance: float
    bandwidth: int
    mean_loss_differential: float
    t: int

    def __iter__(self):
        return iter((self.statistic, self.p_value, self.long_run_variance))

    def to_dict(self) -> dict:
        stat = None if math.isnan(self.statistic) else float(self.statistic)
        return {
            "statistic": stat,
            "p_value": float(self.p_value),
            "long_run_variance": float(self.long_run_variance),
            "bandwidth": int(self.bandwidth),
            "mean_loss_differential": float(self.mean_loss_differential),
            "t": int(self.t),
        }


def andrews_bandwidth(d) -> int:
    """Bartlett bandwidth ``ceil(1.1447 (a T)^{1/3})`` with the AR(1) plug-in ``a``."""
    d = np.asarray(d, dtype=float)
    t = d.size
    dc = d - d.mean()
    den = float(dc[:-1] @ dc[:-1])
    rho = float(dc[1:] @ dc[:-1]) / den if den > 0 else 0.0
    rho = min(max(rho, -0.99), 0.99)
    a = 4.0 * rho**2 / ((1.0 - rho) ** 2 * (1.0 + rho) ** 2)
    return int(min(max(1, math.ceil(1.1447 * (a * t) ** (1.0 / 3.0))), t - 1))


def bartlett_lrv(d, bandwidth: int) -> float:
    """Bartlett-weighted long-run variance, weights ``1 - j/bandwidth``."""
    d = np.asarray(d, dtype=float)
    t = d.size
    dc = d - d.mean()
    lrv = float(dc @ dc) / t
    for j in range(1, bandwidth):
        w = 1.0 - j / bandwidth
        lrv += 2.0 * w * float(dc[j:] @ dc[:-j]) / t
    return max(lrv, 0.0)


def dm_from_loss(d, h: int = 1) -> DMResult:
    """DM statistic from a loss differential series ``d_t``.

    The bandwidth is at least ``h`` so that the ``h - 1`` autocovariances
    implied by overlapping forecasts are included.
    """
    d = np.asarray(d, dtype=float).ravel()
    t = d.size
    if t < 20:
        raise ValidationError(f"need at least 20 loss differentials, got {t}")
    if not np.all(np.isfinite(d)):
        raise ValidationError("loss differentials must be finite")
    if h < 1:
        raise ValidationError(f"horizon must be positive, got {h}")
    mean = float(d.mean())
    if np.ptp(d) == 0:
        # constant differential, e.g. identical error series
        return DMResult(float("nan"), 1.0, 0.0, 0, mean, t)
    bw = min(max(andrews_bandwidth(d), h), t - 1)
    lrv = bartlett_lrv(d, bw)
    if lrv <= 0:
        return DMResult(float("nan"), 1.0, 0.0, bw, mean, t)
    stat = mean / math.sqrt(lrv / t)
    return DMResult(stat, float(stats.norm.cdf(stat)), lrv, bw, mean, t)


def diebold_mariano(errors_a, errors_b, h: int = 1) -> DMResult:
    """Test equal squared-error loss against "a is more accurate than b".

    Parameters
    ----------
    errors_a, errors_b : array_like
        Forecast errors of the two methods, same length (at least 20).
    h : int
        Forecast horizon.

    Returns
    -------
    DMResult
        One-sided p-value ``Phi(statistic)``.
    """
    a = np.asarray(errors_a, dtype=float).ravel()
    b = np.asarray(errors_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"error series differ in length: {a.size} vs {b.size}")
    return dm_from_loss(a**2 - b**2, h)


# ---------------------------------------------------------------------------
# rolling-origin evaluation
# ---------------------------------------------------------------------------

@dataclass
class ForecastReport:
    """Rolling-origin forecast errors.

    ``errors[method]`` is an ``origins x horizons`` array of per-origin errors
    ``p^{-1/2} ||y_hat - y||`` with ``nan`` for failed origins.
    ``fe_by_horizon[method]`` holds the column means over successful origins.
    ``mse_by_target[method]`` is ``horizons x p``.
    """

    horizons: List[int]
    origins: List[int]
    methods: List[str]
    errors: Dict[str, np.ndarray]
    fe_by_horizon: Dict[str, List[float]]
    mse_by_target: Dict[str, np.ndarray]
    dm_results: List[dict] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)
    r_hats: List[Optional[int]] = field(default_factory=list)
    config: Optional[FitConfig] = None

    def per_origin_errors(self, method: Optional[str] = None) -> np.ndarray:
        if method is None:
            if len(self.methods) != 1:
                raise ValidationError("several methods evaluated; name one")
            method = self.methods[0]
        return self.errors[method]

    def rows(self):
        """``(origin, horizon, method, error)`` tuples in a fixed order."""
        for m in self.methods:
            for i, tau in enumerate(self.origins):
                for j, h in enumerate(self.horizons):
                    yield tau, h, m, float(self.errors[m][i, j])

    def write_csv(self, path) -> None:
        """One row per (origin, horizon), one error column per method."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin", "horizon", *self.methods])
            for i, tau in enumerate(self.origins):
                for j, h in enumerate(self.horizons):
                    errs = [float(self.errors[m][i, j]) for m in self.methods]
                    w.writerow([tau, h, *("nan" if math.isnan(e) else format(e, ".17g") for e in errs)])

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if math.isnan(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "format": "dynafactor.forecast",
            "version": 1,
            "horizons": list(self.horizons),
            "origins": list(self.origins),
            "methods": list(self.methods),
            "errors": {m: clean(self.errors[m]) for m in self.methods},
            "fe_by_horizon": {
                m: [None if math.isnan(v) else float(v) for v in self.fe_by_horizon[m]]
                for m in self.methods
            },
            "mse_by_target": {m: clean(self.mse_by_target[m]) for m in self.methods},
            "dm_results": list(self.dm_results),
            "failures": list(self.failures),
            "n_failures": len(self.failures),
            "r_hats": list(self.r_hats),
            "config": None if self.config is None else self.config.to_dict(),
        }


def _method_name(m):
    if callable(m):
        return getattr(m, "__name__", "custom")
    if m not in BUILTIN_METHODS:
        raise ValidationError(f"unknown method {m!r}; choose from {', '.join(BUILTIN_METHODS)} or pass a callable")
    return m


def _lyb_var_forecast(train, horizons, order):
    mean = train.mean(axis=0)
    y = train - mean
    pooled = build_m(y, 2)
    r = lyb_ratio_estimator(pooled)
    g = pooled.eigenvectors[:, :r]
    x = y @ g
    model = fit_var(x, order)
    return {h: g @ forecast_factors(model, x, h) + mean for h in horizons}


def _origin_forecasts(train, horizons, methods, config, order, need_fit):
    """Forecasts per method and horizon at one origin, plus the fitted r."""
    out = {}
    est = fit(train, config) if need_fit else None
    for name, m in methods:
        if callable(m):
            out[name] = {h: np.asarray(m(train, h), dtype=float) for h in horizons}
        elif m == "zero":
            out[name] = {h: np.zeros(train.shape[1]) for h in horizons}
        elif m == "mean":
            mu = train.mean(axis=0)
            out[name] = {h: mu for h in horizons}
        elif m in ("var", "ar"):
            model = (fit_var if m == "var" else fit_ar)(est.factors, order)
            out[name] = {h: forecast_panel(est, model, h, include_mean=True) for h in horizons}
        elif m == "di":
            out[name] = {h: _di_forecasts(train, est.factors, h) for h in horizons}
        elif m == "lyb-var":
            out[name] = _lyb_var_forecast(train, horizons, order)
    return out, (None if est is None else est.r_hat)


def rolling_origin_evaluate(
    panel,
    config: Optional[FitConfig] = None,
    origins: Optional[Sequence[int]] = None,
    horizons: Sequence[int] = (1,),
    methods: Sequence = ("var",),
    order: int = 1,
    freeze_r: bool = False,
    dm_pairs: Sequence = (),
    threads: int = 1,
) -> ForecastReport:
    """Refit on ``[1, tau]`` for every origin and score each horizon.

    Parameters
    ----------
    panel : TimeSeriesPanel or array_like, shape (n, p)
    config : FitConfig, optional
        Pipeline settings for every refit.
    origins : sequence of int, optional
        1-based end points ``tau`` of the estimation windows. Defaults to the
        last 50 admissible origins.
    horizons : sequence of int
    methods : sequence
        Names from ``BUILTIN_METHODS`` or callables ``f(train, h) -> p-vector``
        where ``train`` is the ``tau x p`` estimation window.
    order : int
        VAR/AR order on the factors.
    freeze_r : bool
        Reuse the factor count selected at the first origin.
    dm_pairs : sequence of (str, str)
        Method pairs compared with :func:`diebold_mariano` at each horizon.
    threads : int
        Origins are evaluated concurrently; results are merged by index.

    Returns
    -------
    ForecastReport
    """
    y = as_panel(panel).values
    n, p = y.shape
    horizons = [int(h) for h in horizons]
    if not horizons or min(horizons) < 1:
        raise ValidationError("horizons must be positive integers")
    hmax = max(horizons)
    if origins is None:
        origins = range(max(1, n - hmax - 49), n - hmax + 1)
    origins = [int(t) for t in origins]
    if not origins:
        raise ValidationError("no forecast origins")
    bad = [t for t in origins if not 1 <= t <= n - hmax]
    if bad:
        raise ValidationError(f"origins must lie in 1..{n - hmax}, got {bad[:3]}")
    if not methods:
        raise ValidationError("no methods given")
    named = [(_method_name(m), m) for m in methods]
    names = [nm for nm, _ in named]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate method names {names}")
    for a, b in dm_pairs:
        if a not in names or b not in names:
            raise ValidationError(f"DM pair ({a}, {b}) names an unevaluated method")
    config = config or FitConfig()
    need_fit = any(m in ("var", "ar", "di") for _, m in named if not callable(m))

    def run(tau):
        try:
            return _origin_forecasts(y[:tau], horizons, named, config, order, need_fit), None
        except DynaFactorError as exc:
            return None, {"origin": tau, "stage": exc.stage, "message": str(exc)}

    results = [None] * len(origins)
    start = 0
    if freeze_r and need_fit:
        results[0] = run(origins[0])
        start = 1
        if results[0][0] is not None:
            config = replace(config, r_override=results[0][0][1])
    rest = origins[start:]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results[start:] = list(pool.map(run, rest))
    else:
        results[start:] = [run(t) for t in rest]

    errors = {nm: np.full((len(origins), len(horizons)), np.nan) for nm in names}
    sq = {nm: np.full((len(origins), len(horizons), p), np.nan) for nm in names}
    failures, r_hats = [], []
    for i, (tau, (res, fail)) in enumerate(zip(origins, results)):
        if fail is not None:
            failures.append(fail)
            r_hats.append(None)
            continue
        fc, r_hat = res
        r_hats.append(r_hat)
        for nm in names:
            for j, h in enumerate(horizons):
                actual = y[tau + h - 1]
                errors[nm][i, j] = origin_error(fc[nm][h], actual)
                sq[nm][i, j] = (fc[nm][h] - actual) ** 2
    if failures:
        logger.warning("%d of %d origins failed", len(failures), len(origins))

    ok = np.array([f is None for _, f in results])
    fe = {}
    mse = {}
    for nm in names:
        if ok.any():
            fe[nm] = [float(v) for v in errors[nm][ok].mean(axis=0)]
            mse[nm] = sq[nm][ok].mean(axis=0)
        else:
            fe[nm] = [float("nan")] * len(horizons)
            mse[nm] = np.full((len(horizons), p), np.nan)

    dm = []
    for a, b in dm_pairs:
        for j, h in enumerate(horizons):
            res = diebold_mariano(errors[a][ok, j], errors[b][ok, j], h)
            dm.append({"pair": [a, b], "horizon": h, **res.to_dict()})

    return ForecastReport(horizons, origins, names, errors, fe, mse, dm, failures, r_hats, config)
