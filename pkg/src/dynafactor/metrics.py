"""Subspace discrepancies and error metrics."""

from __future__ import annotations

import math

import numpy as np

from ._errors import RankDeficiencyError, ValidationError

__all__ = [
    "subspace_distance",
    "modified_subspace_distance",
    "general_subspace_distance",
    "rmse_small",
    "rmse_large",
    "origin_error",
    "forecast_error",
]


def _as_cols(h):
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    return h


def _trace_distance(h1, h2, denom):
    # for orthonormal inputs with r1 <= r2,
    # r2 - tr(H1 H1' H2 H2') = (r2 - r1) + ||(I - H2 H2') H1||_F^2,
    # which avoids cancellation when the spans nearly coincide
    if denom == 0:
        return 0.0
    if h1.shape[1] > h2.shape[1]:
        h1, h2 = h2, h1
    resid = h1 - h2 @ (h2.T @ h1)
    gap = h2.shape[1] - h1.shape[1] + float(np.sum(resid**2))
    return math.sqrt(min(1.0, max(0.0, gap / denom)))


def subspace_distance(h1, h2) -> float:
    """``sqrt(1 - tr(H1 H1' H2 H2') / r)`` for orthonormal ``p x r`` inputs."""
    h1, h2 = _as_cols(h1), _as_cols(h2)
    if h1.shape != h2.shape:
        raise ValidationError(
            f"shape mismatch {h1.shape} vs {h2.shape}; use general_subspace_distance"
        )
    return _trace_distance(h1, h2, h1.shape[1])


def modified_subspace_distance(h1, h2) -> float:
    """As :func:`subspace_distance`, normalized by ``max(r1, r2)``."""
    h1, h2 = _as_cols(h1), _as_cols(h2)
    if h1.shape[0] != h2.shape[0]:
        raise ValidationError("inputs must have the same number of rows")
    r = max(h1.shape[1], h2.shape[1])
    if min(h1.shape[1], h2.shape[1]) == 0:
        return 1.0 if r > 0 else 0.0
    return _trace_distance(h1, h2, r)


def _orthonormal_basis(h):
    if h.shape[1] == 0:
        return h
    u, sv, _ = np.linalg.svd(h, full_matrices=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficiencyError("matrix is not of full column rank")
    return u


def general_subspace_distance(h1, h2) -> float:
    """Projector-based distance between column spans of full-rank matrices.

    Zero when one span contains the other, one when they are orthogonal. An
    empty matrix is at distance one from any non-empty one.
    """
    h1, h2 = _as_cols(h1), _as_cols(h2)
    if h1.shape[0] != h2.shape[0]:
        raise ValidationError("inputs must have the same number of rows")
    return modified_subspace_distance(_orthonormal_basis(h1), _orthonormal_basis(h2))


def _check_pair(fitted, truth):
    f = np.asarray(fitted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if f.shape != t.shape:
        raise ValidationError(f"shape mismatch {f.shape} vs {t.shape}")
    if f.ndim != 2:
        raise ValidationError("expected n x p arrays")
    return f, t


def rmse_small(fitted, truth) -> float:
    """``(n^{-1} sum_t ||fitted_t - truth_t||^2)^{1/2}``."""
    f, t = _check_pair(fitted, truth)
    return float(np.linalg.norm(f - t) / math.sqrt(f.shape[0]))


def rmse_large(fitted, truth) -> float:
    """As :func:`rmse_small` with an extra ``p^{-1/2}``."""
    f, t = _check_pair(fitted, truth)
    return float(np.linalg.norm(f - t) / math.sqrt(f.shape[0] * f.shape[1]))


def origin_error(forecast, actual) -> float:
    """``p^{-1/2} ||forecast - actual||_2``."""
    f = np.asarray(forecast, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if f.shape != a.shape:
        raise ValidationError(f"shape mismatch {f.shape} vs {a.shape}")
    return float(np.linalg.norm(f - a) / math.sqrt(a.size))


def forecast_error(forecasts) -> float:
    """Average of :func:`origin_error` over ``(origin, horizon, yhat, y)`` tuples.

    All entries must share one horizon and one dimension.
    """
    forecasts = list(forecasts)
    if not forecasts:
        raise ValidationError("no forecasts given")
    horizons = {h for _, h, _, _ in forecasts}
    if len(horizons) > 1:
        raise ValidationError(f"mixed horizons {sorted(horizons)}")
    dims = {np.size(y) for _, _, _, y in forecasts}
    if len(dims) > 1:
        raise ValidationError("inconsistent series dimension")
    return float(np.mean([origin_error(yhat, y) for _, _, yhat, y in forecasts]))
