"""White-noise tests and the sequential procedures that pick the factor count.

Three tests are provided:

* ``ljung_box`` -- univariate portmanteau Q(m), chi-square reference.
* ``tsay_test`` -- max absolute rank cross-correlation of a whitened
  panel over lags ``1..m``, Gumbel reference.
* ``cyz_test`` -- max absolute sample cross-correlation over lags
  ``1..kbar``, critical value from a Gaussian bootstrap.

``select_r_smallp`` tests the transformed coordinates one at a time from the
bottom up; ``select_r_largep`` tests trailing blocks top-down.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy import stats

from ._errors import NumericalError, RankDeficiencyError, ValidationError
from .moments import PooledMatrix, sym_eigen
from .panel import as_array

logger = logging.getLogger(__name__)

__all__ = [
    "Method",
    "WhiteNoiseTestResult",
    "RankCorrelationStack",
    "RankSelection",
    "ljung_box",
    "standardize_pca",
    "rank_ccm",
    "tsay_statistic",
    "tsay_test",
    "gumbel_critical",
    "cyz_statistic",
    "cyz_covariance",
    "cyz_bootstrap_critical",
    "cyz_test",
    "white_noise_test",
    "select_r_smallp",
    "select_r_largep",
    "truncation_dim",
]

CYZ_MAX_DIM = 30


class Method(str, Enum):
    LJUNG_BOX = "LjungBox"
    TSAY_RANK = "TsayRank"
    CHANG_YAO_ZHOU = "ChangYaoZhou"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        aliases = {
            "lb": cls.LJUNG_BOX,
            "ljungbox": cls.LJUNG_BOX,
            "tsay": cls.TSAY_RANK,
            "tsayrank": cls.TSAY_RANK,
            "cyz": cls.CHANG_YAO_ZHOU,
            "changyaozhou": cls.CHANG_YAO_ZHOU,
        }
        key = str(value).lower().replace("-", "").replace("_", "")
        if key not in aliases:
            raise ValidationError(
                f"unknown white-noise method {value!r}; valid: lb, tsay, cyz"
            )
        return aliases[key]


@dataclass(frozen=True)
class WhiteNoiseTestResult:
    """Outcome of one white-noise test.

    ``reject`` is always ``statistic >= critical_value``.
    """

    method: Method
    statistic: float
    critical_value: float
    p_value: Optional[float]
    reject: bool
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "statistic": float(self.statistic),
            "critical_value": float(self.critical_value),
            "p_value": None if self.p_value is None else float(self.p_value),
            "reject": bool(self.reject),
            "params": dict(self.params),
        }


def _result(method, stat, crit, pval, params):
    return WhiteNoiseTestResult(
        method, float(stat), float(crit), pval, bool(stat >= crit), params
    )


# ---------------------------------------------------------------------------
# Ljung-Box
# ---------------------------------------------------------------------------

def ljung_box(series, m: int = 10, alpha: float = 0.05) -> WhiteNoiseTestResult:
    """Ljung-Box portmanteau test of a single series.

    ``Q(m) = n (n + 2) sum_{k=1}^m rho_k^2 / (n - k)``, compared with the
    ``1 - alpha`` quantile of chi-square(m).
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if m < 1:
        raise ValidationError(f"m must be positive, got {m}")
    if n <= m + 1:
        raise ValidationError(f"Ljung-Box needs n > m + 1, got n={n}, m={m}")
    xc = x - x.mean()
    denom = xc @ xc
    if denom <= 0 or denom <= 1e-300:
        raise ValidationError("constant series has no autocorrelation")
    lags = np.arange(1, m + 1)
    rho = np.array([xc[k:] @ xc[: n - k] for k in lags]) / denom
    q = n * (n + 2) * np.sum(rho**2 / (n - lags))
    crit = stats.chi2.ppf(1 - alpha, m)
    pval = float(stats.chi2.sf(q, m))
    return _result(Method.LJUNG_BOX, q, crit, pval, {"m": m, "alpha": alpha, "d": 1, "n": n})


# ---------------------------------------------------------------------------
# Rank-based test with a Gumbel critical value
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankCorrelationStack:
    lags: tuple
    matrices: tuple

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(g))) for g in self.matrices)


def standardize_pca(panel, drop_null: bool = False, basis: str = "symmetric") -> np.ndarray:
    """Whiten a panel so that its sample covariance is the identity.

    Parameters
    ----------
    panel : array_like, shape (n, d)
    drop_null : bool
        Drop principal directions whose variance is below ``1e-10`` times the
        largest instead of raising. The output then has fewer columns and is
        always in the principal basis.
    basis : {"symmetric", "principal"}
        ``"symmetric"`` applies ``V diag(lam)^{-1/2} V'``, which leaves an
        already white panel unchanged. ``"principal"`` returns the unit
        variance principal component scores ``w_t' V diag(lam)^{-1/2}``,
        which undoes any data-driven rotation of the input basis.

    Raises
    ------
    ValidationError
        ``d >= n``.
    RankDeficiencyError
        Some eigenvalue of the covariance is below ``1e-10`` times the largest
        and ``drop_null`` is false.
    """
    if basis not in ("symmetric", "principal"):
        raise ValidationError(f"basis must be 'symmetric' or 'principal', got {basis!r}")
    w = as_array(panel)
    n, d = w.shape
    if d >= n:
        raise ValidationError(f"standardization needs d < n, got d={d}, n={n}")
    wc = w - w.mean(axis=0)
    cov = wc.T @ wc / (n - 1)
    lam, vec = sym_eigen(cov)
    if lam[0] <= 0:
        raise RankDeficiencyError("covariance matrix is zero")
    keep = lam >= 1e-10 * lam[0]
    if not keep.all():
        if not drop_null:
            raise RankDeficiencyError("covariance matrix is numerically singular")
        lam, vec = lam[keep], vec[:, keep]
        return wc @ (vec / np.sqrt(lam))
    if basis == "principal":
        return wc @ (vec / np.sqrt(lam))
    return wc @ ((vec / np.sqrt(lam)) @ vec.T)


def _ranks(w):
    return stats.rankdata(w, axis=0, method="average")


def rank_ccm(panel, m: int) -> RankCorrelationStack:
    """Lag-1..m rank cross-correlation matrices.

    Entry ``(j, k)`` of the lag-``l`` matrix pairs the rank of series ``j``
    at time ``t`` with the rank of series ``k`` at time ``t - l``. Ties take
    midranks.
    """
    w = as_array(panel)
    n, d = w.shape
    if m < 1:
        raise ValidationError(f"m must be positive, got {m}")
    if n <= m + 1:
        raise ValidationError(f"rank CCM needs n > m + 1, got n={n}, m={m}")
    rc = _ranks(w) - (n + 1) / 2.0
    scale = 12.0 / (n * (n * n - 1.0))
    mats = tuple(scale * (rc[l:].T @ rc[: n - l]) for l in range(1, m + 1))
    return RankCorrelationStack(tuple(range(1, m + 1)), mats)


def tsay_statistic(panel, m: int = 10, basis: str = "symmetric") -> float:
    """``sqrt(n)`` times the largest absolute rank cross-correlation.

    The panel is whitened with :func:`standardize_pca` first.
    """
    w = as_array(panel)
    n = w.shape[0]
    return math.sqrt(n) * rank_ccm(standardize_pca(w, basis=basis), m).max_abs()


def _tsay_on_white(z, m, alpha):
    n, d = z.shape
    stat = math.sqrt(n) * rank_ccm(z, m).max_abs()
    crit = gumbel_critical(d, m, alpha)
    c, s = _gumbel_norming(d * d * m)
    # two-sided Gumbel tail matching the alpha/2 quantile in the rule
    x = (stat - s) / c
    pval = min(1.0, max(0.0, 2.0 * -math.expm1(-math.exp(-x))))
    return _result(Method.TSAY_RANK, stat, crit, pval, {"m": m, "alpha": alpha, "d": d, "n": n})


def gumbel_critical(d: int, m: int, alpha: float = 0.05) -> float:
    """Extreme-value critical value for :func:`tsay_statistic`.

    ``c * x + s`` with ``x = -log(-log(1 - alpha / 2))``,
    ``c = (2 log(d^2 m))^{-1/2}`` and
    ``s = sqrt(2 log(d^2 m)) - (log(4 pi) + log(log(d^2 m))) / (2 sqrt(2 log(d^2 m)))``.
    """
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    size = d * d * m
    if size < 2:
        raise ValidationError(f"need d^2 m >= 2, got d={d}, m={m}")
    c, s = _gumbel_norming(size)
    x = -math.log(-math.log(1 - alpha / 2))
    return c * x + s


def _gumbel_norming(size):
    ell = math.log(size)
    root = math.sqrt(2 * ell)
    c = 1.0 / root
    s = root - (math.log(4 * math.pi) + math.log(ell)) / (2 * root)
    return c, s


def tsay_test(
    panel, m: int = 10, alpha: float = 0.05, drop_null: bool = False, basis: str = "symmetric"
) -> WhiteNoiseTestResult:
    """Rank-based test against the Gumbel critical value.

    ``drop_null`` and ``basis`` are passed to :func:`standardize_pca`. With
    ``drop_null`` the dimension ``d`` used for the critical value is the
    number of retained principal directions.
    """
    return _tsay_on_white(standardize_pca(panel, drop_null, basis), m, alpha)


# ---------------------------------------------------------------------------
# Max-correlation test with a Gaussian bootstrap
# ---------------------------------------------------------------------------

def _standardize_columns(w):
    wc = w - w.mean(axis=0)
    sd = np.sqrt(np.mean(wc**2, axis=0))
    if np.any(sd <= 0):
        j = int(np.argmin(sd))
        raise ValidationError(f"column {j + 1} has zero variance")
    return wc / sd


def cyz_statistic(panel, kbar: int = 2) -> float:
    """Max over lags ``1..kbar`` of ``sqrt(n) * max |rho_jl(k)|``."""
    w = as_array(panel)
    n = w.shape[0]
    if kbar < 1:
        raise ValidationError(f"kbar must be positive, got {kbar}")
    if n <= kbar + 1:
        raise ValidationError(f"need n > kbar + 1, got n={n}, kbar={kbar}")
    z = _standardize_columns(w)
    best = 0.0
    for k in range(1, kbar + 1):
        rho = z[k:].T @ z[: n - k] / (n - k)
        best = max(best, float(np.max(np.abs(rho))))
    return math.sqrt(n) * best


def _cyz_summands(w, kbar):
    """Rows ``xi_t`` stacking ``vec(z_t z_{t-k}')`` for ``k = 1..kbar``."""
    z = _standardize_columns(w)
    n, d = z.shape
    t = np.arange(kbar, n)
    blocks = [
        (z[t][:, :, None] * z[t - k][:, None, :]).reshape(len(t), d * d)
        for k in range(1, kbar + 1)
    ]
    xi = np.hstack(blocks)
    return xi - xi.mean(axis=0)


def _bartlett_bandwidth(n):
    return int(math.floor(n ** (1.0 / 3.0)))


def cyz_covariance(panel, kbar: int = 2) -> np.ndarray:
    """Bartlett long-run covariance of the stacked lag-correlation summands.

    Dimension ``d^2 kbar``. Symmetrized with eigenvalues floored at zero.
    """
    w = as_array(panel)
    xi = _cyz_summands(w, kbar)
    nt = xi.shape[0]
    bw = _bartlett_bandwidth(w.shape[0])
    theta = xi.T @ xi / nt
    for j in range(1, bw + 1):
        g = xi[j:].T @ xi[: nt - j] / nt
        theta += (1 - j / (bw + 1)) * (g + g.T)
    theta = 0.5 * (theta + theta.T)
    lam, vec = np.linalg.eigh(theta)
    if lam[-1] <= 0:
        raise NumericalError("bootstrap covariance is zero")
    lam = np.clip(lam, 0, None)
    return (vec * lam) @ vec.T


def cyz_bootstrap_critical(
    panel,
    kbar: int = 2,
    alpha: float = 0.05,
    n_boot: int = 500,
    seed: int = 0,
    *,
    return_draws: bool = False,
):
    """Bootstrap ``1 - alpha`` quantile of ``||z||_inf``, ``z ~ N(0, Theta)``.

    ``Theta`` is the Bartlett long-run covariance from :func:`cyz_covariance`.
    Draws are generated as ``n^{-1/2} sum_t g_t xi_t`` with Gaussian
    multipliers ``g`` whose autocorrelation is the Bartlett kernel (an equally
    weighted moving average of i.i.d. normals). Conditionally on the data this
    is exactly ``N(0, Theta)`` and never needs the ``d^2 kbar`` square matrix.
    """
    w = as_array(panel)
    n, d = w.shape
    if n_boot < 200:
        raise ValidationError(f"n_boot must be >= 200, got {n_boot}")
    if d > CYZ_MAX_DIM:
        raise ValidationError(f"CYZ bootstrap supports d <= {CYZ_MAX_DIM}, got d={d}")
    if n <= kbar + 1:
        raise ValidationError(f"need n > kbar + 1, got n={n}, kbar={kbar}")
    xi = _cyz_summands(w, kbar)
    nt = xi.shape[0]
    bw = _bartlett_bandwidth(n)
    rng = np.random.default_rng(seed)
    draws = np.empty(n_boot)
    chunk = 100
    for start in range(0, n_boot, chunk):
        b = min(chunk, n_boot - start)
        u = rng.standard_normal((b, nt + bw))
        csum = np.cumsum(np.pad(u, ((0, 0), (1, 0))), axis=1)
        g = (csum[:, bw + 1:] - csum[:, : nt]) / math.sqrt(bw + 1)
        z = g @ xi / math.sqrt(nt)
        draws[start : start + b] = np.max(np.abs(z), axis=1)
    crit = float(np.quantile(draws, 1 - alpha))
    if return_draws:
        return crit, draws
    return crit


def cyz_test(
    panel, kbar: int = 2, alpha: float = 0.05, n_boot: int = 500, seed: int = 0
) -> WhiteNoiseTestResult:
    w = as_array(panel)
    n, d = w.shape
    stat = cyz_statistic(w, kbar)
    crit, draws = cyz_bootstrap_critical(w, kbar, alpha, n_boot, seed, return_draws=True)
    pval = float((1 + np.sum(draws >= stat)) / (1 + n_boot))
    params = {"kbar": kbar, "alpha": alpha, "d": d, "n": n, "n_boot": n_boot, "seed": seed}
    return _result(Method.CHANG_YAO_ZHOU, stat, crit, pval, params)


def white_noise_test(panel, method="tsay", m: int = 10, alpha: float = 0.05,
                     n_boot: int = 500, seed: int = 0) -> WhiteNoiseTestResult:
    """Dispatch to one test. ``m`` doubles as ``kbar`` for the CYZ test.

    The Ljung-Box test needs a single series.
    """
    method = Method.parse(method)
    w = as_array(panel)
    if method is Method.LJUNG_BOX:
        if w.shape[1] != 1:
            raise ValidationError("Ljung-Box applies to one series at a time")
        return ljung_box(w[:, 0], m, alpha)
    if method is Method.TSAY_RANK:
        return tsay_test(w, m, alpha)
    return cyz_test(w, m, alpha, n_boot, seed)


# ---------------------------------------------------------------------------
# Sequential selection of the number of factors
# ---------------------------------------------------------------------------

@dataclass
class RankSelection:
    """Selected factor count with the split of the pooled eigenvectors.

    ``trail`` lists ``(index, result)`` for every test run, in order.
    ``capped`` flags a top-down search that hit ``r_max`` without accepting.
    """

    r_hat: int
    a1: np.ndarray
    b1: np.ndarray
    trail: List[tuple] = field(default_factory=list)
    capped: bool = False
    p_star: Optional[int] = None

    def __iter__(self):
        return iter((self.r_hat, self.a1, self.b1))


def _transformed(panel, pooled: PooledMatrix):
    y = as_array(panel)
    if y.shape[1] != pooled.p:
        raise ValidationError(f"panel has {y.shape[1]} columns, pooled matrix is {pooled.p}x{pooled.p}")
    return (y - y.mean(axis=0)) @ pooled.eigenvectors


def _split(pooled, r):
    g = pooled.eigenvectors
    return g[:, :r].copy(), g[:, r:].copy()


def select_r_smallp(panel, pooled: PooledMatrix, m: int = 10, alpha: float = 0.05) -> RankSelection:
    """Bottom-up Ljung-Box search over the transformed coordinates.

    Coordinates are tested from the last (smallest pooled eigenvalue) upward;
    the first rejection at index ``i`` gives ``r_hat = i``. No rejection gives
    ``r_hat = 0``.
    """
    u = _transformed(panel, pooled)
    p = u.shape[1]
    trail = []
    r_hat = 0
    for i in range(p, 0, -1):
        res = ljung_box(u[:, i - 1], m, alpha)
        trail.append((i, res))
        if res.reject:
            r_hat = i
            break
    a1, b1 = _split(pooled, r_hat)
    return RankSelection(r_hat, a1, b1, trail, False, p)


def truncation_dim(p: int, n: int, epsilon: float = 0.75) -> int:
    """Number of leading transformed coordinates kept for block testing."""
    if p < n:
        return p
    return max(1, int(math.floor(epsilon * n)))


def select_r_largep(
    panel,
    pooled: PooledMatrix,
    method="tsay",
    m_or_kbar: int = 10,
    alpha: float = 0.05,
    epsilon: float = 0.75,
    r_max: Optional[int] = None,
    n_boot: int = 500,
    seed: int = 0,
) -> RankSelection:
    """Top-down block search for the factor count.

    For ``i = 1, 2, ...`` the block of transformed coordinates ``i..p_*`` is
    tested; the first block that is not rejected gives ``r_hat = i - 1``.
    The CYZ variant tests only the first 30 coordinates of each block. The
    Tsay variant drops numerically null principal directions of a block.
    """
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    method = Method.parse(method)
    if method is Method.LJUNG_BOX:
        raise ValidationError("the block search uses the tsay or cyz test")
    u = _transformed(panel, pooled)
    n, p = u.shape
    p_star = truncation_dim(p, n, epsilon)
    if p_star < 2:
        raise ValidationError(f"truncated dimension p_*={p_star} is below 2")
    cap = min(p_star, 30) if r_max is None else min(r_max, p_star)
    trail = []
    r_hat = None
    for i in range(1, cap + 1):
        block = u[:, i - 1 : p_star]
        if method is Method.TSAY_RANK:
            res = tsay_test(block, m_or_kbar, alpha, drop_null=True, basis="principal")
        else:
            res = cyz_test(block[:, :CYZ_MAX_DIM], m_or_kbar, alpha, n_boot, seed + i)
        trail.append((i, res))
        if not res.reject:
            r_hat = i - 1
            break
    capped = r_hat is None
    if capped:
        r_hat = cap
        logger.warning("white-noise search reached r_max=%d without acceptance", cap)
    a1, b1 = _split(pooled, r_hat)
    return RankSelection(r_hat, a1, b1, trail, capped, p_star)
