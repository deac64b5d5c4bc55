"""Factor model estimation pipeline.

Stages, in order:

1. pooled matrix ``M`` from lag-1..k0 autocovariances and its eigenvectors
   ``G = [A1, B1]``;
2. factor count ``r`` from sequential white-noise tests on ``G' y_t``;
3. projected matrix ``S = Sigma_y B1 B1' Sigma_y``;
4. spike count ``K`` from eigenvalue ratios of ``S`` (large ``p`` only);
5. ``B2*`` = eigenvectors of the ``p - K`` smallest eigenvalues of ``S``;
6. rotation ``R`` = top-``r`` eigenvectors of ``B2*' A1 A1' B2*``;
7. factors ``x_t = (B2' A1)^{-1} B2' y_t`` with ``B2 = B2* R``.

With ``p`` at or below ``small_p_threshold`` no spikes are removed: ``B2*``
is the ``r`` smallest-eigenvalue block of ``S`` (``K = p - r``) and ``R`` is
an ``r x r`` rotation that leaves the factors unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from ._errors import DynaFactorError, NumericalError, ValidationError
from .moments import (
    PooledMatrix,
    ProjectedMatrix,
    build_m,
    build_s,
    pooled_from_autocovariances,
    projected_from_covariance,
    sym_eigen,
)
from .panel import as_array, as_panel
from .whitenoise import RankSelection, select_r_largep, select_r_smallp

logger = logging.getLogger(__name__)

__all__ = [
    "FitConfig",
    "FactorFit",
    "estimate_loadings",
    "select_k",
    "k_upper_bound",
    "estimate_b2star",
    "estimate_r_matrix",
    "recover_factors",
    "fit",
    "fit_from_moments",
    "k_path",
]

MAX_CONDITION = 1e10
# loadings are orthonormal, so singular values of B2' A1 lie in [0, 1]
MIN_SINGULAR = 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Pipeline parameters.

    ``method`` is ``"auto"`` (Ljung-Box for ``p <= small_p_threshold``,
    otherwise Tsay), ``"lb"``, ``"tsay"`` or ``"cyz"``. ``m`` is the lag count
    of the Ljung-Box and Tsay tests; ``kbar`` that of the CYZ test.
    ``r_override`` skips the white-noise search; ``k_override`` skips the
    ratio rule for the spike count.
    """

    k0: int = 2
    m: int = 10
    kbar: int = 2
    alpha: float = 0.05
    epsilon: float = 0.75
    method: str = "auto"
    small_p_threshold: int = 15
    k_override: Optional[int] = None
    r_override: Optional[int] = None
    r_max: Optional[int] = None
    n_boot: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k0 <= 10:
            raise ValidationError(f"k0 must be in 1..10, got {self.k0}")
        if self.m < 1 or self.kbar < 1:
            raise ValidationError("m and kbar must be positive")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.epsilon < 1:
            raise ValidationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.method not in ("auto", "lb", "tsay", "cyz"):
            raise ValidationError(
                f"unknown method {self.method!r}; valid: auto, lb, tsay, cyz"
            )
        if self.k_override is not None and self.k_override < 0:
            raise ValidationError("k_override must be nonnegative")
        if self.r_override is not None and self.r_override < 0:
            raise ValidationError("r_override must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "FitConfig":
        return replace(self, **kw)

    def small_p(self, p: int) -> bool:
        return p <= self.small_p_threshold


@dataclass
class FactorFit:
    """Everything produced by :func:`fit`.

    Matrices follow the pipeline notation: ``a1`` (p x r), ``b1`` (p x (p-r)),
    ``b2_star`` (p x (p-K)), ``r_matrix`` ((p-K) x r), ``b2`` (p x r) and
    ``factors`` (n x r). ``mean`` is the column mean removed before fitting.
    """

    r_hat: int
    k_hat: int
    a1: np.ndarray
    b1: np.ndarray
    b2_star: np.ndarray
    r_matrix: np.ndarray
    b2: np.ndarray
    factors: np.ndarray
    m_eigenvalues: np.ndarray
    s_eigenvalues: np.ndarray
    config: FitConfig
    mean: np.ndarray
    route: str = "small-p"
    k_upper: Optional[int] = None
    no_reduction: bool = False
    r_capped: bool = False
    tests: List[tuple] = field(default_factory=list)
    column_names: tuple = ()

    @property
    def p(self) -> int:
        return self.a1.shape[0]

    @property
    def n(self) -> int:
        return self.factors.shape[0]

    def common_component(self) -> np.ndarray:
        """``A1 x_t`` for every t, as an ``n x p`` array (mean not added)."""
        return self.factors @ self.a1.T

    def noise_component(self, panel) -> np.ndarray:
        y = as_array(panel) - self.mean
        return y - self.common_component()

    def transform(self, panel) -> np.ndarray:
        """Apply the fitted factor extraction to new observations."""
        y = as_array(panel) - self.mean
        if self.r_hat == 0:
            return np.zeros((y.shape[0], 0))
        return _solve_factors(self.a1, self.b2, y)

    def to_dict(self) -> dict:
        from .serialize import matrix_to_json

        return {
            "format": "dynafactor.fit",
            "version": 1,
            "r_hat": int(self.r_hat),
            "k_hat": int(self.k_hat),
            "k_upper": None if self.k_upper is None else int(self.k_upper),
            "route": self.route,
            "no_reduction": bool(self.no_reduction),
            "r_capped": bool(self.r_capped),
            "n": int(self.n),
            "p": int(self.p),
            "column_names": list(self.column_names),
            "config": self.config.to_dict(),
            "mean": [float(x) for x in self.mean],
            "m_eigenvalues": [float(x) for x in self.m_eigenvalues],
            "s_eigenvalues": [float(x) for x in self.s_eigenvalues],
            "a1": matrix_to_json(self.a1),
            "b1": matrix_to_json(self.b1),
            "b2_star": matrix_to_json(self.b2_star),
            "r_matrix": matrix_to_json(self.r_matrix),
            "b2": matrix_to_json(self.b2),
            "factors": matrix_to_json(self.factors),
            "tests": [
                {"index": int(i), **res.to_dict()} for i, res in self.tests
            ],
        }


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def estimate_loadings(pooled: PooledMatrix, r_hat: int):
    """Split the pooled eigenvectors into the leading ``r_hat`` and the rest."""
    p = pooled.p
    if not 0 <= r_hat <= p:
        raise ValidationError(f"r_hat must be in 0..{p}, got {r_hat}")
    g = pooled.eigenvectors
    return g[:, :r_hat].copy(), g[:, r_hat:].copy()


def k_upper_bound(p: int, n: int, r_hat: int) -> int:
    """``min(floor(sqrt p), floor(sqrt n), p - r, 10)``."""
    return int(min(math.isqrt(p), math.isqrt(n), p - r_hat, 10))


def select_k(
    projected: ProjectedMatrix,
    r_hat: int,
    p: int,
    n: int,
    k_override: Optional[int] = None,
) -> int:
    """Spike count by the eigenvalue-ratio rule on the projected matrix.

    Minimizes ``mu_{j+1} / mu_j`` over ``1 <= j <= K_U``; ties go to the
    smallest ``j``. The search stops at ``p - r - 1`` so that every ratio
    involves eigenvalues inside the rank of ``S``.
    """
    room = p - r_hat
    if k_override is not None:
        if k_override >= room:
            raise ValidationError(
                f"k_override={k_override} must be below p - r_hat = {room}"
            )
        return int(k_override)
    if room < 2:
        raise ValidationError(
            f"p - r_hat = {room} leaves no room for a spike count; set k_override"
        )
    upper = min(k_upper_bound(p, n, r_hat), room - 1)
    if upper < 1:
        raise ValidationError(f"upper bound for K is {upper}; set k_override")
    mu = np.asarray(projected.eigenvalues, dtype=float)
    head = mu[: upper + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = head[1:] / head[:-1]
    ratios = np.where(head[:-1] > 0, ratios, 1.0)
    return int(np.argmin(ratios)) + 1


def estimate_b2star(projected: ProjectedMatrix, k_hat: int) -> np.ndarray:
    """Eigenvectors of the ``p - k_hat`` smallest eigenvalues, ascending order."""
    p = projected.p
    if not 0 <= k_hat < p:
        raise ValidationError(f"k_hat must be in 0..{p - 1}, got {k_hat}")
    return projected.eigenvectors[:, k_hat:][:, ::-1].copy()


def estimate_r_matrix(b2_star: np.ndarray, a1: np.ndarray) -> np.ndarray:
    """Top-``r`` eigenvectors of ``B2*' A1 A1' B2*``."""
    r = a1.shape[1]
    q = b2_star.shape[1]
    if r == 0:
        return np.zeros((q, 0))
    if q < r:
        raise ValidationError(f"B2* has {q} columns, fewer than r_hat={r}")
    c = b2_star.T @ a1
    lam, vec = sym_eigen(c @ c.T)
    if lam[r - 1] < 1e-10:
        raise NumericalError(
            f"loading space is nearly orthogonal to span(B2*) (eigenvalue {lam[r - 1]:.3g})"
        )
    return vec[:, :r].copy()


def _solve_factors(a1, b2, y):
    c = b2.T @ a1
    sv = np.linalg.svd(c, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= MIN_SINGULAR or sv[0] > MAX_CONDITION * sv[-1]:
        raise NumericalError(
            f"B2' A1 is singular (singular values {sv[0]:.3g} .. {sv[-1]:.3g})"
        )
    return np.linalg.solve(c, b2.T @ y.T).T


def recover_factors(panel, a1, b2) -> np.ndarray:
    """``x_t = (B2' A1)^{-1} B2' y_t`` for every row of ``panel``.

    The panel is used as given (no centering).
    """
    y = as_array(panel)
    a1 = np.asarray(a1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if a1.shape[1] == 0:
        return np.zeros((y.shape[0], 0))
    if a1.shape != b2.shape or a1.shape[0] != y.shape[1]:
        raise ValidationError(f"shape mismatch: a1 {a1.shape}, b2 {b2.shape}, y {y.shape}")
    return _solve_factors(a1, b2, y)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except DynaFactorError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc), stage=name) from exc


def _select_r(y, pooled, config: FitConfig) -> RankSelection:
    p = pooled.p
    if config.r_override is not None:
        if config.r_override > p:
            raise ValidationError(f"r_override={config.r_override} exceeds p={p}")
        a1, b1 = estimate_loadings(pooled, config.r_override)
        return RankSelection(config.r_override, a1, b1)
    method = config.method
    if method == "auto":
        method = "lb" if config.small_p(p) else "tsay"
    if method == "lb":
        return select_r_smallp(y, pooled, config.m, config.alpha)
    m = config.kbar if method == "cyz" else config.m
    return select_r_largep(
        y, pooled, method, m, config.alpha, config.epsilon, config.r_max,
        config.n_boot, config.seed,
    )


def _finish(y, pooled, sel, projected, config, n, mean, names):
    """Stages 4-7 shared by the sample and population pipelines."""
    p = pooled.p
    r = sel.r_hat
    a1, b1 = sel.a1, sel.b1
    k_upper = None
    if r == p:
        # nothing is white noise: keep all coordinates
        b2_star = a1.copy()
        r_matrix = np.eye(p)
        b2 = a1.copy()
        k_hat = 0
        route = "no-reduction"
    elif r == 0:
        k_hat = 0
        b2_star = _stage("estimate_b2star", estimate_b2star, projected, 0)
        r_matrix = np.zeros((p, 0))
        b2 = np.zeros((p, 0))
        route = "small-p" if config.small_p(p) else "large-p"
    else:
        if config.small_p(p) and config.k_override is None:
            k_hat = p - r
            route = "small-p"
        else:
            k_upper = k_upper_bound(p, n, r)
            k_hat = _stage("select_k", select_k, projected, r, p, n, config.k_override)
            route = "large-p"
        b2_star = _stage("estimate_b2star", estimate_b2star, projected, k_hat)
        r_matrix = _stage("estimate_r_matrix", estimate_r_matrix, b2_star, a1)
        b2 = b2_star @ r_matrix
    if y is None:
        factors = np.zeros((0, r))
    else:
        factors = _stage("recover_factors", recover_factors, y, a1, b2)
    return FactorFit(
        r_hat=r,
        k_hat=k_hat,
        a1=a1,
        b1=b1,
        b2_star=b2_star,
        r_matrix=r_matrix,
        b2=b2,
        factors=factors,
        m_eigenvalues=pooled.eigenvalues.copy(),
        s_eigenvalues=projected.eigenvalues.copy(),
        config=config,
        mean=mean,
        route=route,
        k_upper=k_upper,
        no_reduction=(r == p),
        r_capped=sel.capped,
        tests=list(sel.trail),
        column_names=tuple(names),
    )


def fit(panel, config: Optional[FitConfig] = None, **overrides) -> FactorFit:
    """Run the full estimation pipeline on an observed panel.

    Parameters
    ----------
    panel : TimeSeriesPanel or array_like, shape (n, p)
    config : FitConfig, optional
    **overrides
        Replace individual ``FitConfig`` fields.

    Raises
    ------
    ValidationError, NumericalError
        With ``stage`` set to the failing pipeline step.
    """
    config = config or FitConfig()
    if overrides:
        config = config.with_(**overrides)
    panel = as_panel(panel)
    mean = panel.values.mean(axis=0)
    y = panel.values - mean
    n = panel.n
    pooled = _stage("build_m", build_m, y, config.k0)
    sel = _stage("select_r", _select_r, y, pooled, config)
    projected = _stage("build_s", build_s, y, sel.b1)
    return _finish(y, pooled, sel, projected, config, n, mean, panel.column_names)


def fit_from_moments(
    autocovariances,
    r: int,
    k: Optional[int] = None,
    config: Optional[FitConfig] = None,
    n: Optional[int] = None,
) -> FactorFit:
    """Run stages with known moments instead of sample estimates.

    ``autocovariances[k]`` is the lag-``k`` covariance, ``k = 0..k0``. The
    factor count is given; ``k`` fixes the spike count (``None`` uses the
    small-p construction). Returns a fit with an empty factor block.
    """
    covs = [np.asarray(c, dtype=float) for c in autocovariances]
    if len(covs) < 2:
        raise ValidationError("need lag-0 and at least one positive lag")
    config = config or FitConfig(k0=min(len(covs) - 1, 10))
    if k is not None:
        config = config.with_(k_override=k, small_p_threshold=0)
    else:
        config = config.with_(small_p_threshold=covs[0].shape[0])
    pooled = pooled_from_autocovariances(covs[1 : config.k0 + 1])
    a1, b1 = estimate_loadings(pooled, r)
    sel = RankSelection(r, a1, b1)
    projected = projected_from_covariance(covs[0], b1)
    p = covs[0].shape[0]
    return _finish(None, pooled, sel, projected, config, n or 10**9, np.zeros(p), ())



def k_path(panel, config: Optional[FitConfig] = None, ks=None) -> dict:
    """Refits over a range of spike counts, for external model selection.

    The factor count is selected once and then held fixed. ``ks`` defaults
    to ``K_L..K_U`` of the base fit (large-p route only).

    Returns
    -------
    dict
        ``{k: FactorFit}`` in increasing ``k``.
    """
    config = config or FitConfig()
    base = fit(panel, config)
    if ks is None:
        if base.k_upper is None:
            raise ValidationError("the base fit has no K range (small-p or degenerate route)")
        lo = base.k_hat
        hi = max(lo, min(base.k_upper, base.p - base.r_hat - 1))
        ks = range(lo, hi + 1)
    frozen = config.with_(r_override=base.r_hat, small_p_threshold=0)
    out = {}
    for k in sorted(set(int(k) for k in ks)):
        out[k] = base if k == base.k_hat and base.route == "large-p" else fit(panel, frozen.with_(k_override=k))
    return out
