"""Simulation designs, the ratio-rule baseline and a replication harness.

Two data-generating processes share one construction,
``y_t = L1 f_t + L2 eps_t`` with ``f_t = Phi f_{t-1} + eta_t``, ``Phi``
diagonal with entries from ``U(0.5, 0.9)`` and loadings from ``U(-2, 2)``:

* ``Ex1`` scales every column of ``L2`` by ``p^{-1/2}``.
* ``Ex2`` scales ``L1`` by ``p^{-delta1/2}``, the first ``K`` columns of
  ``L2`` by ``p^{-delta2/2}`` and the remaining columns by ``1/p``.

Each replication seed spawns independent streams for ``Phi``, the loadings,
``eta`` and ``eps``, so changing ``n`` alone keeps ``Phi`` and the loadings.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg, signal

from ._errors import DynaFactorError, ValidationError
from .factor import FitConfig, fit, recover_factors
from .metrics import general_subspace_distance, rmse_large, rmse_small
from .moments import PooledMatrix, build_m
from .panel import TimeSeriesPanel, as_array

logger = logging.getLogger(__name__)

__all__ = [
    "DgpSpec",
    "SimulationTruth",
    "ReplicationReport",
    "gen_example1",
    "gen_example2",
    "generate",
    "population_autocovariances",
    "lyb_ratio_estimator",
    "lyb_loadings",
    "run_replications",
]

BURN_IN = 200


@dataclass(frozen=True)
class DgpSpec:
    example: str = "Ex1"
    p: int = 5
    n: int = 500
    r: int = 3
    k_spike: int = 0
    delta1: float = 0.0
    delta2: float = 0.0
    phi_range: tuple = (0.5, 0.9)
    loading_range: tuple = (-2.0, 2.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phi_range", tuple(float(x) for x in self.phi_range))
        object.__setattr__(self, "loading_range", tuple(float(x) for x in self.loading_range))
        if self.example not in ("Ex1", "Ex2"):
            raise ValidationError(f"example must be 'Ex1' or 'Ex2', got {self.example!r}")
        if self.n < 2:
            raise ValidationError(f"n must be at least 2, got {self.n}")
        if not 0 <= self.r < self.p:
            raise ValidationError(f"need 0 <= r < p, got r={self.r}, p={self.p}")
        if self.example == "Ex2":
            if not 0 < self.k_spike < self.p - self.r:
                raise ValidationError(
                    f"Ex2 needs 0 < k_spike < p - r, got k_spike={self.k_spike}"
                )
            for name in ("delta1", "delta2"):
                if not 0 <= getattr(self, name) < 1:
                    raise ValidationError(f"{name} must lie in [0, 1)")
        lo, hi = self.phi_range
        if not -1 < lo <= hi < 1:
            raise ValidationError(f"phi_range must lie inside (-1, 1), got {self.phi_range}")

    @property
    def v(self) -> int:
        return self.p - self.r

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown DGP keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi_range"] = list(self.phi_range)
        d["loading_range"] = list(self.loading_range)
        return d


@dataclass(frozen=True)
class SimulationTruth:
    l1: np.ndarray
    l2: np.ndarray
    phi: np.ndarray
    factors: np.ndarray
    noise: np.ndarray

    def common(self) -> np.ndarray:
        """``L1 f_t`` for every t, as an ``n x p`` array."""
        return self.factors @ self.l1.T


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def _simulate(spec: DgpSpec, l1, l2, rng_phi, rng_eta, rng_eps):
    r, v, n = spec.r, spec.v, spec.n
    phi = rng_phi.uniform(*spec.phi_range, size=r)
    eta = rng_eta.standard_normal((n + BURN_IN, r))
    f = np.empty_like(eta)
    for i in range(r):
        f[:, i] = signal.lfilter([1.0], [1.0, -phi[i]], eta[:, i])
    f = f[BURN_IN:]
    eps = rng_eps.standard_normal((n, v))
    y = f @ l1.T + eps @ l2.T
    truth = SimulationTruth(l1, l2, phi, f, eps)
    return TimeSeriesPanel(y), truth


def gen_example1(spec: DgpSpec):
    """Simulate the small-dimension design. Returns ``(panel, truth)``."""
    if spec.example != "Ex1":
        raise ValidationError("gen_example1 needs spec.example == 'Ex1'")
    rng_phi, rng_load, rng_eta, rng_eps = _streams(spec.seed)
    load = rng_load.uniform(*spec.loading_range, size=(spec.p, spec.p))
    l1 = load[:, : spec.r]
    l2 = load[:, spec.r :] / np.sqrt(spec.p)
    return _simulate(spec, l1, l2, rng_phi, rng_eta, rng_eps)


def gen_example2(spec: DgpSpec):
    """Simulate the spiked-noise design. Returns ``(panel, truth)``."""
    if spec.example != "Ex2":
        raise ValidationError("gen_example2 needs spec.example == 'Ex2'")
    rng_phi, rng_load, rng_eta, rng_eps = _streams(spec.seed)
    p, r, k = spec.p, spec.r, spec.k_spike
    load = rng_load.uniform(*spec.loading_range, size=(p, p))
    l1 = load[:, :r] / p ** (spec.delta1 / 2)
    l2 = load[:, r:].copy()
    l2[:, :k] /= p ** (spec.delta2 / 2)
    l2[:, k:] /= p
    return _simulate(spec, l1, l2, rng_phi, rng_eta, rng_eps)


def generate(spec: DgpSpec):
    return gen_example1(spec) if spec.example == "Ex1" else gen_example2(spec)


def population_autocovariances(truth: SimulationTruth, max_lag: int):
    """Exact ``Cov(y_t, y_{t-k})`` for ``k = 0..max_lag``.

    The factor covariance solves ``Sigma = Phi Sigma Phi' + I``; the lag-k
    factor autocovariance is ``Phi^k Sigma``.
    """
    phi = np.diag(truth.phi)
    sigma_f = linalg.solve_discrete_lyapunov(phi, np.eye(phi.shape[0]))
    l1, l2 = truth.l1, truth.l2
    covs = [l1 @ sigma_f @ l1.T + l2 @ l2.T]
    lagged = sigma_f
    for _ in range(max_lag):
        lagged = phi @ lagged
        covs.append(l1 @ lagged @ l1.T)
    return covs


def lyb_ratio_estimator(pooled) -> int:
    """Ratio rule on the pooled eigenvalues over ``j = 1..floor(p/2)``.

    Accepts a :class:`PooledMatrix` or a descending eigenvalue array.
    Eigenvalues are floored at ``1e-300`` so every ratio is defined; ties go
    to the smallest index.
    """
    lam = pooled.eigenvalues if isinstance(pooled, PooledMatrix) else np.asarray(pooled)
    p = lam.size
    if p < 4:
        raise ValidationError(f"ratio rule needs p >= 4, got p={p}")
    upper = p // 2
    lam = np.maximum(lam[: upper + 1], 1e-300)
    return int(np.argmin(lam[1:] / lam[:-1])) + 1


def lyb_loadings(panel, k0: int = 2, r: Optional[int] = None):
    """``(r_hat, loadings)`` of the ratio-rule baseline.

    Loadings are the top ``r_hat`` pooled eigenvectors; baseline factors are
    ``loadings' y_t`` on the centered panel.
    """
    y = as_array(panel)
    pooled = build_m(y - y.mean(axis=0), k0)
    r_hat = lyb_ratio_estimator(pooled) if r is None else int(r)
    return r_hat, pooled.eigenvectors[:, :r_hat].copy()


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------

@dataclass
class ReplicationReport:
    """Aggregated outcome of :func:`run_replications`.

    ``rmse_samples`` use the per-element normalization for ``Ex2`` and the
    unnormalized one for ``Ex1``. Failed replications keep ``None`` in every
    per-replication list and count as incorrect in ``prob_correct_r``.
    """

    spec: DgpSpec
    n_reps: int
    config: FitConfig
    r_hat_samples: list
    k_hat_samples: list
    d_a1_samples: list
    rmse_samples: list
    lyb_r_hat_samples: list
    lyb_rmse_samples: list
    per_rep_seeds: list
    failures: list = field(default_factory=list)

    @property
    def rmse_kind(self) -> str:
        return "large" if self.spec.example == "Ex2" else "small"

    @staticmethod
    def _hist(values):
        c = Counter(v for v in values if v is not None)
        return {str(k): c[k] for k in sorted(c)}

    @property
    def r_hat_counts(self) -> dict:
        return self._hist(self.r_hat_samples)

    @property
    def lyb_r_hat_counts(self) -> dict:
        return self._hist(self.lyb_r_hat_samples)

    @property
    def k_hat_counts(self) -> dict:
        return self._hist(self.k_hat_samples)

    @property
    def prob_correct_r(self) -> float:
        return sum(1 for r in self.r_hat_samples if r == self.spec.r) / self.n_reps

    @property
    def lyb_prob_correct_r(self) -> float:
        return sum(1 for r in self.lyb_r_hat_samples if r == self.spec.r) / self.n_reps

    def _finite(self, values):
        return np.array([v for v in values if v is not None], dtype=float)

    def mean_rmse(self) -> float:
        return float(np.mean(self._finite(self.rmse_samples)))

    def mean_lyb_rmse(self) -> float:
        return float(np.mean(self._finite(self.lyb_rmse_samples)))

    def median_d_a1(self) -> float:
        return float(np.median(self._finite(self.d_a1_samples)))

    def to_dict(self) -> dict:
        def opt(x):
            return None if x is None else float(x)

        return {
            "format": "dynafactor.replication",
            "version": 1,
            "spec": self.spec.to_dict(),
            "config": self.config.to_dict(),
            "n_reps": self.n_reps,
            "rmse_kind": self.rmse_kind,
            "prob_correct_r": self.prob_correct_r,
            "lyb_prob_correct_r": self.lyb_prob_correct_r,
            "r_hat_counts": self.r_hat_counts,
            "k_hat_counts": self.k_hat_counts,
            "lyb_r_hat_counts": self.lyb_r_hat_counts,
            "r_hat_samples": list(self.r_hat_samples),
            "k_hat_samples": list(self.k_hat_samples),
            "d_a1_samples": [opt(x) for x in self.d_a1_samples],
            "rmse_samples": [opt(x) for x in self.rmse_samples],
            "lyb_r_hat_samples": list(self.lyb_r_hat_samples),
            "lyb_rmse_samples": [opt(x) for x in self.lyb_rmse_samples],
            "per_rep_seeds": list(self.per_rep_seeds),
            "failures": list(self.failures),
        }

    def rows(self):
        """One dict per replication, for the companion CSV."""
        for i in range(self.n_reps):
            yield {
                "rep": i,
                "seed": self.per_rep_seeds[i],
                "r_hat": self.r_hat_samples[i],
                "k_hat": self.k_hat_samples[i],
                "d_a1": self.d_a1_samples[i],
                "rmse": self.rmse_samples[i],
                "lyb_r_hat": self.lyb_r_hat_samples[i],
                "lyb_rmse": self.lyb_rmse_samples[i],
            }

    def write_csv(self, path) -> None:
        fields = ["rep", "seed", "r_hat", "k_hat", "d_a1", "rmse", "lyb_r_hat", "lyb_rmse"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: "" if v is None else (format(v, ".17g") if isinstance(v, float) else v)
                            for k, v in row.items()})


def _one_replication(spec: DgpSpec, config: FitConfig, rep: int):
    seed = spec.seed + rep
    rep_spec = replace(spec, seed=seed)
    rmse = rmse_large if spec.example == "Ex2" else rmse_small
    out = {"seed": seed, "r_hat": None, "k_hat": None, "d_a1": None, "rmse": None,
           "lyb_r_hat": None, "lyb_rmse": None, "failure": None}
    try:
        panel, truth = generate(rep_spec)
        est = fit(panel, config)
    except DynaFactorError as exc:
        out["failure"] = {"rep": rep, "seed": seed, "stage": exc.stage, "message": str(exc)}
        return out
    target = truth.common()
    out["r_hat"] = est.r_hat
    out["k_hat"] = est.k_hat
    out["d_a1"] = general_subspace_distance(est.a1, truth.l1)
    # the DGP has mean zero, so extraction applies to the raw y_t
    y = panel.values
    out["rmse"] = rmse(recover_factors(y, est.a1, est.b2) @ est.a1.T, target)
    # the baseline reuses the same pooled eigenvectors
    g = np.hstack([est.a1, est.b1])
    r_lyb = lyb_ratio_estimator(est.m_eigenvalues)
    gl = g[:, :r_lyb]
    out["lyb_r_hat"] = r_lyb
    out["lyb_rmse"] = rmse(y @ gl @ gl.T, target)
    return out


def run_replications(
    spec: DgpSpec,
    n_reps: int,
    config: Optional[FitConfig] = None,
    threads: int = 1,
) -> ReplicationReport:
    """Simulate ``n_reps`` panels and fit each one.

    Replication ``i`` uses seed ``spec.seed + i``. Results are keyed by the
    replication index, so the report does not depend on ``threads``.
    """
    if n_reps < 1:
        raise ValidationError(f"n_reps must be at least 1, got {n_reps}")
    config = config or FitConfig()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _one_replication(spec, config, i), range(n_reps)))
    else:
        results = [_one_replication(spec, config, i) for i in range(n_reps)]
    failures = [r["failure"] for r in results if r["failure"] is not None]
    if failures:
        logger.warning("%d of %d replications failed", len(failures), n_reps)
    return ReplicationReport(
        spec=spec,
        n_reps=n_reps,
        config=config,
        r_hat_samples=[r["r_hat"] for r in results],
        k_hat_samples=[r["k_hat"] for r in results],
        d_a1_samples=[r["d_a1"] for r in results],
        rmse_samples=[r["rmse"] for r in results],
        lyb_r_hat_samples=[r["lyb_r_hat"] for r in results],
        lyb_rmse_samples=[r["lyb_rmse"] for r in results],
        per_rep_seeds=[r["seed"] for r in results],
        failures=failures,
    )
