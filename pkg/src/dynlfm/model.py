"""Core types and densities for the persistent-feature latent factor model.

A feature allocation is stored as one integer matrix ``lam`` where
``lam[n, k] == 0`` means feature ``k`` does not start an instance at row
``n`` and ``lam[n, k] == l >= 1`` means an instance starts at ``n`` and stays
active for rows ``n .. n + l - 1``.  Rows are 0-indexed throughout the code.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import gammaln


class WeightKind(str, Enum):
    CONSTANT = "constant-one"
    GAMMA = "gamma-distributed"


@dataclass(frozen=True)
class FeatureAllocation:
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.int64)
        if lam.ndim != 2:
            raise ValueError("allocation must be a 2-d matrix")
        if (lam < 0).any():
            raise ValueError("lifetimes must be nonnegative")
        object.__setattr__(self, "lam", lam)

    @property
    def n_rows(self) -> int:
        return self.lam.shape[0]

    @property
    def n_active_cols(self) -> int:
        return self.lam.shape[1]

    @property
    def z(self) -> np.ndarray:
        return self.lam > 0

    @property
    def counts(self) -> np.ndarray:
        """Column sums ``m_k`` of the binary pattern."""
        return self.z.sum(axis=0)

    @classmethod
    def empty(cls, n_rows: int) -> "FeatureAllocation":
        return cls(np.zeros((n_rows, 0), dtype=np.int64))

    def capped(self) -> "FeatureAllocation":
        """Clip every lifetime to the data horizon ``N - n``."""
        cap = lifetime_caps(self.n_rows)[:, None]
        return FeatureAllocation(np.minimum(self.lam, cap))

    def pruned(self) -> "FeatureAllocation":
        return FeatureAllocation(self.lam[:, self.z.any(axis=0)])


@dataclass(frozen=True)
class FeatureDictionary:
    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2:
            raise ValueError("feature dictionary must be K x D")
        if not np.isfinite(a).all():
            raise ValueError("feature dictionary has non-finite entries")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class InstanceWeights:
    b: np.ndarray
    kind: WeightKind = WeightKind.CONSTANT

    def __post_init__(self):
        kind = WeightKind(self.kind)
        b = np.asarray(self.b, dtype=float)
        if kind is WeightKind.CONSTANT:
            b = np.ones_like(b)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "kind", kind)

    @classmethod
    def constant(cls, shape) -> "InstanceWeights":
        return cls(np.ones(shape), WeightKind.CONSTANT)


@dataclass(frozen=True)
class Hyperparameters:
    """Model hyperparameters and their hyperpriors.

    Gamma distributions (for ``alpha`` and for instance weights) use the
    shape/scale parameterization.  Both variances share one inverse-gamma
    hyperprior with shape ``a_sigma`` and scale ``b_sigma``.
    """

    alpha: float = 1.0
    sigma2_x: float = 1.0
    sigma2_a: float = 1.0
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a_rho: float = 1.0
    b_rho: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    alpha_b: float = 1.0
    beta_b: float = 1.0

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        object.__setattr__(self, "rho", rho)
        for name in ("alpha", "sigma2_x", "sigma2_a", "a_rho", "b_rho", "a_alpha",
                     "b_alpha", "a_sigma", "b_sigma", "alpha_b", "beta_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if rho.size and not ((rho > 0) & (rho <= 1)).all():
            raise ValueError("rho entries must lie in (0, 1]")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    observed: np.ndarray | None = None
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("dataset must be a non-empty N x D matrix")
        if self.observed is None:
            observed = np.isfinite(x)
        else:
            observed = np.asarray(self.observed, dtype=bool)
            if observed.shape != x.shape:
                raise ValueError("mask shape does not match data")
        if not np.isfinite(x[observed]).all():
            raise ValueError("observed entries must be finite")
        x[~observed] = np.nan
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "observed", observed)
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != x.shape[1]:
                raise ValueError("one column name per dimension required")
            object.__setattr__(self, "column_names", names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    def with_mask(self, observed: np.ndarray) -> "Dataset":
        return replace(self, observed=np.asarray(observed, dtype=bool) & self.observed)


@dataclass(frozen=True)
class ModelState:
    """One point in the Markov chain."""

    alloc: FeatureAllocation
    features: FeatureDictionary
    weights: InstanceWeights
    hypers: Hyperparameters

    def __post_init__(self):
        n, k = self.alloc.lam.shape
        if self.features.a.shape[0] != k:
            raise ValueError("feature dictionary rows must match allocation columns")
        if self.weights.b.shape != (n, k):
            raise ValueError("weights must match allocation shape")
        if self.hypers.rho.shape != (k,):
            raise ValueError("one rho per feature required")

    @property
    def n_features(self) -> int:
        return self.alloc.n_active_cols


def lifetime_caps(n_rows: int) -> np.ndarray:
    """Largest identifiable lifetime for each row: ``N - n`` (0-indexed)."""
    return n_rows - np.arange(n_rows)


def harmonic_number(n: int) -> float:
    if n < 0:
        raise ValueError("n must be nonnegative")
    return float(np.sum(1.0 / np.arange(1, n + 1))) if n else 0.0


def lof_histogram(alloc: FeatureAllocation) -> Counter:
    """Multiplicities ``K_h`` of each distinct binary column pattern."""
    z = alloc.z
    return Counter("".join("1" if v else "0" for v in col) for col in z.T)


def ibp_log_prob(alloc: FeatureAllocation, alpha: float) -> float:
    """Log probability of the lof-equivalence class of ``Z`` under IBP(alpha)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    n = alloc.n_rows
    m = alloc.counts
    m = m[m > 0]
    k = m.size
    hist = lof_histogram(FeatureAllocation(alloc.lam[:, alloc.z.any(axis=0)]))
    logp = k * np.log(alpha) - alpha * harmonic_number(n)
    logp -= sum(gammaln(c + 1) for c in hist.values())
    logp += np.sum(gammaln(n - m + 1) + gammaln(m) - gammaln(n + 1))
    return float(logp)


def active_instances(alloc: FeatureAllocation, n: int) -> list[tuple[int, int]]:
    """Instances ``(start_row, feature)`` contributing to row ``n``.

    Feature indices may repeat when several instances of one feature overlap.
    """
    if not 0 <= n < alloc.n_rows:
        raise IndexError(f"row {n} out of range for {alloc.n_rows} rows")
    lam = alloc.lam[: n + 1]
    starts = np.arange(n + 1)[:, None]
    rows, cols = np.nonzero((lam > 0) & (starts + lam > n))
    return [(int(i), int(k)) for i, k in zip(rows, cols)]


def activity_matrix(lam: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Weighted totals ``y[n, k]`` for every row at once.

    Each instance adds its weight (indexed by its start row) to every row it
    covers; lifetimes running past the last row are truncated.
    """
    lam = np.asarray(lam)
    n_rows, k = lam.shape
    w = np.ones(lam.shape) if b is None else np.asarray(b, dtype=float)
    diff = np.zeros((n_rows + 1, k))
    rows, cols = np.nonzero(lam)
    stop = np.minimum(rows + lam[rows, cols], n_rows)
    np.add.at(diff, (rows, cols), w[rows, cols])
    np.add.at(diff, (stop, cols), -w[rows, cols])
    return np.cumsum(diff, axis=0)[:n_rows]


def weighted_totals(alloc: FeatureAllocation, weights: InstanceWeights, n: int) -> np.ndarray:
    y = np.zeros(alloc.n_active_cols)
    for i, k in active_instances(alloc, n):
        y[k] += weights.b[i, k]
    return y


def compute_mean(alloc: FeatureAllocation, weights: InstanceWeights,
                 features: FeatureDictionary, n: int) -> np.ndarray:
    return weighted_totals(alloc, weights, n) @ features.a


def mean_matrix(state: ModelState) -> np.ndarray:
    """All row means ``mu`` stacked as an N x D matrix."""
    y = activity_matrix(state.alloc.lam, state.weights.b)
    return y @ state.features.a


def log_likelihood(data: Dataset, alloc: FeatureAllocation, weights: InstanceWeights,
                   features: FeatureDictionary, sigma2_x: float) -> float:
    """Gaussian log-likelihood summed over the observed cells only."""
    mu = activity_matrix(alloc.lam, weights.b) @ features.a
    obs = data.observed
    r = data.x[obs] - mu[obs]
    return float(-0.5 * r.size * np.log(2 * np.pi * sigma2_x) - 0.5 * np.dot(r, r) / sigma2_x)
