"""Forward simulation: buffet draws, persistent lifetimes and the bars dataset."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, FeatureAllocation, FeatureDictionary, activity_matrix


def sample_geometric(rho: float, rng: np.random.Generator, size=None):
    """Lifetime on {1, 2, ...} with pmf ``rho * (1 - rho)**(l - 1)``."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    draw = rng.geometric(rho, size=size)
    return int(draw) if size is None else draw


def sample_ibp(n: int, alpha: float, rng: np.random.Generator) -> FeatureAllocation:
    """Run the buffet process for ``n`` customers.

    Customer ``j`` (1-based) takes each existing dish with probability
    ``m_k / j`` and then ``Poisson(alpha / j)`` new dishes.
    """
    if n < 1 or not alpha > 0:
        raise ValueError("need n >= 1 and alpha > 0")
    counts = np.zeros(0, dtype=np.int64)
    rows = []
    for j in range(1, n + 1):
        old = rng.random(counts.size) < counts / j
        n_new = rng.poisson(alpha / j)
        row = np.concatenate([old, np.ones(n_new, dtype=bool)])
        counts = np.concatenate([counts, np.zeros(n_new, dtype=np.int64)]) + row
        rows.append(row)
    z = np.zeros((n, counts.size), dtype=np.int64)
    for j, row in enumerate(rows):
        z[j, : row.size] = row
    return FeatureAllocation(z)


def sample_dynamic_process(n: int, alpha: float, a_rho: float, b_rho: float,
                           rng: np.random.Generator, rho: float | None = None,
                           return_rho: bool = False):
    """Draw ``Z ~ IBP(alpha)`` and attach geometric lifetimes to its entries.

    Each feature gets ``rho_k ~ Beta(a_rho, b_rho)`` unless a shared ``rho``
    is given.  Lifetimes are not truncated at the horizon.
    """
    z = sample_ibp(n, alpha, rng).lam
    k = z.shape[1]
    rhos = np.full(k, rho, dtype=float) if rho is not None else rng.beta(a_rho, b_rho, size=k)
    lam = np.where(z > 0, rng.geometric(np.broadcast_to(rhos, z.shape)), 0)
    alloc = FeatureAllocation(lam)
    return (alloc, rhos) if return_rho else alloc


def cambridge_bars(size: int = 6) -> np.ndarray:
    """Two horizontal and two vertical bars on a ``size x size`` grid."""
    imgs = np.zeros((4, size, size))
    imgs[0, 1, :] = 1.0
    imgs[1, size - 2, :] = 1.0
    imgs[2, :, 1] = 1.0
    imgs[3, :, size - 2] = 1.0
    return imgs.reshape(4, -1)


@dataclass
class SyntheticSpec:
    n_obs: int = 500
    feature_images: np.ndarray = field(default_factory=cambridge_bars)
    new_instance_prob: float = 0.2
    lifetime_param: float = 0.5
    noise_sd: float = 0.25
    heldout_fraction: float = 0.1
    heldout_dims_per_obs: int = 30
    seed: int = 0

    def __post_init__(self):
        self.feature_images = np.atleast_2d(np.asarray(self.feature_images, dtype=float))
        if not 0 < self.new_instance_prob <= 1 or not 0 < self.lifetime_param <= 1:
            raise ValueError("probabilities must lie in (0, 1]")
        if not 0 <= self.heldout_fraction < 1:
            raise ValueError("heldout_fraction must lie in [0, 1)")
        if self.heldout_dims_per_obs >= self.feature_images.shape[1]:
            raise ValueError("at least one dimension per test row must stay observed")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


@dataclass(frozen=True)
class SyntheticDataset:
    data: Dataset
    truth: Dataset
    true_alloc: FeatureAllocation
    true_dict: FeatureDictionary
    test_rows: np.ndarray


def heldout_mask(n_rows: int, n_dims: int, row_fraction: float, dims_per_row: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Choose ``ceil(row_fraction * N)`` test rows and hide ``dims_per_row`` cells in each.

    Returns the observed-cell mask and the sorted test row indices.
    """
    n_test = math.ceil(round(row_fraction * n_rows, 9))
    rows = np.sort(rng.choice(n_rows, size=n_test, replace=False))
    observed = np.ones((n_rows, n_dims), dtype=bool)
    for r in rows:
        observed[r, rng.choice(n_dims, size=dims_per_row, replace=False)] = False
    return observed, rows


def generate_cambridge_bars(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> SyntheticDataset:
    """Simulate the persistent bars time series and its held-out test mask.

    Every step, each feature starts a new instance with probability
    ``new_instance_prob``; the instance lasts ``Geometric(lifetime_param)``
    steps.  Noise is added to the superposition of active images.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    a = spec.feature_images
    n, k, d = spec.n_obs, a.shape[0], a.shape[1]
    starts = rng.random((n, k)) < spec.new_instance_prob
    lifetimes = rng.geometric(spec.lifetime_param, size=(n, k))
    lam = np.where(starts, lifetimes, 0)
    clean = activity_matrix(lam) @ a
    x = clean + spec.noise_sd * rng.standard_normal((n, d))
    observed, rows = heldout_mask(n, d, spec.heldout_fraction, spec.heldout_dims_per_obs, rng)
    truth = Dataset(x)
    return SyntheticDataset(
        data=Dataset(x, observed),
        truth=truth,
        true_alloc=FeatureAllocation(lam),
        true_dict=FeatureDictionary(a),
        test_rows=rows,
    )


def active_counts(lam: np.ndarray) -> np.ndarray:
    """``|Y_n|`` for every row: number of instances active at that row."""
    return activity_matrix(lam).sum(axis=1)
