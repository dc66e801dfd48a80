"""MCMC posterior inference for the persistent-feature latent factor model.

The public update functions are pure: they take a :class:`ModelState` and
return new values.  :func:`run_chain` drives the same updates on a private
mutable workspace so that a sweep does not copy the whole state per cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .model import (
    Dataset,
    FeatureAllocation,
    FeatureDictionary,
    Hyperparameters,
    InstanceWeights,
    ModelState,
    WeightKind,
    activity_matrix,
    harmonic_number,
    ibp_log_prob,
    lifetime_caps,
)

log = logging.getLogger(__name__)


class Regime(str, Enum):
    FULL = "full-nonparametric"
    WEAK = "weak-limit"


class ModelKind(str, Enum):
    STATIC = "static"
    CONSTANT = "dynamic-constant"
    WEIGHTED = "dynamic-weighted"

    @property
    def dynamic(self) -> bool:
        return self is not ModelKind.STATIC

    @property
    def weight_kind(self) -> WeightKind:
        return WeightKind.GAMMA if self is ModelKind.WEIGHTED else WeightKind.CONSTANT


FIXABLE = ("alpha", "sigma2_x", "sigma2_a", "rho")
# "prior": allocation drawn from the prior; "dense": every column switched on
# at each row with probability ``init_density``; "empty": no instances.
INITS = ("prior", "dense", "empty")


@dataclass
class SamplerConfig:
    regime: Regime = Regime.WEAK
    k_max: int = 20
    n_iters: int = 1000
    burn_in: int = 500
    thin: int = 1
    initial_bracket_width: int = 10
    seed: int = 0
    model: ModelKind = ModelKind.CONSTANT
    priors: Hyperparameters = field(default_factory=Hyperparameters)
    fixed_hypers: dict = field(default_factory=dict)
    init: str = "prior"
    init_density: float = 0.1

    def __post_init__(self):
        self.regime = Regime(self.regime)
        self.model = ModelKind(self.model)
        if not 0 <= self.burn_in <= self.n_iters:
            raise ValueError("burn_in must lie in [0, n_iters]")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.regime is Regime.WEAK and self.k_max < 1:
            raise ValueError("k_max must be >= 1 in the weak-limit regime")
        if self.initial_bracket_width < 1:
            raise ValueError("initial_bracket_width must be positive")
        unknown = set(self.fixed_hypers) - set(FIXABLE)
        if unknown:
            raise ValueError(f"cannot fix {sorted(unknown)}; choose from {FIXABLE}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if not 0 < self.init_density <= 1:
            raise ValueError("init_density must lie in (0, 1]")

    @property
    def n_kept(self) -> int:
        return (self.n_iters - self.burn_in) // self.thin


@dataclass
class ChainTrace:
    """Per-kept-iteration record of one chain.

    ``imputed[t, c]`` is the value drawn for masked cell ``cells[c]`` at kept
    iteration ``t``.
    """

    iteration: np.ndarray
    log_joint: np.ndarray
    n_features: np.ndarray
    alpha: np.ndarray
    sigma2_x: np.ndarray
    sigma2_a: np.ndarray
    n_instances: np.ndarray
    sum_lifetimes: np.ndarray
    imputed: np.ndarray
    cells: np.ndarray
    final_state: ModelState | None = None
    states: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iteration)

    def series(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in SERIES}


SERIES = ("iteration", "log_joint", "n_features", "alpha", "sigma2_x", "sigma2_a",
          "n_instances", "sum_lifetimes")


class ChainError(RuntimeError):
    """Raised when the chain reaches a non-finite log joint."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


# -- workspace ---------------------------------------------------------------

class _Work:
    """Mutable copy of a state together with its cached totals and residuals."""

    def __init__(self, state: ModelState, x: np.ndarray, observed: np.ndarray,
                 model: ModelKind, regime: Regime):
        self.lam = state.alloc.lam.copy()
        self.b = state.weights.b.copy()
        self.a = state.features.a.copy()
        self.kind = state.weights.kind
        self.hypers = state.hypers
        self.rho = state.hypers.rho.copy()
        self.alpha = state.hypers.alpha
        self.sigma2_x = state.hypers.sigma2_x
        self.sigma2_a = state.hypers.sigma2_a
        self.model = model
        self.regime = regime
        self.obs = observed.astype(float)
        self.x = np.where(observed, x, 0.0)
        self.refresh()

    @property
    def n_rows(self) -> int:
        return self.lam.shape[0]

    def refresh(self):
        self.y = activity_matrix(self.lam, self.b)
        self.resid = (self.x - self.y @ self.a) * self.obs

    def to_state(self) -> ModelState:
        hypers = replace(self.hypers, alpha=self.alpha, sigma2_x=self.sigma2_x,
                         sigma2_a=self.sigma2_a, rho=self.rho.copy())
        return ModelState(FeatureAllocation(self.lam.copy()), FeatureDictionary(self.a.copy()),
                          InstanceWeights(self.b.copy(), self.kind), hypers)

    def draw_weights(self, rng, size):
        if self.kind is WeightKind.GAMMA:
            return rng.gamma(self.hypers.alpha_b, self.hypers.beta_b, size=size)
        return np.ones(size)

    def keep_columns(self, keep):
        self.lam = self.lam[:, keep]
        self.b = self.b[:, keep]
        self.y = self.y[:, keep]
        self.a = self.a[keep]
        self.rho = self.rho[keep]


def _infer_model(state: ModelState) -> ModelKind:
    return ModelKind.WEIGHTED if state.weights.kind is WeightKind.GAMMA else ModelKind.CONSTANT


def _workspace(state, data: Dataset, model=None, regime=Regime.FULL) -> _Work:
    model = _infer_model(state) if model is None else ModelKind(model)
    return _Work(state, data.x, data.observed, model, Regime(regime))


# -- lifetimes -----------------------------------------------------------------

def lambda_prior_term(lam: int, rho: float, m_minus: int, n_rows: int,
                      regime: Regime | str = Regime.FULL, k_max: int | None = None,
                      alpha: float | None = None, cap: int | None = None) -> float:
    """Conditional prior probability of one lifetime value.

    With ``cap`` given, the geometric tail beyond the horizon is lumped onto
    ``lam == cap``.
    """
    regime = Regime(regime)
    weak = regime is Regime.WEAK
    if m_minus > n_rows - 1 or m_minus < 0:
        raise ValueError("m_minus must lie in [0, n_rows - 1]")
    alpha_over_k = 0.0
    if weak:
        if k_max is None or alpha is None:
            raise ValueError("weak-limit prior needs alpha and k_max")
        alpha_over_k = alpha / k_max
    return float(np.exp(_kernels.log_lambda_prior(int(lam), float(rho), int(m_minus), int(n_rows),
                                                 weak, alpha_over_k, int(cap or 0), True)))


def _row_projections(w: _Work, k: int):
    g = np.empty(w.n_rows)
    h = np.empty(w.n_rows)
    _kernels._project(w.resid, w.a, k, w.obs, g, h)
    return g, h


def slice_sample_lambda(state: ModelState, data: Dataset, n: int, k: int,
                        rng: np.random.Generator, regime: Regime | str = Regime.FULL,
                        width: int = 10, static: bool = False) -> int:
    """Slice-sample lifetime ``lam[n, k]`` given everything else.

    Masked cells of ``data`` are integrated out of the likelihood.
    """
    regime = Regime(regime)
    w = _workspace(state, data, regime=regime)
    n_rows, n_feat = w.lam.shape
    cur = int(w.lam[n, k])
    m_minus = int((w.lam[:, k] > 0).sum()) - (cur > 0)
    weak = regime is Regime.WEAK
    if not weak and m_minus == 0:
        raise ValueError("column has no other instance; use mh_singletons")
    g, h = _row_projections(w, k)
    cap = 1 if static else n_rows - n
    return int(_kernels.slice_cell(n, cur, float(w.b[n, k]), g, h, 0.5 / w.sigma2_x,
                                   float(w.rho[k]), m_minus, n_rows, weak,
                                   w.alpha / n_feat, cap, not static, width,
                                   rng.random(width + 2)))


def _slice_sweep(w: _Work, rng, width: int):
    n_rows, n_feat = w.lam.shape
    if n_feat == 0:
        return
    uniforms = rng.random((n_feat, n_rows, width + 2))
    gamma = w.kind is WeightKind.GAMMA
    fresh = w.draw_weights(rng, w.lam.shape) if gamma else w.b
    _kernels.slice_sweep(w.lam, w.b, fresh, gamma, w.y, w.resid, w.a, w.obs, w.rho,
                         0.5 / w.sigma2_x, w.regime is Regime.WEAK, w.alpha,
                         w.model.dynamic, width, uniforms)


# -- singleton features ----------------------------------------------------------

def _singleton_step(w: _Work, n: int, rng, k_new: int | None = None,
                    fixed_rho: float | None = None, m: np.ndarray | None = None) -> bool:
    n_rows = w.n_rows
    if m is None:
        m = (w.lam > 0).sum(axis=0)
    singles = np.flatnonzero((w.lam[n] > 0) & (m == 1))
    if k_new is None:
        k_new = rng.poisson(w.alpha / n_rows)
    if singles.size == 0 and k_new == 0:
        return False
    d = w.a.shape[1]
    cap = n_rows - n if w.model.dynamic else 1
    b_new = w.draw_weights(rng, k_new)
    if fixed_rho is not None:
        rho_new = np.full(k_new, fixed_rho)
    else:
        rho_new = rng.beta(w.hypers.a_rho, w.hypers.b_rho, size=k_new)
    if w.model.dynamic:
        life_new = np.minimum(rng.geometric(rho_new), cap) if k_new else np.zeros(0, dtype=np.int64)
    else:
        life_new = np.ones(k_new, dtype=np.int64)
    a_new = np.sqrt(w.sigma2_a) * rng.standard_normal((k_new, d))

    life_old = w.lam[n, singles]
    span = int(max(life_old.max(initial=0), life_new.max(initial=0)))
    rows = slice(n, n + span)
    offs = np.arange(span)[:, None]
    contrib_old = ((offs < life_old) * w.b[n, singles]) @ w.a[singles]
    contrib_new = ((offs < life_new) * b_new) @ a_new
    obs = w.obs[rows]
    r_old = w.resid[rows]
    r_new = r_old + (contrib_old - contrib_new) * obs
    log_ratio = -0.5 * (np.sum(r_new**2) - np.sum(r_old**2)) / w.sigma2_x
    if np.log(1.0 - rng.random()) >= log_ratio:
        return False

    w.resid[rows] = r_new
    keep = np.ones(w.lam.shape[1], dtype=bool)
    keep[singles] = False
    w.keep_columns(keep)
    lam_cols = np.zeros((n_rows, k_new), dtype=np.int64)
    lam_cols[n] = life_new
    b_cols = w.draw_weights(rng, (n_rows, k_new))
    b_cols[n] = b_new
    y_cols = np.zeros((n_rows, k_new))
    y_cols[rows] = (offs < life_new) * b_new
    w.lam = np.hstack([w.lam, lam_cols])
    w.b = np.hstack([w.b, b_cols])
    w.y = np.hstack([w.y, y_cols])
    w.a = np.vstack([w.a, a_new])
    w.rho = np.concatenate([w.rho, rho_new])
    return True


def mh_singletons(state: ModelState, data: Dataset, n: int, rng: np.random.Generator,
                  k_new: int | None = None, static: bool = False) -> ModelState:
    """Birth/death move for the features used by row ``n`` alone.

    All current singletons of the row are proposed to be replaced by
    ``Poisson(alpha / N)`` fresh features drawn from their priors; the move is
    accepted with the likelihood ratio.  ``k_new`` forces the proposal size.
    """
    model = ModelKind.STATIC if static else _infer_model(state)
    w = _workspace(state, data, model=model)
    _singleton_step(w, n, rng, k_new)
    return w.to_state()


def _prune(w: _Work):
    keep = (w.lam > 0).any(axis=0)
    if not keep.all():
        w.keep_columns(keep)


# -- features and weights -----------------------------------------------------------

def feature_posterior(y: np.ndarray, x: np.ndarray, sigma2_x: float, sigma2_a: float):
    """Mean and shared column covariance of ``A`` given totals ``y`` and complete ``x``."""
    k = y.shape[1]
    prec = y.T @ y + (sigma2_x / sigma2_a) * np.eye(k)
    mean = np.linalg.solve(prec, y.T @ x)
    cov = sigma2_x * np.linalg.inv(prec)
    return mean, cov


def _draw_features(y, x, sigma2_x, sigma2_a, rng):
    k, d = y.shape[1], x.shape[1]
    if k == 0:
        return np.zeros((0, d))
    prec = y.T @ y + (sigma2_x / sigma2_a) * np.eye(k)
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, y.T @ x)
    # chol^-T eps has covariance prec^-1
    noise = np.linalg.solve(chol.T, rng.standard_normal((k, d)))
    return mean + np.sqrt(sigma2_x) * noise


def gibbs_update_A(state: ModelState, data: Dataset, rng: np.random.Generator) -> FeatureDictionary:
    """Draw the feature dictionary from its Gaussian conditional (needs complete data)."""
    if not data.observed.all():
        raise ValueError("feature update needs complete data; impute first")
    y = activity_matrix(state.alloc.lam, state.weights.b)
    h = state.hypers
    return FeatureDictionary(_draw_features(y, data.x, h.sigma2_x, h.sigma2_a, rng))


def mh_update_B(state: ModelState, data: Dataset, n: int, k: int,
                rng: np.random.Generator, proposal: float | None = None) -> float:
    """Independence Metropolis-Hastings update of one instance weight."""
    if state.weights.kind is not WeightKind.GAMMA:
        return float(state.weights.b[n, k])
    length = int(state.alloc.lam[n, k])
    if length == 0:
        raise ValueError(f"instance ({n}, {k}) is not active")
    w = _workspace(state, data)
    h = state.hypers
    if proposal is None:
        proposal = rng.gamma(h.alpha_b, h.beta_b)
    g, hh = _row_projections(w, k)
    stop = min(n + length, w.n_rows)
    ratio = _kernels.weight_log_ratio(n, stop - n, proposal - w.b[n, k], g, hh, 0.5 / h.sigma2_x)
    if np.log(1.0 - rng.random()) < ratio:
        return float(proposal)
    return float(w.b[n, k])


def _weight_sweep(w: _Work, rng) -> int:
    if w.kind is not WeightKind.GAMMA or w.lam.shape[1] == 0:
        return 0
    proposals = w.draw_weights(rng, w.lam.shape)
    uniforms = rng.random(w.lam.shape)
    return _kernels.weight_sweep(w.lam, w.b, w.y, w.resid, w.a, w.obs, 0.5 / w.sigma2_x,
                                 proposals, uniforms)


# -- hyperparameters -------------------------------------------------------------------

def _inv_gamma(shape, scale, rng):
    return scale / rng.gamma(shape)


def variance_posteriors(resid_sq: float, n_cells: int, a_sq: float, n_entries: int,
                        a_sigma: float, b_sigma: float):
    """Inverse-gamma (shape, scale) conditionals for the noise and feature variances."""
    return ((a_sigma + 0.5 * n_cells, b_sigma + 0.5 * resid_sq),
            (a_sigma + 0.5 * n_entries, b_sigma + 0.5 * a_sq))


def sample_variances(state: ModelState, data: Dataset, rng: np.random.Generator) -> tuple[float, float]:
    """Conjugate draws of ``sigma2_x`` (observed cells) and ``sigma2_a``."""
    h = state.hypers
    mu = activity_matrix(state.alloc.lam, state.weights.b) @ state.features.a
    r = (data.x - mu)[data.observed]
    a = state.features.a
    (sx, bx), (sa, ba) = variance_posteriors(float(r @ r), r.size, float(np.sum(a**2)),
                                             a.size, h.a_sigma, h.b_sigma)
    return _inv_gamma(sx, bx, rng), _inv_gamma(sa, ba, rng)


def rho_posterior(lam: np.ndarray, a_rho: float, b_rho: float, censor: bool = True):
    """Beta parameters of every ``rho_k`` given the lifetimes.

    Lifetimes that reach the data horizon are right-censored: they add to
    the failure count but not to the success count.
    """
    n_rows = lam.shape[0]
    active = lam > 0
    caps = lifetime_caps(n_rows)[:, None]
    ended = active & (lam < caps) if censor else active
    successes = ended.sum(axis=0)
    failures = np.where(active, lam - 1, 0).sum(axis=0)
    return a_rho + successes, b_rho + failures


def sample_rho(state: ModelState, rng: np.random.Generator) -> np.ndarray:
    h = state.hypers
    a, b = rho_posterior(state.alloc.lam, h.a_rho, h.b_rho)
    return rng.beta(a, b)


def alpha_posterior(n_features: int, n_rows: int, a_alpha: float, b_alpha: float):
    """Gamma (shape, scale) conditional of the IBP mass."""
    return n_features + a_alpha, b_alpha / (1.0 + b_alpha * harmonic_number(n_rows))


def sample_alpha(state: ModelState, rng: np.random.Generator) -> float:
    h = state.hypers
    k = int(state.alloc.z.any(axis=0).sum())
    shape, scale = alpha_posterior(k, state.alloc.n_rows, h.a_alpha, h.b_alpha)
    return float(rng.gamma(shape, scale))


# -- imputation ------------------------------------------------------------------------

def impute_missing(state: ModelState, data: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Complete ``data`` by drawing masked cells from their Gaussian conditional."""
    x = data.x.copy()
    miss = ~data.observed
    if miss.any():
        mu = activity_matrix(state.alloc.lam, state.weights.b) @ state.features.a
        x[miss] = mu[miss] + np.sqrt(state.hypers.sigma2_x) * rng.standard_normal(miss.sum())
    return x


# -- log joint -----------------------------------------------------------------------

def _lifetime_log_prior(lam, rho):
    caps = lifetime_caps(lam.shape[0])
    rows, cols = np.nonzero(lam)
    out = 0.0
    for n, k in zip(rows, cols):
        out += _kernels.lifetime_log_pmf(int(lam[n, k]), float(rho[k]), int(caps[n]))
    return out


def _gamma_logpdf(x, shape, scale):
    return (shape - 1) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)


def _invgamma_logpdf(x, shape, scale):
    return shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(x) - scale / x


def _beta_logpdf(x, a, b):
    return (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - (gammaln(a) + gammaln(b) - gammaln(a + b))


def log_joint(state: ModelState, data: Dataset, model: ModelKind = ModelKind.CONSTANT,
              regime: Regime = Regime.FULL) -> float:
    """Log density of the observed cells and all latent quantities."""
    model, regime = ModelKind(model), Regime(regime)
    h = state.hypers
    lam = state.alloc.lam
    n_rows, n_feat = lam.shape
    mu = activity_matrix(lam, state.weights.b) @ state.features.a
    r = (data.x - mu)[data.observed]
    out = -0.5 * r.size * np.log(2 * np.pi * h.sigma2_x) - 0.5 * float(r @ r) / h.sigma2_x
    if regime is Regime.FULL:
        out += ibp_log_prob(state.alloc, h.alpha)
    elif n_feat:
        ak = h.alpha / n_feat
        m = state.alloc.counts
        out += np.sum(np.log(ak) + gammaln(m + ak) + gammaln(n_rows - m + 1) - gammaln(n_rows + 1 + ak))
    if model.dynamic:
        out += _lifetime_log_prior(lam, h.rho)
        out += float(np.sum(_beta_logpdf(h.rho, h.a_rho, h.b_rho)))
    a = state.features.a
    out += -0.5 * a.size * np.log(2 * np.pi * h.sigma2_a) - 0.5 * float(np.sum(a**2)) / h.sigma2_a
    if state.weights.kind is WeightKind.GAMMA:
        out += float(np.sum(_gamma_logpdf(state.weights.b[lam > 0], h.alpha_b, h.beta_b)))
    out += _gamma_logpdf(h.alpha, h.a_alpha, h.b_alpha)
    out += _invgamma_logpdf(h.sigma2_x, h.a_sigma, h.b_sigma)
    out += _invgamma_logpdf(h.sigma2_a, h.a_sigma, h.b_sigma)
    return float(out)


# -- chain -------------------------------------------------------------------------------

def initial_state(data: Dataset, config: SamplerConfig, rng: np.random.Generator) -> ModelState:
    """Draw a starting allocation (see ``INITS``) and fit features to it."""
    n_rows, d = data.shape
    pri = config.priors
    fixed = config.fixed_hypers
    alpha = fixed.get("alpha", pri.alpha)
    if config.regime is Regime.WEAK:
        n_feat = config.k_max
    else:
        n_feat = rng.poisson(alpha * harmonic_number(n_rows)) if config.init != "empty" else 0
    if "rho" in fixed:
        rho = np.full(n_feat, float(fixed["rho"]))
    else:
        rho = rng.beta(pri.a_rho, pri.b_rho, size=n_feat)
    lam = np.zeros((n_rows, n_feat), dtype=np.int64)
    if config.init != "empty" and n_feat:
        if config.init == "dense":
            pi = np.full(n_feat, config.init_density)
        elif config.regime is Regime.WEAK:
            pi = rng.beta(alpha / n_feat, 1.0, size=n_feat)
        else:
            pi = np.full(n_feat, min(1.0, 1.0 / max(harmonic_number(n_rows), 1.0)))
        z = rng.random((n_rows, n_feat)) < pi
        if config.regime is Regime.FULL:
            z[rng.integers(n_rows, size=n_feat), np.arange(n_feat)] = True
        if config.model.dynamic:
            life = np.minimum(rng.geometric(np.broadcast_to(rho, z.shape)), lifetime_caps(n_rows)[:, None])
        else:
            life = np.ones(z.shape, dtype=np.int64)
        lam = np.where(z, life, 0)
    kind = config.model.weight_kind
    if kind is WeightKind.GAMMA:
        b = rng.gamma(pri.alpha_b, pri.beta_b, size=lam.shape)
    else:
        b = np.ones(lam.shape)
    x = data.x.copy()
    col_mean = np.array([c[np.isfinite(c)].mean() if np.isfinite(c).any() else 0.0 for c in x.T])
    x = np.where(data.observed, x, col_mean)
    sigma2_x = fixed.get("sigma2_x", pri.sigma2_x)
    sigma2_a = fixed.get("sigma2_a", pri.sigma2_a)
    y = activity_matrix(lam, b)
    a = _draw_features(y, x, sigma2_x, sigma2_a, rng)
    hypers = replace(pri, alpha=alpha, sigma2_x=sigma2_x, sigma2_a=sigma2_a, rho=rho)
    return ModelState(FeatureAllocation(lam), FeatureDictionary(a), InstanceWeights(b, kind), hypers)


def run_chain(data: Dataset, config: SamplerConfig, rng: np.random.Generator | None = None,
              init: ModelState | None = None, keep_states: bool = False,
              progress=None) -> ChainTrace:
    """Run one Markov chain and record every kept iteration.

    Each iteration: slice-sample all lifetimes and (fully nonparametric only)
    run the singleton moves and pruning, with masked cells integrated out;
    then impute the masked cells and update features, weights, variances,
    lifetime parameters and the IBP mass given the completed data.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init if init is not None else initial_state(data, config, rng)
    fixed = config.fixed_hypers
    miss = ~data.observed
    cells = np.argwhere(miss)
    w = _Work(state, np.where(data.observed, data.x, 0.0), np.ones(data.shape, dtype=bool),
              config.model, config.regime)
    full = config.regime is Regime.FULL
    fixed_rho = fixed.get("rho")
    width = config.initial_bracket_width
    n_rows, d = data.shape
    hp = state.hypers

    n_kept = config.n_kept
    rec = {name: np.zeros(n_kept) for name in SERIES}
    imputed = np.zeros((n_kept, len(cells)))
    states = []
    t = 0
    observed = data.observed.astype(float)
    complete = np.ones(data.shape)
    for it in range(config.n_iters):
        # lifetimes and singletons see the observed cells only
        w.obs = observed
        w.resid = (w.x - w.y @ w.a) * observed
        _slice_sweep(w, rng, width)
        if full:
            k_new = rng.poisson(w.alpha / n_rows, size=n_rows)
            m = (w.lam > 0).sum(axis=0)
            for n in range(n_rows):
                if _singleton_step(w, n, rng, int(k_new[n]), fixed_rho, m):
                    m = (w.lam > 0).sum(axis=0)
            _prune(w)

        w.obs = complete
        if len(cells):
            mu = w.y @ w.a
            w.x[miss] = mu[miss] + np.sqrt(w.sigma2_x) * rng.standard_normal(len(cells))

        w.a = _draw_features(w.y, w.x, w.sigma2_x, w.sigma2_a, rng)
        w.resid = w.x - w.y @ w.a
        _weight_sweep(w, rng)

        (sx, bx), (sa, ba) = variance_posteriors(float(np.sum(w.resid**2)), w.resid.size,
                                                 float(np.sum(w.a**2)), w.a.size,
                                                 hp.a_sigma, hp.b_sigma)
        if "sigma2_x" not in fixed:
            w.sigma2_x = _inv_gamma(sx, bx, rng)
        if "sigma2_a" not in fixed:
            w.sigma2_a = _inv_gamma(sa, ba, rng)
        if fixed_rho is None:
            ra, rb = rho_posterior(w.lam, hp.a_rho, hp.b_rho)
            w.rho = rng.beta(ra, rb) if config.model.dynamic else rng.beta(hp.a_rho, hp.b_rho, size=w.lam.shape[1])
        if "alpha" not in fixed:
            n_active = int((w.lam > 0).any(axis=0).sum())
            w.alpha = float(rng.gamma(*alpha_posterior(n_active, n_rows, hp.a_alpha, hp.b_alpha)))

        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0 and t < n_kept:
            snap = w.to_state()
            lj = log_joint(snap, data, config.model, config.regime)
            if not np.isfinite(lj):
                raise ChainError(f"non-finite log joint at iteration {it}: "
                                 f"K={snap.n_features} alpha={w.alpha:.4g} "
                                 f"sigma2_x={w.sigma2_x:.4g} sigma2_a={w.sigma2_a:.4g}",
                                 state=snap, iteration=it)
            active = w.lam > 0
            rec["iteration"][t] = it
            rec["log_joint"][t] = lj
            rec["n_features"][t] = active.any(axis=0).sum()
            rec["alpha"][t] = w.alpha
            rec["sigma2_x"][t] = w.sigma2_x
            rec["sigma2_a"][t] = w.sigma2_a
            rec["n_instances"][t] = active.sum()
            rec["sum_lifetimes"][t] = w.lam.sum()
            imputed[t] = w.x[miss]
            if keep_states:
                states.append(snap)
            t += 1
        if progress is not None:
            progress(it)

    return ChainTrace(imputed=imputed, cells=cells, final_state=w.to_state(),
                      states=states, **rec)


def run_chains(data: Dataset, config: SamplerConfig, n_chains: int = 1,
               parallel: bool = False, **kwargs) -> list[ChainTrace]:
    """Independent chains seeded from spawned streams of ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).spawn(n_chains)
    if parallel and n_chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_chains) as pool:
            futures = [pool.submit(_run_seeded, data, config, s, kwargs) for s in seeds]
            return [f.result() for f in futures]
    return [_run_seeded(data, config, s, kwargs) for s in seeds]


def _run_seeded(data, config, seed_seq, kwargs):
    return run_chain(data, config, np.random.default_rng(seed_seq), **kwargs)
