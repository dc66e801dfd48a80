"""Held-out error, persistence and feature-usage summaries of fitted chains."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .inference import ChainTrace
from .model import Dataset, ModelState, activity_matrix


@dataclass
class EvalReport:
    mse_mean: float
    mse_bound: float
    n_features_mean: float
    avg_persistence_mean: float
    n_trials: int
    mse: list = field(default_factory=list)
    n_features: list = field(default_factory=list)
    avg_persistence: list = field(default_factory=list)
    bound_kind: str = "sample standard deviation across trials"

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self, label: str = "") -> str:
        return (f"{label}MSE {self.mse_mean:.3f} ± {self.mse_bound:.3f}; "
                f"features {self.n_features_mean:.2f} ± {_sd(self.n_features):.3f}; "
                f"persistence {self.avg_persistence_mean:.3f} ± {_sd(self.avg_persistence):.3f}")


def _sd(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def posterior_mean_imputation(trace: ChainTrace) -> np.ndarray:
    if len(trace) == 0:
        raise ValueError("trace has no kept iterations")
    return trace.imputed.mean(axis=0)


def heldout_mse(trace: ChainTrace, truth: Dataset | np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean squared error of the posterior-mean imputation on held-out cells.

    ``mask`` marks the cells to score (default: every cell imputed by the
    chain).  Each scored cell must have been imputed and have a finite truth.
    """
    x = truth.x if isinstance(truth, Dataset) else np.asarray(truth, dtype=float)
    est = posterior_mean_imputation(trace)
    cells = trace.cells
    if mask is None:
        pick = np.ones(len(cells), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        pick = mask[cells[:, 0], cells[:, 1]] if len(cells) else np.zeros(0, dtype=bool)
        if pick.sum() != mask.sum():
            raise ValueError("some scored cells were never imputed by the chain")
    if not pick.any():
        raise ValueError("no held-out cells to score")
    target = x[cells[pick, 0], cells[pick, 1]]
    if not np.isfinite(target).all():
        raise ValueError("truth is missing on scored cells")
    return float(np.mean((est[pick] - target) ** 2))


def column_mean_mse(data: Dataset, truth: Dataset | np.ndarray, mask: np.ndarray | None = None) -> float:
    """Baseline error from predicting each held-out cell by its column's observed mean."""
    x = truth.x if isinstance(truth, Dataset) else np.asarray(truth, dtype=float)
    if mask is None:
        mask = ~data.observed & np.isfinite(x)
    means = np.array([col[obs].mean() for col, obs in zip(data.x.T, data.observed.T)])
    rows, cols = np.nonzero(mask)
    return float(np.mean((means[cols] - x[rows, cols]) ** 2))


def persistence_stats(source: ChainTrace | ModelState) -> float:
    """Mean lifetime over active instances, pooled over kept iterations for a trace."""
    if isinstance(source, ModelState):
        lam = source.alloc.lam
        total, count = lam.sum(), (lam > 0).sum()
    else:
        total, count = source.sum_lifetimes.sum(), source.n_instances.sum()
    if count == 0:
        raise ValueError("no active instances")
    return float(total / count)


def feature_usage(source: ChainTrace | ModelState) -> np.ndarray:
    """Number of times each feature contributes to a row, most popular first.

    Uses the final state when given a trace.
    """
    state = source if isinstance(source, ModelState) else source.final_state
    if state is None:
        raise ValueError("trace carries no state")
    return np.sort(state.alloc.lam.sum(axis=0))[::-1]


def instance_counts(state: ModelState) -> np.ndarray:
    """Active-instance count of each feature at each row (N x K)."""
    return activity_matrix(state.alloc.lam)


def summarize(values) -> dict:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty series")
    return {"mean": float(values.mean()), "sd": float(values.std()), "series": values}


def trace_summary(trace: ChainTrace) -> dict:
    """Posterior mean, spread and raw series of the scalar chain quantities."""
    if len(trace) == 0:
        raise ValueError("trace has no kept iterations")
    with np.errstate(invalid="ignore", divide="ignore"):
        persistence = np.where(trace.n_instances > 0, trace.sum_lifetimes / trace.n_instances, np.nan)
    out = {name: summarize(getattr(trace, name))
           for name in ("log_joint", "n_features", "alpha", "sigma2_x", "sigma2_a")}
    kept = persistence[np.isfinite(persistence)]
    out["avg_persistence"] = (summarize(kept) if kept.size
                              else {"mean": float("nan"), "sd": float("nan"), "series": persistence})
    return out


def evaluate_trials(traces: list[ChainTrace], truth: Dataset | np.ndarray,
                    mask: np.ndarray | None = None) -> EvalReport:
    """Aggregate independent chains into one ``value ± bound`` report."""
    if not traces:
        raise ValueError("need at least one trial")
    mse = [heldout_mse(t, truth, mask) for t in traces]
    k = [float(t.n_features.mean()) for t in traces]
    pers = []
    for t in traces:
        try:
            pers.append(persistence_stats(t))
        except ValueError:
            pers.append(float("nan"))
    return EvalReport(
        mse_mean=float(np.mean(mse)),
        mse_bound=_sd(mse),
        n_features_mean=float(np.mean(k)),
        avg_persistence_mean=float(np.mean(pers)),
        n_trials=len(traces),
        mse=mse,
        n_features=k,
        avg_persistence=pers,
    )
