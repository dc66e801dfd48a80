import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlfm.evaluation import (
    EvalReport,
    column_mean_mse,
    evaluate_trials,
    feature_usage,
    heldout_mse,
    instance_counts,
    persistence_stats,
    posterior_mean_imputation,
    summarize,
    trace_summary,
)
from dynlfm.inference import ChainTrace
from dynlfm.model import (
    Dataset,
    FeatureAllocation,
    FeatureDictionary,
    Hyperparameters,
    InstanceWeights,
    ModelState,
    activity_matrix,
)


def make_trace(imputed, cells, lam=None, **series):
    imputed = np.asarray(imputed, dtype=float)
    t = imputed.shape[0]
    base = {name: np.zeros(t) for name in ("log_joint", "n_features", "alpha", "sigma2_x", "sigma2_a",
                                           "n_instances", "sum_lifetimes")}
    base.update({k: np.asarray(v, dtype=float) for k, v in series.items()})
    state = None
    if lam is not None:
        lam = np.asarray(lam)
        k = lam.shape[1]
        state = ModelState(FeatureAllocation(lam), FeatureDictionary(np.zeros((k, 1))),
                           InstanceWeights.constant(lam.shape), Hyperparameters(rho=np.full(k, 0.5)))
    return ChainTrace(iteration=np.arange(t, dtype=float), imputed=imputed,
                      cells=np.asarray(cells, dtype=int).reshape(-1, 2), final_state=state, **base)


def test_heldout_mse_examples():
    truth = np.array([[1.0, 2.0], [3.0, 4.0]])
    exact = make_trace([[2.0, 3.0], [2.0, 3.0]], [[0, 1], [1, 0]])
    assert heldout_mse(exact, truth) == 0.0
    single = make_trace([[0.0], [1.0]], [[0, 0]])
    assert heldout_mse(single, truth) == pytest.approx(0.25)
    assert heldout_mse(single, Dataset(truth)) == pytest.approx(0.25)


def test_heldout_mse_errors():
    truth = np.ones((2, 2))
    tr = make_trace([[1.0]], [[0, 0]])
    with pytest.raises(ValueError):
        heldout_mse(make_trace(np.zeros((1, 0)), np.zeros((0, 2))), truth)
    mask = np.zeros((2, 2), dtype=bool)
    mask[1, 1] = True
    with pytest.raises(ValueError):
        heldout_mse(tr, truth, mask)
    with pytest.raises(ValueError):
        heldout_mse(tr, np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        posterior_mean_imputation(make_trace(np.zeros((0, 1)), [[0, 0]]))


def test_heldout_mse_respects_mask_subset():
    truth = np.zeros((2, 2))
    tr = make_trace([[1.0, 3.0]], [[0, 0], [1, 1]])
    mask = np.zeros((2, 2), dtype=bool)
    mask[1, 1] = True
    assert heldout_mse(tr, truth, mask) == pytest.approx(9.0)
    assert heldout_mse(tr, truth) == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.randoms(use_true_random=False))
def test_heldout_mse_invariant_to_iteration_order(t, c, rnd):
    rng = np.random.default_rng(t * 10 + c)
    imputed = rng.normal(size=(t, c))
    cells = np.column_stack([np.arange(c), np.zeros(c, dtype=int)])
    truth = rng.normal(size=(c, 1))
    order = list(range(t))
    rnd.shuffle(order)
    a = heldout_mse(make_trace(imputed, cells), truth)
    b = heldout_mse(make_trace(imputed[order], cells), truth)
    assert a == pytest.approx(b, rel=1e-12)


def test_column_mean_mse():
    data = Dataset(np.array([[1.0, np.nan], [3.0, 5.0], [np.nan, 7.0]]))
    truth = np.array([[1.0, 2.0], [3.0, 5.0], [4.0, 7.0]])
    # column means over observed cells: 2 and 6
    assert column_mean_mse(data, truth) == pytest.approx(((2 - 4) ** 2 + (6 - 2) ** 2) / 2)


def test_persistence_stats():
    ones = make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=[[1], [1], [1]])
    assert persistence_stats(ones.final_state) == 1.0
    lam = FeatureAllocation([[1, 0], [2, 3], [0, 0]])
    st_ = ModelState(lam, FeatureDictionary(np.zeros((2, 1))), InstanceWeights.constant((3, 2)),
                     Hyperparameters(rho=[0.5, 0.5]))
    assert persistence_stats(st_) == 2.0
    tr = make_trace(np.zeros((2, 0)), np.zeros((0, 2)), n_instances=[3, 1], sum_lifetimes=[6, 4])
    assert persistence_stats(tr) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        persistence_stats(make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=[[0], [0]]).final_state)


def test_feature_usage():
    one = make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=[[3], [0], [0]])
    np.testing.assert_array_equal(feature_usage(one), [3])
    two = make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=[[2, 0], [1, 1], [0, 0]])
    counts = instance_counts(two.final_state)
    assert counts[1, 0] == 2  # two simultaneous instances at row 1
    np.testing.assert_array_equal(feature_usage(two), [3, 1])
    empty = make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=np.zeros((3, 2), dtype=int))
    np.testing.assert_array_equal(feature_usage(empty), [0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_feature_usage_partitions_active_instances(seed):
    rng = np.random.default_rng(seed)
    lam = rng.integers(0, 4, size=(7, 3)) * (rng.random((7, 3)) < 0.5)
    lam = np.minimum(lam, (7 - np.arange(7))[:, None])
    tr = make_trace(np.zeros((1, 0)), np.zeros((0, 2)), lam=lam)
    assert feature_usage(tr).sum() == activity_matrix(lam).sum()


def test_summaries():
    s = summarize([2.0, 2.0, 2.0])
    assert s["mean"] == 2.0 and s["sd"] == 0.0
    assert summarize([1.0, 3.0])["mean"] == 2.0
    with pytest.raises(ValueError):
        summarize([])
    tr = make_trace(np.zeros((2, 0)), np.zeros((0, 2)), log_joint=[1, 3], n_instances=[2, 0],
                    sum_lifetimes=[5, 0])
    out = trace_summary(tr)
    assert out["log_joint"]["mean"] == 2.0
    assert out["avg_persistence"]["mean"] == 2.5


def test_evaluate_trials_report():
    truth = np.zeros((1, 1))
    traces = [make_trace([[v]], [[0, 0]], n_features=[k], n_instances=[2], sum_lifetimes=[4])
              for v, k in ((1.0, 3), (2.0, 5))]
    rep = evaluate_trials(traces, truth)
    assert isinstance(rep, EvalReport)
    assert rep.mse == [1.0, 4.0] and rep.mse_mean == 2.5
    assert rep.mse_bound == pytest.approx(np.std([1.0, 4.0], ddof=1))
    assert rep.n_features_mean == 4.0 and rep.avg_persistence_mean == 2.0 and rep.n_trials == 2
    assert "MSE 2.500" in rep.row()
    assert rep.to_dict()["bound_kind"].startswith("sample standard deviation")
    with pytest.raises(ValueError):
        evaluate_trials([], truth)
