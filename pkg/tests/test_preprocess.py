import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homecast.preprocess import NormParams, apply_norm, fit_norm, normalize_matrix, split_folds


def params(lo, hi):
    return NormParams(tuple([lo] * 10), tuple([hi] * 10))


def test_endpoints_and_midpoint():
    p = params(2.0, 6.0)
    X = np.array([[2.0] * 10, [6.0] * 10, [4.0] * 10])
    out = normalize_matrix(p, X)
    assert out[0].tolist() == [-1.0] * 10
    assert out[1].tolist() == [1.0] * 10
    assert out[2].tolist() == [0.0] * 10


def test_constant_column_maps_to_zero():
    out = normalize_matrix(params(3.0, 3.0), np.full((4, 10), 3.0))
    assert np.all(out == 0.0)


def test_clamp_only_when_asked():
    X = np.full((1, 10), 10.0)
    assert normalize_matrix(params(0.0, 1.0), X)[0, 0] == 19.0
    assert normalize_matrix(params(0.0, 1.0), X, clamp=True)[0, 0] == 1.0


def test_min_above_max_rejected():
    with pytest.raises(ValueError):
        NormParams(tuple([1.0] * 10), tuple([0.0] * 10))


def test_round_trip_dict():
    p = NormParams(tuple(np.linspace(0, 1, 10)), tuple(np.linspace(2, 3, 10)))
    assert NormParams.from_dict(p.to_dict()) == p


def test_fitted_dataset_spans_unit_interval(small_dataset):
    norm = fit_norm(small_dataset)
    X = apply_norm(norm, small_dataset).feature_matrix()
    assert X.min() >= -1.0 and X.max() <= 1.0
    raw = small_dataset.feature_matrix()
    for j in range(10):
        if raw[:, j].min() < raw[:, j].max():
            assert X[raw[:, j].argmin(), j] == -1.0
            assert X[raw[:, j].argmax(), j] == 1.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(10)),
              elements=st.floats(-1e5, 1e5, allow_nan=False)))
def test_range_and_monotonicity(X):
    p = NormParams(tuple(X.min(axis=0)), tuple(X.max(axis=0)))
    out = normalize_matrix(p, X)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)
    for j in range(10):
        order = np.argsort(X[:, j], kind="stable")
        assert np.all(np.diff(out[order, j]) >= 0)


def test_fold_sizes_for_reference_population():
    plan = split_folds([f"u{i}" for i in range(1268)], k=5, seed=0)
    assert sorted(plan.sizes(), reverse=True) == [254, 254, 254, 253, 253]


def test_folds_partition_users():
    users = [f"u{i}" for i in range(103)]
    plan = split_folds(users, k=5, seed=9)
    seen = []
    for k in range(5):
        test, train = set(plan.fold_users(k)), set(plan.train_users(k))
        assert not test & train and test | train == set(users)
        seen += plan.fold_users(k)
    assert sorted(seen) == sorted(users)


def test_folds_deterministic():
    users = [f"u{i}" for i in range(50)]
    assert split_folds(users, 5, 3) == split_folds(users, 5, 3)
    assert split_folds(users, 5, 3) != split_folds(users, 5, 4)


def test_too_few_users():
    with pytest.raises(ValueError):
        split_folds(["a", "b"], k=5)
