import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import average_ranks, partial_spearman
from trialcausal.citest import (
    effective_n,
    partial_corr,
    partial_corr_ranked_many,
    rank_columns,
    rank_transform,
    spearman,
    t_pvalue,
)
from trialcausal.exceptions import DataError


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=60))
def test_rank_transform_matches_sort_oracle(xs):
    np.testing.assert_array_equal(rank_transform(xs), average_ranks(xs))


def test_rank_columns_columnwise():
    a = np.array([[3, 1], [1, 1], [2, 0]])
    np.testing.assert_array_equal(rank_columns(a), [[3, 2.5], [1, 2.5], [2, 1]])


def test_spearman_matches_scipy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=80)
    y = x + rng.normal(size=80)
    res = spearman(x, y)
    ref = stats.spearmanr(x, y)
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)
    assert res.cond_set_size == 0


@pytest.mark.parametrize("seed", range(10))
def test_partial_corr_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k = 50 + 10 * seed, seed % 4
    Z = rng.normal(size=(n, k))
    x = Z.sum(axis=1) + rng.normal(size=n)
    y = np.round(x + rng.normal(size=n), 1)  # with ties
    w = rng.uniform(0.2, 2.0, size=n) if seed % 2 else None
    res = partial_corr(x, y, Z, w)
    r, p = partial_spearman(x, y, Z, w)
    assert res.statistic == pytest.approx(r, abs=1e-10)
    assert res.p_value == pytest.approx(p, abs=1e-10)


def test_collinear_conditions_are_dropped():
    rng = np.random.default_rng(3)
    z = rng.normal(size=100)
    x, y = z + rng.normal(size=100), z + rng.normal(size=100)
    once = partial_corr(x, y, z[:, None])
    twice = partial_corr(x, y, np.column_stack([z, z]))
    assert twice.cond_set_size == 1
    assert twice.statistic == pytest.approx(once.statistic, abs=1e-12)
    assert twice.p_value == pytest.approx(once.p_value, abs=1e-12)


def test_degenerate_inputs():
    x = np.arange(20.0)
    res = partial_corr(np.ones(20), x)
    assert res.degenerate and res.p_value == 1.0
    # y fully explained by the condition
    res = partial_corr(x, x ** 2, x[:, None])
    assert res.degenerate


def test_errors():
    with pytest.raises(DataError):
        partial_corr([1, 2, np.nan, 4], [1, 2, 3, 4])
    with pytest.raises(DataError):
        partial_corr([1, 2, 3], [1, 2])
    with pytest.raises(DataError):
        partial_corr(np.arange(4.0), np.arange(4.0), np.eye(4)[:, :2])
    with pytest.raises(DataError):
        partial_corr(np.arange(5.0), np.arange(5.0), weights=[1, 1, -1, 1, 1])


def test_effective_n_and_weight_scale_invariance():
    assert effective_n(np.ones(10)) == 10
    assert effective_n([1, 0, 0]) == 1
    rng = np.random.default_rng(4)
    x, y, w = rng.normal(size=(3, 40))
    w = np.abs(w)
    a, b = partial_corr(x, y, weights=w), partial_corr(x, y, weights=7 * w)
    assert a.statistic == pytest.approx(b.statistic)
    assert a.p_value == pytest.approx(b.p_value)


def test_many_equals_single():
    rng = np.random.default_rng(5)
    RX, RZ = rank_columns(rng.normal(size=(60, 4))), rank_columns(rng.normal(size=(60, 2)))
    ry = rank_transform(rng.normal(size=60))
    many = partial_corr_ranked_many(RX, ry, RZ)
    for j, res in enumerate(many):
        single = partial_corr_ranked_many(RX[:, [j]], ry, RZ)[0]
        assert res.statistic == pytest.approx(single.statistic, abs=1e-12)
        assert res.p_value == pytest.approx(single.p_value, abs=1e-12)


def test_t_pvalue_limits():
    assert t_pvalue(0.0, 10) == 1.0
    assert t_pvalue(1.0, 10) == 0.0
    assert t_pvalue(-0.5, 30) == t_pvalue(0.5, 30)


def test_null_type_one_error_roughly_nominal():
    rng = np.random.default_rng(11)
    p = np.array([partial_corr(*rng.normal(size=(2, 100)), rng.normal(size=(100, 2))).p_value for _ in range(500)])
    assert 0.02 <= np.mean(p < 0.05) <= 0.09
