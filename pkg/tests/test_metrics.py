import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from iqarank.metrics import (
    UndefinedCorrelationError, average_ranks, plcc, srocc, srocc_closed_form, weighted_average,
)


def rank_oracle(x):
    """Average ranks by brute force: 1 + #smaller + (#equal - 1) / 2."""
    x = np.asarray(x, dtype=float)
    return np.array([1 + np.sum(x < v) + (np.sum(x == v) - 1) / 2 for v in x])


def pearson_oracle(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = len(a)
    num = n * np.sum(a * b) - np.sum(a) * np.sum(b)
    den = np.sqrt(n * np.sum(a * a) - np.sum(a) ** 2) * np.sqrt(n * np.sum(b * b) - np.sum(b) ** 2)
    return num / den


def test_examples():
    t = [3.0, 1.0, 4.0, 1.5]
    assert srocc(t, t) == 1.0
    assert srocc([4, 3, 2, 1], [1, 2, 3, 4]) == -1.0
    assert srocc([1, 2, 2, 4], [1, 2, 3, 4]) == pytest.approx(
        pearson_oracle([1, 2.5, 2.5, 4], [1, 2, 3, 4]), abs=1e-12)
    truth = np.array([0.3, 1.2, 2.2, 5.0])
    assert plcc(2 * truth + 3, truth) == pytest.approx(1.0, abs=1e-15)
    assert plcc(-truth, truth) == pytest.approx(-1.0, abs=1e-15)
    assert plcc([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981, abs=1e-3)


def test_average_ranks():
    assert average_ranks([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]
    x = np.random.default_rng(0).integers(0, 5, 40)
    assert np.array_equal(average_ranks(x), rank_oracle(x))


def test_undefined_cases():
    for a, b in (([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [2, 2, 2]), ([1], [1])):
        with pytest.raises(UndefinedCorrelationError):
            srocc(a, b)
        with pytest.raises(UndefinedCorrelationError):
            plcc(a, b)
    with pytest.raises(ValueError):
        plcc([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        srocc([1, np.nan], [1, 2])


def test_against_scipy_and_formula():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(2, 60))
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        assert srocc(a, b) == pytest.approx(stats.spearmanr(a, b)[0], abs=1e-12)
        assert plcc(a, b) == pytest.approx(stats.pearsonr(a, b)[0], abs=1e-12)
        assert srocc(a, b) == pytest.approx(srocc_closed_form(a, b), abs=1e-12)
        assert plcc(a, b) == pytest.approx(pearson_oracle(a, b), abs=1e-12)


def test_ties_against_scipy():
    rng = np.random.default_rng(8)
    for _ in range(200):
        n = int(rng.integers(3, 40))
        a, b = rng.integers(0, 4, n), rng.integers(0, 6, n)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert srocc(a, b) == pytest.approx(pearson_oracle(rank_oracle(a), rank_oracle(b)),
                                            abs=1e-12)
        assert srocc(a, b) == pytest.approx(stats.spearmanr(a, b)[0], abs=1e-12)


# well separated values keep exp and cube strictly monotone in float64
vectors = st.lists(st.integers(-5000, 5000), min_size=3, max_size=30, unique=True).map(
    lambda v: [x / 10 for x in v])


@settings(max_examples=150, deadline=None)
@given(vectors, st.randoms(use_true_random=False), st.floats(0.1, 10), st.floats(-5, 5))
def test_invariances(a, r, scale, shift):
    b = list(a)
    r.shuffle(b)
    a, b = np.array(a), np.array(b)
    s = srocc(a, b)
    assert srocc(b, a) == s
    assert srocc(np.exp(a / 100), b) == s
    assert srocc(a ** 3, b) == s
    assert srocc(scale * a + shift, b) == s
    p = plcc(a, b)
    assert plcc(b, a) == pytest.approx(p, abs=1e-12)
    assert plcc(scale * a + shift, b) == pytest.approx(p, abs=1e-9)


def test_weighted_average():
    assert weighted_average([0.9, 0.5], [3, 1]) == pytest.approx(0.8)
