"""Tests for dissimilarities, PAM and class-wise prototype selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_best, no_improving_swap
from rfae.prototypes import (build_dissimilarity, kmedoids_classwise, pam, prototypes_per_class,
                             resolve_n_prototypes, total_deviation)


def random_dissimilarity(rng, n, dim=2):
    pts = rng.random((n, dim))
    return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))


def test_dissimilarity_values():
    p = np.array([[0.5, 0.1], [0.1, 0.0]])
    d = build_dissimilarity(p)
    assert d[0, 0] == 0.0 and d[1, 1] == 1.0
    assert d[0, 1] == pytest.approx(0.8)
    np.testing.assert_array_equal(d, d.T)


def test_all_zero_rejected():
    with pytest.raises(ValueError, match="all-zero"):
        build_dissimilarity(np.zeros((3, 3)))


def test_one_medoid_is_the_median():
    d = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 1.5], [3.0, 1.5, 0.0]])
    assert list(pam(d, 1)) == [1]


def test_full_class_selected():
    d = random_dissimilarity(np.random.default_rng(0), 6)
    assert list(pam(d, 6)) == list(range(6))


@pytest.mark.parametrize("seed", range(10))
def test_two_clumps_match_exhaustive(seed):
    rng = np.random.default_rng(seed)
    clump_a = rng.normal(0.0, 0.1, (5, 2))
    clump_b = rng.normal(5.0, 0.1, (5, 2))
    pts = np.vstack([clump_a, clump_b])[rng.permutation(10)]
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    med = pam(d, 2)
    assert total_deviation(d, med) == pytest.approx(exhaustive_best(d, 2), abs=1e-12)
    near_a = [np.linalg.norm(pts[m]) < 2.5 for m in med]
    assert sorted(near_a) == [False, True]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 25), k=st.integers(1, 5))
def test_pam_is_swap_locally_optimal(seed, n, k):
    k = min(k, n)
    d = random_dissimilarity(np.random.default_rng(seed), n)
    med = pam(d, k)
    assert len(set(med)) == k
    assert no_improving_swap(d, list(med))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pam_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    d = random_dissimilarity(rng, 12)
    perm = rng.permutation(12)
    a = total_deviation(d, pam(d, 3))
    b = total_deviation(d[np.ix_(perm, perm)], pam(d[np.ix_(perm, perm)], 3))
    # both are swap-local optima; on random continuous data they coincide
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("sizes,n_star,expected", [
    ([10, 10, 10], 6, [2, 2, 2]),
    ([50, 30, 20], 10, [4, 3, 3]),
    ([2, 30, 30], 12, [2, 5, 5]),
    ([1, 1, 10], 6, [1, 1, 4]),
])
def test_prototypes_per_class(sizes, n_star, expected):
    out = prototypes_per_class(sizes, n_star)
    np.testing.assert_array_equal(out, expected)
    assert out.sum() == n_star


def test_fewer_prototypes_than_classes_rejected():
    with pytest.raises(ValueError, match="at least one prototype per class"):
        prototypes_per_class([5, 5, 5], 2)


def test_classwise_membership():
    rng = np.random.default_rng(1)
    d = random_dissimilarity(rng, 30)
    labels = np.repeat([0, 1, 2], 10)
    ms = kmedoids_classwise(d, labels, 6)
    assert len(ms) == 6
    np.testing.assert_array_equal(ms.indices, np.sort(ms.indices))
    for c, idx in ms.per_class.items():
        assert np.all(labels[idx] == c) and idx.size == 2
        sub = d[np.ix_(labels == c, labels == c)]
        local = np.flatnonzero(labels == c)
        assert no_improving_swap(sub, [int(np.flatnonzero(local == i)[0]) for i in idx])


@pytest.mark.parametrize("value,n,expected", [(0.1, 1120, 112), (25, 1120, 25), (0.001, 100, 1)])
def test_resolve_n_prototypes(value, n, expected):
    assert resolve_n_prototypes(value, n) == expected
