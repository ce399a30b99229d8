"""Tests for tree growing and RF-GAP proximities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import HAND_TREES, HAND_X, build_hand_forest, tally_proximity
from rfae.forest import (LEAF, ProximityError, draw_bootstrap, fit_forest, grow_tree,
                         prototype_probabilities, rfgap_cross, rfgap_matrix, rfgap_oos,
                         rfgap_self, row_normalize, symmetrize, symmetrize_and_normalize, tree_rng)


# ---------------------------------------------------------------------------
# hand-built forest against the tally oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("i", range(6))
@pytest.mark.parametrize("j", range(6))
def test_cross_and_self_match_tally(hand_forest, i, j):
    expected = tally_proximity(HAND_TREES, HAND_X, i, j)
    got = rfgap_self(hand_forest, i) if i == j else rfgap_cross(hand_forest, i, j)
    assert got == pytest.approx(expected, abs=1e-12)


def test_matrix_matches_loop_versions(hand_forest):
    P = rfgap_matrix(hand_forest)
    for i in range(6):
        for j in range(6):
            ref = rfgap_self(hand_forest, i) if i == j else rfgap_cross(hand_forest, i, j)
            assert P[i, j] == pytest.approx(ref, abs=1e-12)


def test_oos_matches_tally(hand_forest):
    rng = np.random.default_rng(3)
    X_new = rng.random((8, 2))
    P = rfgap_oos(hand_forest, X_new)
    for r, x in enumerate(X_new):
        for j in range(6):
            assert P[r, j] == pytest.approx(tally_proximity(HAND_TREES, HAND_X, j=j, x_new=x),
                                            abs=1e-12)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_off_diagonal_rows_sum_to_one(hand_forest):
    P = rfgap_matrix(hand_forest)
    off = P.sum(axis=1) - np.diag(P)
    np.testing.assert_allclose(off, 1.0, atol=1e-12)


def test_normalized_rows_are_stochastic(hand_forest):
    pt = symmetrize_and_normalize(rfgap_matrix(hand_forest))
    np.testing.assert_allclose(pt.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(symmetrize(pt), symmetrize(pt).T)


def test_point_never_oob_is_an_error():
    forest = build_hand_forest()
    forest.trees[1].inbag_counts[0] = 1  # point 0 now in-bag everywhere
    with pytest.raises(ProximityError, match="no OOB trees"):
        rfgap_cross(forest, 0, 1)
    with pytest.raises(ProximityError):
        rfgap_matrix(forest)


def test_point_never_inbag_is_an_error():
    forest = build_hand_forest()
    forest.trees[0].inbag_counts[1] = 0
    forest.trees[1].inbag_counts[1] = 0  # point 1 now OOB everywhere
    with pytest.raises(ProximityError, match="never in-bag"):
        rfgap_self(forest, 1)


def test_isolated_row_rejected():
    with pytest.raises(ValueError, match="isolated"):
        row_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))


# ---------------------------------------------------------------------------
# prototype probabilities
# ---------------------------------------------------------------------------

def test_prototype_probabilities_renormalize():
    p = np.array([[0.5, 0.2, 0.3], [0.1, 0.6, 0.3]])
    out = prototype_probabilities(p, [0, 2])
    np.testing.assert_allclose(out, [[0.625, 0.375], [0.25, 0.75]])


def test_prototype_probabilities_disconnected():
    p = np.array([[0.0, 1.0, 0.0]])
    with pytest.raises(ValueError, match="disconnected"):
        prototype_probabilities(p, [0, 2])
    with pytest.warns(RuntimeWarning):
        out = prototype_probabilities(p, [0, 2], fallback=lambda r: np.array([0.5, 0.5]))
    np.testing.assert_allclose(out, [[0.5, 0.5]])


# ---------------------------------------------------------------------------
# tree growing
# ---------------------------------------------------------------------------

def test_bootstrap_counts_sum_to_n():
    c = draw_bootstrap(50, tree_rng(0, 3))
    assert c.sum() == 50 and c.dtype.kind == "i"


def test_tree_rng_streams_are_distinct():
    a = tree_rng(1, 2, stream=0).random(4)
    b = tree_rng(1, 2, stream=1).random(4)
    assert not np.allclose(a, b)


def test_single_split_separates_classes():
    X = np.array([[0.0], [0.1], [0.2], [0.8], [0.9], [1.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    tree = grow_tree(X, y, np.ones(6, dtype=np.int64), 2, 1, np.random.default_rng(0))
    assert tree.feature[0] == 0
    assert 0.2 < tree.threshold[0] < 0.8
    assert tree.n_nodes == 3
    np.testing.assert_array_equal(tree.apply(X) == tree.left[0], y == 0)


def test_pure_node_is_a_leaf():
    X = np.arange(5.0)[:, None]
    tree = grow_tree(X, np.zeros(5, dtype=np.int64), np.ones(5, dtype=np.int64), 2, 1,
                     np.random.default_rng(0))
    assert tree.n_nodes == 1 and tree.feature[0] == LEAF


def test_max_depth_respected():
    rng = np.random.default_rng(0)
    X = rng.random((80, 3))
    y = (X[:, 0] + X[:, 1] > 1).astype(np.int64)
    tree = grow_tree(X, y, np.ones(80, dtype=np.int64), 2, 3, rng, max_depth=2)
    depth = np.zeros(tree.n_nodes, dtype=int)
    for k in range(tree.n_nodes):
        if tree.feature[k] != LEAF:
            depth[tree.left[k]] = depth[tree.right[k]] = depth[k] + 1
    assert depth.max() <= 2


def test_forest_fits_training_data(small_tree):
    forest = fit_forest(small_tree.features, small_tree.labels, n_trees=30, seed=1)
    assert forest.n_trees == 30
    assert np.mean(forest.predict(small_tree.features) == small_tree.labels) > 0.95
    assert forest.oob_accuracy(small_tree.features, small_tree.labels) > 0.8


def test_forest_is_deterministic_across_thread_counts(small_tree):
    a = fit_forest(small_tree.features, small_tree.labels, n_trees=50, seed=4, n_jobs=1)
    b = fit_forest(small_tree.features, small_tree.labels, n_trees=50, seed=4, n_jobs=3)
    np.testing.assert_array_equal(a.leaves, b.leaves)
    np.testing.assert_array_equal(rfgap_matrix(a), rfgap_matrix(b))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(20, 40))
def test_random_forest_proximity_invariants(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    y = (X[:, 0] > 0.5).astype(np.int64)
    y[:2] = [0, 1]
    forest = fit_forest(X, y, n_trees=60, seed=seed)
    P = rfgap_matrix(forest)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1) - np.diag(P), 1.0, atol=1e-9)
    Q = rfgap_oos(forest, rng.random((5, 3)))
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-9)
