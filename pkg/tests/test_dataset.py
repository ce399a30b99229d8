"""Tests for CSV ingestion, splitting, normalization and the artificial tree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfae.dataset import (DEFAULT_PARENTS, Dataset, DatasetError, SplitSpec, TreeLayout,
                          add_noise_features, apply_normalizer, artificial_tree_clean,
                          fit_normalizer, generate_artificial_tree, load_csv, save_csv,
                          stratified_split)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# load_csv
# ---------------------------------------------------------------------------

def test_first_appearance_label_mapping(tmp_path):
    data = load_csv(write(tmp_path, "x,y,label\n1,2,a\n3,4,b\n5,6,a\n"))
    np.testing.assert_array_equal(data.labels, [0, 1, 0])
    assert data.class_names == ["a", "b"]
    assert data.feature_names == ["x", "y"]


def test_named_label_column(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["class,a,b,c,d"]
    for k in range(150):
        rows.append(",".join([f"c{k % 3}"] + [repr(float(v)) for v in rng.random(4)]))
    data = load_csv(write(tmp_path, "\n".join(rows) + "\n"), label_column="class")
    assert (data.n_samples, data.n_features, data.n_classes) == (150, 4, 3)


@pytest.mark.parametrize("text,message", [
    ("x,label\n1,a\nfoo,b\n", "non-numeric feature"),
    ("x,y,label\n1,2,a\n3,b\n", "ragged row"),
    ("x,label\n1,a\n2,a\n", "single-class"),
])
def test_load_errors(tmp_path, text, message):
    with pytest.raises(DatasetError, match=message):
        load_csv(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="missing file"):
        load_csv(tmp_path / "nope.csv")


def test_save_load_round_trip(tmp_path):
    X = np.array([[0.1, 1e-17], [2.5, -3.0], [1 / 3, 7.0]])
    save_csv(tmp_path / "rt.csv", X, [0, 1, 1])
    data = load_csv(tmp_path / "rt.csv")
    np.testing.assert_array_equal(data.features, X)


def test_dataset_rejects_non_finite():
    with pytest.raises(DatasetError, match="non-finite"):
        Dataset(np.array([[np.nan], [1.0]]), np.array([0, 1]))


# ---------------------------------------------------------------------------
# stratified split
# ---------------------------------------------------------------------------

def _labelled(sizes):
    y = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
    return Dataset(np.arange(y.size, dtype=float)[:, None], y)


def test_balanced_split_one_per_class():
    tr, te = stratified_split(_labelled([5, 5]), SplitSpec(0.2, seed=1))
    assert te.size == 2
    assert sorted(_labelled([5, 5]).labels[te]) == [0, 1]


def test_unbalanced_split_counts():
    data = _labelled([50, 30, 20])
    _, te = stratified_split(data, SplitSpec(0.2, seed=0))
    np.testing.assert_array_equal(np.bincount(data.labels[te]), [10, 6, 4])


def test_split_is_deterministic():
    data = _labelled([13, 7, 9])
    a = stratified_split(data, SplitSpec(0.3, seed=5))
    b = stratified_split(data, SplitSpec(0.3, seed=5))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def test_singleton_class_rejected():
    with pytest.raises(DatasetError):
        stratified_split(_labelled([5, 1]), SplitSpec(0.2))


@settings(max_examples=50, deadline=None)
@given(sizes=st.lists(st.integers(2, 40), min_size=2, max_size=6),
       frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**32 - 1))
def test_split_partitions_exactly(sizes, frac, seed):
    data = _labelled(sizes)
    tr, te = stratified_split(data, SplitSpec(frac, seed=seed))
    assert np.intersect1d(tr, te).size == 0
    np.testing.assert_array_equal(np.union1d(tr, te), np.arange(data.n_samples))
    assert np.unique(data.labels[tr]).size == len(sizes)
    for c, n_c in enumerate(sizes):
        n_test = np.sum(data.labels[te] == c)
        assert abs(n_test - frac * n_c) <= 1


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_minmax_affine_constant_and_clamp():
    X = np.array([[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]])
    norm = fit_normalizer(X)
    np.testing.assert_allclose(apply_normalizer(norm, X), [[0, 0], [0.5, 0], [1, 0]])
    np.testing.assert_allclose(apply_normalizer(norm, [[8.0, 9.0], [-1.0, 5.0]]), [[1, 0], [0, 0]])


def test_normalizer_uses_train_rows_only():
    X = np.array([[0.0], [10.0], [100.0]])
    norm = fit_normalizer(X, train_indices=[0, 1])
    assert norm.maximum[0] == 10.0


# ---------------------------------------------------------------------------
# artificial tree
# ---------------------------------------------------------------------------

def test_default_tree_shape():
    data = generate_artificial_tree(seed=0)
    n_ends = len(DEFAULT_PARENTS)
    assert data.n_features == 40
    assert data.n_samples == 10 * 100 + n_ends * 40
    assert data.n_classes == 10
    assert data.features.min() == 0.0 and data.features.max() == 1.0


def test_child_branch_constant_in_parent_dims():
    layout = TreeLayout(branch_lengths=(100, 100), parents=(-1, 0))
    X, y = artificial_tree_clean(layout)
    branch1 = X[y == 1]
    end0 = X[y == 0][:100][-1]
    np.testing.assert_array_equal(branch1[:, :4], np.tile(end0[:4], (branch1.shape[0], 1)))


def test_clean_branches_are_collinear():
    X, y = artificial_tree_clean(TreeLayout())
    for b in range(10):
        pts = X[y == b][:, 4 * b:4 * b + 4]
        centered = pts - pts.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        assert s[1] <= 1e-9 * s[0]


def test_generator_determinism_and_noise():
    a = generate_artificial_tree(seed=3, normalize=False)
    b = generate_artificial_tree(seed=3, normalize=False)
    np.testing.assert_array_equal(a.features, b.features)
    clean, _ = artificial_tree_clean(TreeLayout())
    assert np.std(a.features - clean) == pytest.approx(7.0, rel=0.02)


def test_negative_noise_rejected():
    with pytest.raises(DatasetError):
        generate_artificial_tree(noise_sd=-1.0)


@pytest.mark.parametrize("snr,expected", [(np.inf, 40), (1.0, 80), (0.1, 440), (0.01, 4040)])
def test_noise_feature_counts(snr, expected):
    data = add_noise_features(generate_artificial_tree(seed=0), snr, seed=1)
    assert data.n_features == expected
    extra = data.features[:, 40:]
    assert extra.size == 0 or (extra.min() >= 0 and extra.max() <= 1)
