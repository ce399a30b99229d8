"""Data ingestion, min-max normalization, stratified splitting and the
artificial tree generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when input data violates the dataset contract."""


@dataclass
class Dataset:
    """Feature matrix with integer class labels in ``[0, q)``."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = None
    class_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DatasetError("labels must have one entry per row")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("non-finite feature value")
        if self.labels.size and self.labels.min() < 0:
            raise DatasetError("labels must be non-negative")
        q = self.n_classes
        if q < 2:
            raise DatasetError("single-class data")
        if np.any(np.bincount(self.labels, minlength=q) == 0):
            raise DatasetError("every class in [0, q) needs at least one sample")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, indices) -> "Dataset":
        """Rows ``indices`` as a new dataset (labels keep their codes)."""
        indices = np.asarray(indices, dtype=np.int64)
        out = object.__new__(Dataset)
        out.features = self.features[indices]
        out.labels = self.labels[indices]
        out.feature_names = self.feature_names
        out.class_names = self.class_names
        return out


@dataclass
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DatasetError("test_fraction must lie in (0, 1)")


@dataclass
class Normalizer:
    """Per-feature min-max scaler fitted on training rows."""

    minimum: np.ndarray
    maximum: np.ndarray

    def transform(self, X) -> np.ndarray:
        return apply_normalizer(self, X)


def load_csv(path, label_column: str | int = -1) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    label_column : str or int
        Column name, or positional index (negative counts from the end).

    Labels are mapped to ``0..q-1`` in order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError("empty file")
    header, body = rows[0], rows[1:]
    width = len(header)
    if isinstance(label_column, str) and not _is_int(label_column):
        if label_column not in header:
            raise DatasetError(f"label column {label_column!r} not in header")
        col = header.index(label_column)
    else:
        col = int(label_column)
        if not -width <= col < width:
            raise DatasetError(f"label column index {col} out of range")
        col %= width

    feature_cols = [c for c in range(width) if c != col]
    X = np.empty((len(body), len(feature_cols)))
    raw_labels = []
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise DatasetError(f"ragged row at line {r}: {len(row)} cells, expected {width}")
        for k, c in enumerate(feature_cols):
            try:
                X[r - 2, k] = float(row[c])
            except ValueError:
                raise DatasetError(
                    f"non-numeric feature {row[c]!r} at line {r}, column {header[c]!r}"
                ) from None
        raw_labels.append(row[col].strip())

    codes: dict[str, int] = {}
    y = np.array([codes.setdefault(v, len(codes)) for v in raw_labels], dtype=np.int64)
    if len(codes) < 2:
        raise DatasetError("single-class data")
    return Dataset(X, y, feature_names=[header[c] for c in feature_cols],
                   class_names=list(codes))


def save_csv(path, features, labels=None, feature_names=None, label_name="label"):
    """Write features (and optionally labels) as a headered CSV."""
    features = np.asarray(features, dtype=np.float64)
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(features.shape[1])]
    header = list(feature_names) + ([label_name] if labels is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(features):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            w.writerow(cells)


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def stratified_split(data: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Split row indices into sorted (train, test) arrays.

    With ``spec.stratified`` each class contributes ``floor(n_c * f + 0.5)``
    test rows, capped so at least one row of the class stays in training.
    """
    rng = np.random.default_rng(spec.seed)
    n = data.n_samples
    if not spec.stratified:
        perm = rng.permutation(n)
        n_test = min(max(int(np.floor(n * spec.test_fraction + 0.5)), 0), n - 1)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])

    test = []
    for c in range(data.n_classes):
        members = np.flatnonzero(data.labels == c)
        if members.size < 2:
            raise DatasetError(f"class {c} has a single sample; cannot stratify")
        n_test = int(np.floor(members.size * spec.test_fraction + 0.5))
        n_test = min(n_test, members.size - 1)
        test.append(rng.permutation(members)[:n_test])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    return train_idx, test_idx


def fit_normalizer(data: Dataset | np.ndarray, train_indices=None) -> Normalizer:
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if train_indices is not None:
        X = X[np.asarray(train_indices)]
    if X.shape[0] == 0:
        raise DatasetError("no training rows to fit the normalizer")
    return Normalizer(X.min(axis=0), X.max(axis=0))


def apply_normalizer(norm: Normalizer, X) -> np.ndarray:
    """Min-max transform, constant columns to 0, result clamped to [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    span = norm.maximum - norm.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - norm.minimum) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def minmax_scale(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return apply_normalizer(fit_normalizer(X), X)


# ---------------------------------------------------------------------------
# artificial tree
# ---------------------------------------------------------------------------

DEFAULT_PARENTS = (-1, 0, 0, 1, 1, 2, 2, 3, 4, 6)


@dataclass
class TreeLayout:
    """Topology of the artificial tree: branch lengths and parent branches.

    ``parents[b]`` is the branch whose endpoint branch ``b`` starts from
    (``-1`` for the root branch, which starts at the origin).
    """

    branch_lengths: Sequence[int] = (100,) * 10
    parents: Sequence[int] | None = None
    points_per_node: int = 40
    dims_per_branch: int = 4

    def __post_init__(self):
        n = len(self.branch_lengths)
        if n < 2:
            raise DatasetError("the artificial tree needs at least two branches")
        if self.parents is None:
            if n == len(DEFAULT_PARENTS):
                self.parents = DEFAULT_PARENTS
            else:
                # binary-heap style fan-out
                self.parents = tuple([-1] + [(b - 1) // 2 for b in range(1, n)])
        if len(self.parents) != n or self.parents[0] != -1:
            raise DatasetError("parents must list one parent per branch, root first")
        for b, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < b:
                raise DatasetError("each branch must attach to an earlier branch")

    @property
    def n_branches(self) -> int:
        return len(self.branch_lengths)

    @property
    def n_dims(self) -> int:
        return self.dims_per_branch * self.n_branches

    @property
    def n_samples(self) -> int:
        # every branch end is either a leaf endpoint or a branching point
        return int(sum(self.branch_lengths)) + self.n_branches * self.points_per_node


def artificial_tree_clean(layout: TreeLayout) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free, unnormalized tree coordinates and branch labels."""
    k = layout.dims_per_branch
    ends = np.zeros((layout.n_branches, layout.n_dims))
    blocks, labels = [], []
    for b, (length, parent) in enumerate(zip(layout.branch_lengths, layout.parents)):
        start = ends[parent] if parent >= 0 else np.zeros(layout.n_dims)
        steps = np.arange(1, length + 1, dtype=np.float64)
        pts = np.tile(start, (length, 1))
        pts[:, k * b:k * (b + 1)] += steps[:, None]
        ends[b] = pts[-1]
        blocks.append(pts)
        labels.append(np.full(length, b))
    for b in range(layout.n_branches):
        blocks.append(np.tile(ends[b], (layout.points_per_node, 1)))
        labels.append(np.full(layout.points_per_node, b))
    return np.vstack(blocks), np.concatenate(labels).astype(np.int64)


def generate_artificial_tree(seed: int = 0, branch_lengths: Sequence[int] = (100,) * 10,
                             noise_sd: float = 7.0, parents: Sequence[int] | None = None,
                             points_per_node: int = 40, normalize: bool = True) -> Dataset:
    """Branching tree data set with Gaussian noise.

    Branch ``b`` grows linearly (unit steps) in dimensions ``[4b, 4b+4)``
    starting from the endpoint of its parent branch. Each branch end gets
    ``points_per_node`` extra points placed exactly at the end before noise.
    Labels are branch indices.
    """
    if noise_sd < 0:
        raise DatasetError("noise_sd must be non-negative")
    layout = TreeLayout(tuple(int(v) for v in branch_lengths), parents, points_per_node)
    X, y = artificial_tree_clean(layout)
    rng = np.random.default_rng(seed)
    if noise_sd > 0:
        X = X + rng.normal(0.0, noise_sd, size=X.shape)
    if normalize:
        X = minmax_scale(X)
    return Dataset(X, y, feature_names=[f"dim{j}" for j in range(X.shape[1])])


def add_noise_features(data: Dataset, snr: float, seed: int = 0) -> Dataset:
    """Append ``round(D / snr)`` columns drawn from U(0, 1)."""
    if not snr > 0:
        raise DatasetError("snr must be positive")
    if np.isinf(snr):
        return data
    n_noise = int(round(data.n_features / snr))
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 1.0, size=(data.n_samples, n_noise))
    names = list(data.feature_names or [f"f{j}" for j in range(data.n_features)])
    names += [f"noise{j}" for j in range(n_noise)]
    return Dataset(np.hstack([data.features, noise]), data.labels, feature_names=names,
                   class_names=data.class_names)
