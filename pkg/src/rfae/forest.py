"""Random forest classifier with bootstrap multiplicity tracking and the
extended RF-GAP proximities (cross, self and out-of-sample)."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

LEAF = -1


class ProximityError(ValueError):
    pass


@dataclass
class Tree:
    """A fitted (or hand-built) axis-aligned tree.

    Node ``k`` is a leaf when ``feature[k] == LEAF``; otherwise rows with
    ``x[feature[k]] <= threshold[k]`` go to ``left[k]``. ``inbag_counts[j]``
    is the bootstrap multiplicity c_j(t) of training point ``j``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, q) weighted class counts
    inbag_counts: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.inbag_counts = np.asarray(self.inbag_counts, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    def apply(self, X) -> np.ndarray:
        """Leaf (node index) reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node


@dataclass
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None  # None -> ceil(sqrt(D))
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0
    n_jobs: int = 1


@dataclass
class Forest:
    """Trees plus the per-tree training-set bookkeeping RF-GAP needs.

    ``inbag`` is ``(T, N)`` multiplicities, ``leaves`` the ``(T, N)`` leaf
    of every training row, ``leaf_sizes[t][k]`` the in-bag multiset size
    |M| of node ``k`` of tree ``t``.
    """

    trees: list[Tree]
    n_train: int
    n_classes: int
    leaves: np.ndarray
    leaf_sizes: list[np.ndarray] = field(repr=False)

    @classmethod
    def from_trees(cls, trees: list[Tree], X_train, n_classes: int) -> "Forest":
        X_train = np.asarray(X_train, dtype=np.float64)
        n = X_train.shape[0]
        leaves = np.empty((len(trees), n), dtype=np.int64)
        sizes = []
        for t, tree in enumerate(trees):
            if tree.inbag_counts.shape != (n,):
                raise ValueError("inbag_counts must have one entry per training row")
            leaves[t] = tree.apply(X_train)
            sizes.append(np.bincount(leaves[t], weights=tree.inbag_counts,
                                     minlength=tree.n_nodes))
        return cls(list(trees), n, int(n_classes), leaves, sizes)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def inbag(self) -> np.ndarray:
        return np.stack([t.inbag_counts for t in self.trees])

    @property
    def oob_mask(self) -> np.ndarray:
        """``(T, N)`` boolean, True where the point is out-of-bag."""
        return self.inbag == 0

    def oob_trees(self, i: int) -> np.ndarray:
        """S_i: indices of trees where point ``i`` is out-of-bag."""
        return np.flatnonzero(self.oob_mask[:, i])

    def inbag_trees(self, i: int) -> np.ndarray:
        """Complement of S_i: trees where point ``i`` is in-bag."""
        return np.flatnonzero(~self.oob_mask[:, i])

    def apply(self, X) -> np.ndarray:
        """``(T, M)`` leaf assignments for new rows."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.stack([t.apply(X) for t in self.trees]) if self.trees else \
            np.empty((0, X.shape[0]), dtype=np.int64)

    def predict_proba(self, X) -> np.ndarray:
        leaves = self.apply(X)
        proba = np.zeros((leaves.shape[1], self.n_classes))
        for tree, lf in zip(self.trees, leaves):
            v = tree.value[lf]
            proba += v / v.sum(axis=1, keepdims=True)
        return proba / max(self.n_trees, 1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def oob_predict_proba(self, X_train) -> np.ndarray:
        """Class votes of every training row over its out-of-bag trees."""
        proba = np.zeros((self.n_train, self.n_classes))
        for t, tree in enumerate(self.trees):
            oob = tree.inbag_counts == 0
            v = tree.value[self.leaves[t, oob]]
            proba[oob] += v / v.sum(axis=1, keepdims=True)
        return proba

    def oob_accuracy(self, X_train, y_train) -> float:
        proba = self.oob_predict_proba(X_train)
        has_vote = proba.sum(axis=1) > 0
        pred = np.argmax(proba[has_vote], axis=1)
        return float(np.mean(pred == np.asarray(y_train)[has_vote]))


# ---------------------------------------------------------------------------
# tree growing
# ---------------------------------------------------------------------------

def tree_rng(seed: int, tree_index: int, stream: int = 0, attempt: int = 0) -> np.random.Generator:
    """Independent stream per tree, so results do not depend on worker count.

    ``stream`` 0 draws bootstraps (``attempt`` counts redraws), 1 drives
    feature sampling during growth.
    """
    return np.random.default_rng([int(seed), int(tree_index), int(stream), int(attempt)])


def draw_bootstrap(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.int64)


def _best_split(Xn, y1h, w, min_leaf):
    """Best Gini split over the columns of ``Xn``.

    Returns ``(column, threshold, score)`` or ``None``. Ties go to the
    lowest column, then the lowest threshold.
    """
    n, m = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    wy = y1h * w[:, None]
    left = np.cumsum(wy[order], axis=0)[:-1]  # (n-1, m, q)
    wl = np.cumsum(w[order], axis=0)[:-1]  # (n-1, m)
    total = wy.sum(axis=0)
    wt = w.sum()
    wr = wt - wl
    right = total - left
    valid = (xs[1:] > xs[:-1]) & (wl >= min_leaf) & (wr >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left ** 2).sum(axis=2) / wl + (right ** 2).sum(axis=2) / wr
    score = np.where(valid, score, -np.inf)
    best = score.max()
    tol = 1e-12 * max(abs(best), 1.0)
    rows, cols = np.nonzero(score >= best - tol)
    c = cols.min()
    r = rows[cols == c].min()
    thr = 0.5 * (xs[r, c] + xs[r + 1, c])
    if not thr < xs[r + 1, c]:  # midpoint rounded up onto the right value
        thr = xs[r, c]
    return int(c), float(thr), float(best)


def _draw_usable_features(X, idx, mtry, rng) -> np.ndarray:
    """Up to ``mtry`` random features that vary on rows ``idx``, sorted.

    Scans a random permutation in chunks so wide inputs are not copied in
    full at every node.
    """
    perm = rng.permutation(X.shape[1])
    chunk = max(2 * mtry, 16)
    picked = []
    for s in range(0, perm.size, chunk):
        cols = perm[s:s + chunk]
        sub = X[np.ix_(idx, cols)]
        picked.extend(cols[sub.max(axis=0) > sub.min(axis=0)])
        if len(picked) >= mtry:
            break
    return np.sort(np.asarray(picked[:mtry], dtype=np.int64))


def grow_tree(X, y, inbag_counts, n_classes, mtry, rng, min_leaf=1, max_depth=None) -> Tree:
    """Grow a Gini tree on the bootstrap multiset given by ``inbag_counts``.

    At each node ``mtry`` features are drawn at random among the features
    that are not constant on the node's samples.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] == 0:
        raise ValueError("no features")
    y1h = np.eye(n_classes)[y]
    counts = np.asarray(inbag_counts, dtype=np.float64)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(counts[idx] @ y1h[idx])
        return len(feature) - 1

    root = np.flatnonzero(counts > 0)
    stack = [(new_node(root), root, 0)]
    while stack:
        node, idx, depth = stack.pop()
        cls_w = value[node]
        if (np.count_nonzero(cls_w) <= 1 or counts[idx].sum() < 2 * min_leaf
                or (max_depth is not None and depth >= max_depth) or idx.size < 2):
            continue
        feats = _draw_usable_features(X, idx, mtry, rng)
        if feats.size == 0:
            continue
        found = _best_split(X[np.ix_(idx, feats)], y1h[idx], counts[idx], min_leaf)
        if found is None:
            continue
        c, thr, _ = found
        f = int(feats[c])
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(feature, threshold, left, right, np.array(value).reshape(-1, n_classes),
                inbag_counts)


def _draw_all_bootstraps(n, n_trees, seed):
    inbag = np.stack([draw_bootstrap(n, tree_rng(seed, t)) for t in range(n_trees)]) \
        if n_trees else np.zeros((0, n), dtype=np.int64)
    if n_trees >= 50 and n >= 20:
        # both proximity formulas need |S_i| >= 1 and |S_i complement| >= 1
        for attempt in range(1, 100):
            never_oob = np.all(inbag > 0, axis=0)
            never_in = np.all(inbag == 0, axis=0)
            if not (never_oob.any() or never_in.any()):
                break
            t = (attempt - 1) % n_trees
            inbag[t] = draw_bootstrap(n, tree_rng(seed, t, 0, attempt))
    return inbag


def fit_forest(X, y, params: ForestParams | None = None, **overrides) -> Forest:
    """Fit a classification forest on training rows ``X`` with labels ``y``."""
    params = params or ForestParams()
    for k, v in overrides.items():
        setattr(params, k, v)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, D = X.shape
    q = int(y.max()) + 1
    if np.unique(y).size < 2:
        raise ValueError("need at least two classes in the training rows")
    mtry = params.mtry or int(np.ceil(np.sqrt(D)))
    mtry = min(max(mtry, 1), D)
    inbag = _draw_all_bootstraps(n, params.n_trees, params.seed)

    def build(t):
        rng = tree_rng(params.seed, t, stream=1)
        return grow_tree(X, y, inbag[t], q, mtry, rng, params.min_leaf, params.max_depth)

    if params.n_jobs and params.n_jobs > 1:
        with ThreadPoolExecutor(params.n_jobs) as ex:
            trees = list(ex.map(build, range(params.n_trees)))
    else:
        trees = [build(t) for t in range(params.n_trees)]
    return Forest.from_trees(trees, X, q)


# ---------------------------------------------------------------------------
# RF-GAP proximities
# ---------------------------------------------------------------------------

def rfgap_cross(forest: Forest, i: int, j: int) -> float:
    """Proximity p(x_i, x_j) of training rows ``i != j`` over i's OOB trees."""
    if i == j:
        return rfgap_self(forest, i)
    S = forest.oob_trees(i)
    if S.size == 0:
        raise ProximityError(f"no OOB trees for point {i}")
    total = 0.0
    for t in S:
        leaf = forest.leaves[t, i]
        if forest.leaves[t, j] == leaf:
            total += forest.trees[t].inbag_counts[j] / forest.leaf_sizes[t][leaf]
    return total / S.size


def rfgap_self(forest: Forest, i: int) -> float:
    """Self-similarity p(x_i, x_i), averaged over the trees where i is in-bag."""
    S_bar = forest.inbag_trees(i)
    if S_bar.size == 0:
        raise ProximityError(f"point {i} is never in-bag")
    total = 0.0
    for t in S_bar:
        leaf = forest.leaves[t, i]
        total += forest.trees[t].inbag_counts[i] / forest.leaf_sizes[t][leaf]
    return total / S_bar.size


def _leaf_offsets(forest: Forest) -> np.ndarray:
    sizes = [t.n_nodes for t in forest.trees]
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def _inbag_incidence(forest: Forest, offsets) -> sparse.csr_matrix:
    """(N, total_nodes) with entry c_j(t) / |M(leaf)| at j's leaf of tree t."""
    T, N = forest.n_trees, forest.n_train
    inbag = forest.inbag
    sizes = np.concatenate(forest.leaf_sizes) if T else np.zeros(0)
    cols = (forest.leaves + offsets[:, None]).ravel()
    rows = np.tile(np.arange(N), T)
    w = inbag.ravel() / np.where(sizes[cols] > 0, sizes[cols], 1.0)
    keep = w > 0
    return sparse.csr_matrix((w[keep], (rows[keep], cols[keep])),
                             shape=(N, int(sizes.size)))


def rfgap_matrix(forest: Forest) -> np.ndarray:
    """Raw training proximities: RF-GAP off the diagonal, self-similarity on it.

    Row ``i`` off-diagonal is averaged over i's OOB trees; the diagonal over
    i's in-bag trees.
    """
    T, N = forest.n_trees, forest.n_train
    oob = forest.oob_mask
    n_oob = oob.sum(axis=0)
    n_in = T - n_oob
    if np.any(n_oob == 0):
        raise ProximityError(f"no OOB trees for point {int(np.argmax(n_oob == 0))}")
    if np.any(n_in == 0):
        raise ProximityError(f"point {int(np.argmax(n_in == 0))} is never in-bag")
    offsets = _leaf_offsets(forest)
    W = _inbag_incidence(forest, offsets)
    cols = (forest.leaves + offsets[:, None]).ravel()
    rows = np.tile(np.arange(N), T)
    o = oob.ravel()
    Q = sparse.csr_matrix((np.ones(int(o.sum())), (rows[o], cols[o])), shape=W.shape)
    P = (Q @ W.T).toarray()
    P /= n_oob[:, None]
    # row i of W holds c_i(t) / |M_i(t)| for each tree where i is in-bag
    np.fill_diagonal(P, np.asarray(W.sum(axis=1)).ravel() / n_in)
    return P


def rfgap_oos(forest: Forest, X) -> np.ndarray:
    """Proximities of new rows to every training row; new rows count as OOB
    in every tree. Returns ``(M, N)``; each row sums to one."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M = X.shape[0]
    if forest.n_trees == 0:
        raise ProximityError("empty forest")
    offsets = _leaf_offsets(forest)
    W = _inbag_incidence(forest, offsets)
    leaves = forest.apply(X)  # each tree routed once
    cols = (leaves + offsets[:, None]).ravel()
    rows = np.tile(np.arange(M), forest.n_trees)
    Q = sparse.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(M, W.shape[1]))
    return (Q @ W.T).toarray() / forest.n_trees


def symmetrize(P) -> np.ndarray:
    """p'(i, j) = (P[i, j] + P[j, i]) / 2, exactly symmetric."""
    P = np.asarray(P, dtype=np.float64)
    return (P + P.T) / 2.0


def row_normalize(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    s = P.sum(axis=1)
    if np.any(s <= 0):
        raise ProximityError(f"isolated point {int(np.argmax(s <= 0))}: zero row sum")
    return P / s[:, None]


def symmetrize_and_normalize(P) -> np.ndarray:
    """Symmetrize raw proximities, then restore unit row sums."""
    P = np.asarray(P, dtype=np.float64)
    if np.any(P < 0):
        raise ProximityError("proximities must be non-negative")
    return row_normalize(symmetrize(P))


def prototype_probabilities(p_prime, medoids, fallback=None) -> np.ndarray:
    """Restrict proximity rows to the prototype columns and renormalize.

    ``p_prime`` may be one row or a matrix. Rows with no mass on any
    prototype raise :class:`ProximityError` unless ``fallback`` is given: a
    callable ``row_index -> probability vector over prototypes``.
    """
    p_prime = np.asarray(p_prime, dtype=np.float64)
    single = p_prime.ndim == 1
    R = np.atleast_2d(p_prime)[:, np.asarray(medoids, dtype=np.int64)]
    mass = R.sum(axis=1)
    dead = np.flatnonzero(mass <= 0)
    if dead.size and fallback is None:
        raise ProximityError(f"point {int(dead[0])} disconnected from prototypes")
    out = np.empty_like(R)
    ok = mass > 0
    out[ok] = R[ok] / mass[ok, None]
    if dead.size:
        warnings.warn(f"{dead.size} point(s) have no proximity mass on prototypes; "
                      "using uniform fallback", RuntimeWarning, stacklevel=2)
        for r in dead:
            out[r] = fallback(r)
    return out[0] if single else out
