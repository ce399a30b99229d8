"""Evaluation of out-of-sample embeddings.

Structure preservation scores between test-train distance matrices, the
correlation-aware feature perturbation, classification and structural
importances, and their Kendall alignment (SIA), plus the k-NN protocol.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .network import TrainConfig, adamw_step, init_layers, stack_backward, stack_forward


class MetricError(ValueError):
    pass


@dataclass
class DistancePair:
    """Test-train distances in input space (``true``) and embedding space."""

    true: np.ndarray
    emb: np.ndarray

    def __post_init__(self):
        self.true = np.asarray(self.true, dtype=np.float64)
        self.emb = np.asarray(self.emb, dtype=np.float64)
        if self.true.shape != self.emb.shape:
            raise MetricError("distance matrices must have equal shapes")
        if np.any(self.true < 0) or np.any(self.emb < 0):
            raise MetricError("distances must be non-negative")

    @classmethod
    def from_points(cls, X_test, X_train, Z_test, Z_train) -> "DistancePair":
        return cls(cdist(X_test, X_train), cdist(Z_test, Z_train))

    @property
    def n_train(self) -> int:
        return self.true.shape[1]


def pairwise_distances(A, B) -> np.ndarray:
    return cdist(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))


# ---------------------------------------------------------------------------
# local scores
# ---------------------------------------------------------------------------

def _ranks(D) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise neighbor order and 1-based ranks; ties go to the lower index."""
    order = np.argsort(D, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(D.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, D.shape[1] + 1)
    return order, ranks


class _LocalScorer:
    """Caches neighbor orders so several K values reuse one sort."""

    def __init__(self, true, emb):
        self.true_order, self.true_rank = _ranks(true)
        self.emb_order, _ = _ranks(emb)

    def qnx(self, K):
        hit = np.take_along_axis(self.true_rank, self.emb_order[:, :K], axis=1) <= K
        return float(np.mean(hit.sum(axis=1) / K))

    def trust(self, K):
        n_test, n_train = self.true_rank.shape
        norm = 2 * n_train - 3 * K - 1
        if norm <= 0:
            raise MetricError(f"K={K} too large for trustworthiness with {n_train} points")
        r = np.take_along_axis(self.true_rank, self.emb_order[:, :K], axis=1)
        penalty = np.where(r > K, r - K, 0).sum()
        return float(1.0 - 2.0 / (n_test * K * norm) * penalty)


def _check_k(K, n_train):
    if K <= 0:
        raise MetricError("K must be positive")
    if K >= n_train:
        raise MetricError(f"K={K} must be smaller than the {n_train} training points")


def qnx(pair: DistancePair, K: int) -> float:
    """Mean fraction of each test point's K embedding neighbors that are also
    among its K input-space neighbors."""
    _check_k(K, pair.n_train)
    return _LocalScorer(pair.true, pair.emb).qnx(K)


def trustworthiness(pair: DistancePair, K: int) -> float:
    """Trustworthiness of test-to-train neighborhoods (1-based true ranks)."""
    _check_k(K, pair.n_train)
    return _LocalScorer(pair.true, pair.emb).trust(K)


def neighborhood_sizes(n_train: int) -> list[int]:
    """K = 5, 15, 25, ... up to sqrt(n_train); just K = 5 when that is empty."""
    top = int(np.floor(np.sqrt(n_train)))
    ks = list(range(5, top + 1, 10))
    if not ks:
        warnings.warn(f"sqrt({n_train}) < 5; evaluating K=5 only", RuntimeWarning, stacklevel=2)
        ks = [5]
    return ks


def averaged_local_score(pair: DistancePair, kind: str, ks=None) -> float:
    ks = ks or neighborhood_sizes(pair.n_train)
    for K in ks:
        _check_k(K, pair.n_train)
    scorer = _LocalScorer(pair.true, pair.emb)
    fn = scorer.qnx if kind == "qnx" else scorer.trust
    return float(np.mean([fn(K) for K in ks]))


# ---------------------------------------------------------------------------
# global scores
# ---------------------------------------------------------------------------

def _pearson(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.size < 2:
        raise MetricError("need at least two entries")
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    if sa == 0 or sb == 0:
        raise MetricError("degenerate distances: zero variance")
    return float(np.dot(a, b) / (sa * sb))


def pearson_score(pair: DistancePair) -> float:
    return _pearson(pair.true, pair.emb)


def spearman_score(pair: DistancePair) -> float:
    """Pearson correlation of average ranks of the flattened matrices."""
    return _pearson(stats.rankdata(pair.true.ravel()), stats.rankdata(pair.emb.ravel()))


SCORES = ("qnx", "trust", "spear", "pearson")


def structure_score(kind: str, pair: DistancePair, ks=None) -> float:
    if kind in ("qnx", "trust"):
        return averaged_local_score(pair, kind, ks)
    if kind == "spear":
        return spearman_score(pair)
    if kind == "pearson":
        return pearson_score(pair)
    raise ValueError(f"unknown score {kind!r}")


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------

def feature_correlations(X_train) -> np.ndarray:
    """Pearson correlations between columns; constant columns correlate with
    nothing, and every diagonal entry is 1."""
    X = np.asarray(X_train, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc ** 2).sum(axis=0))
    ok = norms > 0
    Xs = np.zeros_like(Xc)
    Xs[:, ok] = Xc[:, ok] / norms[ok]
    C = np.clip(Xs.T @ Xs, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


class PerturbationSet:
    """Per-feature perturbed copies of a test matrix, built on demand.

    One column-wise shuffle ``shuffled`` of the test matrix is drawn up
    front. Copy ``i`` replaces cell ``(r, j)`` by ``shuffled[r, j]`` with
    probability ``|C[i, j]|``; its mask comes from a stream seeded by
    ``(seed, i)``.
    """

    def __init__(self, X_test, C, seed=0):
        self.X = np.asarray(X_test, dtype=np.float64)
        self.correlation = np.asarray(C, dtype=np.float64)
        D = self.X.shape[1]
        if self.correlation.shape != (D, D):
            raise ValueError("correlation matrix must be D x D")
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 0, 0])
        self.shuffled = np.column_stack(
            [rng.permutation(self.X[:, j]) for j in range(D)]
        ) if D else self.X.copy()

    def __len__(self):
        return self.X.shape[1]

    def mask(self, i: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1, int(i)])
        prob = np.abs(self.correlation[i])
        return rng.random(self.X.shape) < prob[None, :]

    def __getitem__(self, i: int) -> np.ndarray:
        return np.where(self.mask(i), self.shuffled, self.X)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def perturb_per_feature(X_test, C, seed=0) -> PerturbationSet:
    return PerturbationSet(X_test, C, seed)


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------

def knn_classifier(D, y_train, k: int, n_classes: int | None = None) -> np.ndarray:
    """Majority vote among the k nearest training points (rows of ``D``).

    Neighbor ties go to the lower training index; vote ties to the class
    with the smaller summed neighbor distance, then the lower class index.
    """
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    y_train = np.asarray(y_train, dtype=np.int64)
    n_train = D.shape[1]
    if k < 1:
        raise MetricError("k must be >= 1")
    if k > n_train:
        raise MetricError(f"k={k} exceeds the {n_train} training points")
    q = n_classes or int(y_train.max()) + 1
    if D.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    nbr = np.argsort(D, axis=1, kind="stable")[:, :k]
    nbr_cls = y_train[nbr]
    nbr_dist = np.take_along_axis(D, nbr, axis=1)
    rows = np.repeat(np.arange(D.shape[0]), k)
    votes = np.zeros((D.shape[0], q))
    dsum = np.zeros((D.shape[0], q))
    np.add.at(votes, (rows, nbr_cls.ravel()), 1.0)
    np.add.at(dsum, (rows, nbr_cls.ravel()), nbr_dist.ravel())
    tied = votes == votes.max(axis=1, keepdims=True)
    return np.argmin(np.where(tied, dsum, np.inf), axis=1)


class KNNClassifier:
    """Euclidean k-NN; ``k=None`` uses ceil(sqrt(N_train))."""

    def __init__(self, k: int | None = None):
        self.k = k

    def fit(self, X, y):
        self.X_ = np.asarray(X, dtype=np.float64)
        self.y_ = np.asarray(y, dtype=np.int64)
        self.n_classes_ = int(self.y_.max()) + 1
        self.k_ = self.k or int(np.ceil(np.sqrt(self.X_.shape[0])))
        return self

    def predict(self, X):
        return knn_classifier(cdist(np.atleast_2d(X), self.X_), self.y_, self.k_, self.n_classes_)

    def predict_proba(self, X):
        D = cdist(np.atleast_2d(X), self.X_)
        nbr = np.argsort(D, axis=1, kind="stable")[:, :self.k_]
        proba = np.zeros((D.shape[0], self.n_classes_))
        np.add.at(proba, (np.repeat(np.arange(D.shape[0]), self.k_), self.y_[nbr].ravel()), 1.0)
        return proba / self.k_


class MLPClassifier:
    """Two hidden ReLU layers of widths floor(2D/3) and floor(D/3), softmax
    cross-entropy, trained with AdamW on the shared layer machinery."""

    def __init__(self, epochs=100, batch_size=64, lr=1e-3, weight_decay=1e-5, seed=0):
        self.config = TrainConfig(lam=0.0, lr=lr, weight_decay=weight_decay,
                                  batch_size=batch_size, epochs=epochs, seed=seed,
                                  dtype="float64")

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        D = X.shape[1]
        self.n_classes_ = q = int(y.max()) + 1
        hidden = [max(2 * D // 3, 1), max(D // 3, 1)]
        self.acts_ = ["relu", "relu", "softmax"]
        cfg = self.config
        self.net_ = init_layers([D, *hidden, q], [cfg.seed, 0])
        onehot = np.eye(q)[y]
        rng = np.random.default_rng([cfg.seed, 1])
        bs = min(cfg.batch_size, X.shape[0])
        for _ in range(cfg.epochs):
            perm = rng.permutation(X.shape[0])
            for s in range(0, X.shape[0], bs):
                idx = perm[s:s + bs]
                outs, pre = stack_forward(self.net_, self.acts_, X[idx])
                g = (outs[-1] - onehot[idx]) / idx.size
                gW, gb = stack_backward(self.net_, self.acts_, outs, pre, g)
                adamw_step(self.net_, gW, gb, cfg.lr, cfg.weight_decay)
        return self

    def predict_proba(self, X):
        outs, _ = stack_forward(self.net_, self.acts_, np.atleast_2d(np.asarray(X, float)))
        return outs[-1]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class VotingClassifier:
    """Equal-weight majority vote; ties resolved by summed member
    probabilities, then the lower class index."""

    def __init__(self, members):
        self.members = list(members)

    def fit(self, X, y):
        for m in self.members:
            m.fit(X, y)
        self.n_classes_ = int(np.max(y)) + 1
        return self

    def predict(self, X):
        X = np.atleast_2d(X)
        votes = np.zeros((X.shape[0], self.n_classes_))
        proba = np.zeros_like(votes)
        for m in self.members:
            p = m.predict_proba(X)
            proba += p
            votes[np.arange(X.shape[0]), np.argmax(p, axis=1)] += 1
        tied = votes == votes.max(axis=1, keepdims=True)
        return np.argmax(np.where(tied, proba, -np.inf), axis=1)


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    return float(np.mean(y_true == np.asarray(y_pred))) if y_true.size else float("nan")


def knn_accuracy_curve(D_emb, y_train, y_test, n_train: int | None = None) -> float:
    """Mean k-NN accuracy over k = 5, 15, 25, ... up to sqrt(N_train)."""
    D_emb = np.atleast_2d(np.asarray(D_emb, dtype=np.float64))
    n_train = n_train or D_emb.shape[1]
    ks = [k for k in neighborhood_sizes(n_train) if k <= D_emb.shape[1]]
    return float(np.mean([accuracy(y_test, knn_classifier(D_emb, y_train, k)) for k in ks]))


# ---------------------------------------------------------------------------
# importances and alignment
# ---------------------------------------------------------------------------

def classification_importances(f_cls, X_test, y_test, perturbations) -> np.ndarray:
    """Accuracy drop of a fitted classifier on each perturbed test copy."""
    base = accuracy(y_test, f_cls.predict(X_test))
    return np.array([base - accuracy(y_test, f_cls.predict(Xp)) for Xp in perturbations])


def structural_importances(score, pair: DistancePair, perturbed_distances) -> np.ndarray:
    """Drop in structure score when the input-space distances are replaced by
    their perturbed versions; the embedding distances stay fixed.

    ``score`` is a name from :data:`SCORES` or a callable on a
    :class:`DistancePair`.
    """
    fn = score if callable(score) else (lambda p: structure_score(score, p))
    base = fn(pair)
    return np.array([base - fn(DistancePair(Dp, pair.emb)) for Dp in perturbed_distances])


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall tau-b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise MetricError("need two equal-length vectors of length >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise MetricError("undefined tau: constant vector")
    return float(stats.kendalltau(a, b, variant="b").statistic)


def sia(X_train, y_train, X_test, y_test, Z_train, Z_test, classifier=None, seed=0,
        scores=SCORES, return_details=False):
    """Structural importance alignment for each score in ``scores``.

    The classifier (default :class:`KNNClassifier`) is fit on the training
    rows; importances use one shared :class:`PerturbationSet` seeded by
    ``seed``. Returns ``{"<score>_sia": tau}``.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    clf = (classifier or KNNClassifier()).fit(X_train, y_train)
    C = feature_correlations(X_train)
    perts = perturb_per_feature(X_test, C, seed)
    C_imp = classification_importances(clf, X_test, y_test, perts)

    pair = DistancePair.from_points(X_test, X_train, Z_test, Z_train)
    ks = neighborhood_sizes(X_train.shape[0])
    base_local = _LocalScorer(pair.true, pair.emb)
    base = {"qnx": np.mean([base_local.qnx(K) for K in ks]),
            "trust": np.mean([base_local.trust(K) for K in ks])}
    if "spear" in scores:
        base["spear"] = spearman_score(pair)
    if "pearson" in scores:
        base["pearson"] = pearson_score(pair)

    S_imp = {s: np.zeros(len(perts)) for s in scores}
    for i, Xp in enumerate(perts):
        pp = DistancePair(cdist(Xp, X_train), pair.emb)
        if "qnx" in scores or "trust" in scores:
            # embedding order is unchanged; only input-space ranks move
            loc = _LocalScorer.__new__(_LocalScorer)
            loc.true_order, loc.true_rank = _ranks(pp.true)
            loc.emb_order = base_local.emb_order
        for s in scores:
            if s == "qnx":
                val = np.mean([loc.qnx(K) for K in ks])
            elif s == "trust":
                val = np.mean([loc.trust(K) for K in ks])
            else:
                val = structure_score(s, pp)
            S_imp[s][i] = base[s] - val

    out = {f"{s}_sia": kendall_tau(C_imp, S_imp[s]) for s in scores}
    if return_details:
        return out, {"classification": C_imp, "structural": S_imp}
    return out
