"""Class-wise k-medoids prototype selection on RF-GAP dissimilarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MedoidSet:
    indices: np.ndarray  # sorted training indices
    per_class: dict[int, np.ndarray]

    def __len__(self):
        return int(self.indices.size)


def build_dissimilarity(p_prime) -> np.ndarray:
    """Max-normalized complement of symmetrized proximities, scaled to [0, 1]."""
    p_prime = np.asarray(p_prime, dtype=np.float64)
    M = p_prime.max()
    if not M > 0:
        raise ValueError("all-zero proximity matrix")
    return (M - p_prime) / M


def total_deviation(d, medoids) -> float:
    """Sum over points of the dissimilarity to their nearest medoid."""
    d = np.asarray(d)
    return float(d[:, list(medoids)].min(axis=1).sum())


def pam(d, k: int, max_iter: int = 1000) -> np.ndarray:
    """Partitioning Around Medoids on a square dissimilarity matrix.

    Greedy BUILD initialization, then best-improvement SWAP until no single
    (medoid, non-medoid) exchange lowers the total deviation. Ties are
    broken toward lower indices. Returns local medoid positions.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if k == n:
        return np.arange(n)

    # BUILD
    medoids = [int(np.argmin(d.sum(axis=0)))]
    nearest = d[:, medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(nearest[:, None] - d, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        c = int(np.argmax(gain))
        medoids.append(c)
        nearest = np.minimum(nearest, d[:, c])

    medoids = np.array(medoids)
    cost = total_deviation(d, medoids)
    for _ in range(max_iter):
        dm = d[:, medoids]  # (n, k)
        order = np.argsort(dm, axis=1, kind="stable")
        d1 = np.take_along_axis(dm, order[:, :1], axis=1)[:, 0]
        d2 = (np.take_along_axis(dm, order[:, 1:2], axis=1)[:, 0]
              if k > 1 else np.full(n, np.inf))
        near = order[:, 0]
        is_med = np.zeros(n, dtype=bool)
        is_med[medoids] = True
        cand = np.flatnonzero(~is_med)
        best_cost, best = cost, None
        for m in range(k):
            # distance to the closest remaining medoid once m leaves
            base = np.where(near == m, d2, d1)
            costs = np.minimum(d[cand], base[None, :]).sum(axis=1)
            o = int(np.argmin(costs))
            if costs[o] < best_cost - 1e-12 * max(1.0, abs(best_cost)):
                best_cost, best = float(costs[o]), (m, int(cand[o]))
        if best is None:
            break
        medoids[best[0]] = best[1]
        cost = total_deviation(d, medoids)
    return np.sort(medoids)


def prototypes_per_class(class_sizes, n_prototypes: int) -> np.ndarray:
    """floor(N*/q) per class, remainder to the largest classes, clamped to
    class sizes with any deficit moved to classes that still have room."""
    sizes = np.asarray(class_sizes, dtype=np.int64)
    q = sizes.size
    if n_prototypes < q:
        raise ValueError("need at least one prototype per class")
    if n_prototypes > sizes.sum():
        raise ValueError("more prototypes than training points")
    k = np.full(q, n_prototypes // q)
    by_size = np.argsort(-sizes, kind="stable")
    k[by_size[: n_prototypes % q]] += 1
    k = np.minimum(k, sizes)
    deficit = n_prototypes - k.sum()
    while deficit > 0:
        for c in by_size:
            if deficit and k[c] < sizes[c]:
                k[c] += 1
                deficit -= 1
    return k


def kmedoids_classwise(d, labels, n_prototypes: int, seed=None) -> MedoidSet:
    """Run PAM separately inside every class of the training set.

    BUILD initialization is deterministic, so ``seed`` has no effect; it is
    accepted so callers can pass their stage seed uniformly.
    """
    d = np.asarray(d, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    q = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=q)
    ks = prototypes_per_class(sizes, int(n_prototypes))
    per_class = {}
    for c in range(q):
        members = np.flatnonzero(labels == c)
        local = pam(d[np.ix_(members, members)], int(ks[c]))
        per_class[c] = members[local]
    indices = np.sort(np.concatenate([per_class[c] for c in range(q)]))
    return MedoidSet(indices, per_class)


def resolve_n_prototypes(value, n_train: int) -> int:
    """An absolute count, or a fraction of the training size when ``value < 1``."""
    value = float(value)
    if value <= 0:
        raise ValueError("n_prototypes must be positive")
    if value < 1:
        return max(int(round(value * n_train)), 1)
    return int(value)
