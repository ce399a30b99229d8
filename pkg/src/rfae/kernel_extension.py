"""Linear kernel out-of-sample extensions ``k -> k @ W``: least squares,
Nystrom and linear reconstruction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

KINDS = ("least_squares", "nystrom", "linear_reconstruction")


@dataclass
class LinearExtension:
    W: np.ndarray
    kind: str

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown extension kind {self.kind!r}")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("non-finite projection matrix")

    def __call__(self, k):
        return apply(self, k)


def default_ridge(K) -> float:
    K = np.asarray(K, dtype=np.float64)
    return 1e-8 * float(np.trace(K)) / K.shape[0]


def fit_least_squares(K, Y, ridge: float | None = None) -> LinearExtension:
    """``W = pinv(K + ridge * I) @ Y``.

    ``ridge=None`` picks ``1e-8 * trace(K) / N``. With ``ridge=0`` the
    minimum-norm least-squares solution is computed through the SVD.
    """
    K = np.asarray(K, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be square")
    if Y.shape[0] != K.shape[0]:
        raise ValueError("Y rows must align with K")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite inputs")
    if ridge is None:
        ridge = default_ridge(K)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge == 0:
        W = np.linalg.lstsq(K, Y, rcond=None)[0]
    else:
        A = K + ridge * np.eye(K.shape[0])
        try:
            W = np.linalg.solve(A, Y)
        except np.linalg.LinAlgError:
            W = np.linalg.lstsq(A, Y, rcond=None)[0]
    return LinearExtension(W, "least_squares")


def fit_nystrom(K, d: int = 2, which: str = "largest") -> LinearExtension:
    """``W = U diag(1 / lambda)`` over ``d`` eigenpairs of symmetric ``K``.

    ``which`` selects the largest- or smallest-magnitude eigenvalues.
    """
    if which not in ("largest", "smallest"):
        raise ValueError("which must be 'largest' or 'smallest'")
    K = np.asarray(K, dtype=np.float64)
    if not np.allclose(K, K.T, rtol=0, atol=1e-12):
        warnings.warn("non-symmetric kernel symmetrized as (K + K^T) / 2", RuntimeWarning,
                      stacklevel=2)
        K = (K + K.T) / 2.0
    w, U = np.linalg.eigh(K)
    order = np.argsort(np.abs(w), kind="stable")
    order = order[::-1][:d] if which == "largest" else order[:d]
    lam = w[order]
    if np.any(np.abs(lam) < 1e-12):
        raise ValueError("near-singular spectrum")
    U = U[:, order]
    # deterministic eigenvector sign: largest-magnitude entry positive
    U = U * np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    ext = LinearExtension(U / lam, "nystrom")
    ext.eigenvalues = lam
    ext.eigenvectors = U
    return ext


def fit_linear_reconstruction(Y) -> LinearExtension:
    """``W = Y``: a new point lands on the similarity-weighted average of
    the training embeddings."""
    return LinearExtension(np.array(Y, dtype=np.float64), "linear_reconstruction")


def apply(ext: LinearExtension, k) -> np.ndarray:
    """``k @ W`` for one similarity vector or a matrix of them."""
    k = np.asarray(k, dtype=np.float64)
    if k.shape[-1] != ext.W.shape[0]:
        raise ValueError(f"length mismatch: {k.shape[-1]} != {ext.W.shape[0]}")
    return k @ ext.W
