"""Geometric target coordinates for the bottleneck: loaded from a CSV file or
computed with a diffusion-potential embedding of the proximity operator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform


class TargetError(ValueError):
    pass


@dataclass
class TargetEmbedding:
    coords: np.ndarray
    source: str = "diffusion"  # or "file"
    stress_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2:
            raise TargetError("target coordinates must be a 2D matrix")
        if not np.all(np.isfinite(self.coords)):
            raise TargetError("non-finite entry in target embedding")

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def save_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{k + 1}" for k in range(self.coords.shape[1])])
            for row in self.coords:
                w.writerow([repr(float(v)) for v in row])


@dataclass
class DiffusionParams:
    t: int = 16
    eps: float = 1e-12
    d: int = 2
    mds_iters: int = 500
    mds_tol: float = 1e-6
    seed: int = 0


def load_embedding(path, n_expected: int | None = None) -> TargetEmbedding:
    """Read an ``N x d`` coordinate CSV. A non-numeric first row is a header."""
    path = Path(path)
    if not path.is_file():
        raise TargetError(f"missing file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _numeric(rows[0]):
        rows = rows[1:]
    try:
        coords = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise TargetError(f"non-numeric entry in {path}: {exc}") from None
    if coords.ndim != 2 or coords.size == 0:
        raise TargetError("embedding file must hold a non-empty rectangular table")
    if n_expected is not None and coords.shape[0] != n_expected:
        raise TargetError(f"row-count mismatch: {coords.shape[0]} rows, "
                          f"expected {n_expected}")
    return TargetEmbedding(coords, source="file")


def _numeric(row) -> bool:
    try:
        [float(v) for v in row]
    except ValueError:
        return False
    return True


def diffusion_potential(P, t: int = 16, eps: float = 1e-12) -> np.ndarray:
    """-log(P^t + eps) for a row-stochastic operator ``P``."""
    if t < 1:
        raise TargetError("diffusion time t must be >= 1")
    if not eps > 0:
        raise TargetError("eps must be positive")
    Pt = np.linalg.matrix_power(np.asarray(P, dtype=np.float64), int(t))
    return -np.log(np.clip(Pt, 0.0, None) + eps)


def classical_mds(D, d: int = 2) -> np.ndarray:
    """Torgerson scaling of a distance matrix."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    w, V = np.linalg.eigh(B)
    top = np.argsort(w)[::-1][:d]
    X = V[:, top] * np.sqrt(np.clip(w[top], 0.0, None))
    # fix eigenvector signs so output is reproducible
    signs = np.sign(X[np.argmax(np.abs(X), axis=0), np.arange(X.shape[1])])
    return X * np.where(signs == 0, 1.0, signs)


def stress(D, X) -> float:
    """Raw stress: sum over pairs i < j of (D_ij - ||x_i - x_j||)^2."""
    return float(np.sum((squareform(np.asarray(D), checks=False) - pdist(X)) ** 2))


def smacof(D, X0, max_iter: int = 500, tol: float = 1e-6):
    """Metric MDS by stress majorization (Guttman transform, unit weights).

    Returns the final configuration and the stress after every iteration,
    starting with the stress of ``X0``.
    """
    D = np.asarray(D, dtype=np.float64)
    X = np.array(X0, dtype=np.float64)
    n = D.shape[0]
    history = [stress(D, X)]
    for _ in range(max_iter):
        E = squareform(pdist(X))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(E > 0, D / E, 0.0)
        B = -ratio
        B[np.diag_indices(n)] = ratio.sum(axis=1)
        X = B @ X / n
        history.append(stress(D, X))
        prev = history[-2]
        if prev == 0 or (prev - history[-1]) / prev < tol:
            break
    return X, history


def diffusion_embed(p_tilde, params: DiffusionParams | None = None, **overrides) -> TargetEmbedding:
    """Embed a row-stochastic operator through diffusion potentials.

    Powers the operator ``t`` times, takes ``-log(P^t + eps)``, measures
    Euclidean distances between potential rows and lays them out in ``d``
    dimensions with SMACOF started from classical MDS.
    """
    params = params or DiffusionParams()
    for k, v in overrides.items():
        setattr(params, k, v)
    P = np.asarray(p_tilde, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise TargetError("operator must be square")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-8):
        raise TargetError("operator must be row-stochastic")
    U = diffusion_potential(P, params.t, params.eps)
    D = squareform(pdist(U))
    X0 = classical_mds(D, params.d)
    scale = D.max() if D.size else 0.0
    flat = X0.std(axis=0) <= 1e-12 * max(scale, 1.0)
    if flat.any() and scale > 0:
        # a collapsed axis stays collapsed under the Guttman transform
        rng = np.random.default_rng(params.seed)
        X0[:, flat] = rng.normal(0.0, 1e-3 * scale, size=(X0.shape[0], int(flat.sum())))
    if params.mds_iters > 0:
        X, hist = smacof(D, X0, params.mds_iters, params.mds_tol)
    else:
        X, hist = X0, [stress(D, X0)]
    return TargetEmbedding(X, source="diffusion", stress_history=hist)
