"""End-to-end RF-AE: forest, proximities, prototypes, target embedding and
the regularized autoencoder, with out-of-sample transform."""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import forest as rf
from .dataset import Normalizer, apply_normalizer, fit_normalizer
from .kernel_extension import (LinearExtension, apply as apply_extension, fit_least_squares,
                               fit_linear_reconstruction, fit_nystrom)
from .network import LossHistory, MlpSpec, NetworkWeights, TrainConfig, embed_oos, train
from .prototypes import MedoidSet, build_dissimilarity, kmedoids_classwise, resolve_n_prototypes
from .target import DiffusionParams, TargetEmbedding, diffusion_embed

log = logging.getLogger(__name__)

EXTENSIONS = ("rfae", "least_squares", "nystrom", "linear_reconstruction")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.__cause__ = exc


def stage_seed(master: int, label: str) -> int:
    """Stable per-stage seed derived from the master seed and a label."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RFAEConfig:
    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 1
    max_depth: int | None = None
    n_prototypes: float = 0.1  # fraction of N_train when < 1
    lam: float = 0.01
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 512
    epochs: int = 200
    hidden: tuple[int, ...] = (800, 400, 100)
    latent_dim: int = 2
    clamp_hidden: bool = True
    diffusion_t: int = 16
    diffusion_eps: float = 1e-12
    mds_iters: int = 500
    mds_tol: float = 1e-6
    standardize_target: bool = True
    dtype: str = "float32"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass
class RFAE:
    """Supervised out-of-sample embedding with random-forest autoencoders.

    >>> model = RFAE(RFAEConfig(n_trees=100, epochs=50)).fit(X_train, y_train)
    >>> Z_test = model.transform(X_test)

    Embeddings live in the units of the (standardized) target embedding.
    """

    config: RFAEConfig = field(default_factory=RFAEConfig)

    # fitted state
    normalizer: Normalizer | None = None
    forest: rf.Forest | None = None
    x_train: np.ndarray | None = None
    y_train: np.ndarray | None = None
    class_names: list[str] | None = None
    medoids: np.ndarray | None = None
    p_star: np.ndarray | None = None
    target: np.ndarray | None = None
    target_center: np.ndarray | None = None
    target_scale: float = 1.0
    spec: MlpSpec | None = None
    weights: NetworkWeights | None = None
    history: LossHistory | None = None
    extensions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)

    def _stage(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:  # re-raised with the stage name attached
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - t0
        log.info("stage %-12s %.2fs", name, self.timings[name])
        return out

    def fit(self, X, y, target=None, class_names=None):
        """Fit every stage on raw training rows.

        ``target`` optionally supplies the geometric targets (array or
        :class:`TargetEmbedding` with one row per training row); otherwise
        they come from the built-in diffusion embedding.
        """
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of rows")

        self.normalizer = fit_normalizer(X)
        Xn = apply_normalizer(self.normalizer, X)
        self.x_train, self.y_train = Xn, y
        n_cls = int(y.max()) + 1
        self.class_names = ([str(c) for c in class_names] if class_names is not None
                            else [str(c) for c in range(n_cls)])
        n = Xn.shape[0]

        params = rf.ForestParams(cfg.n_trees, cfg.mtry, cfg.min_leaf, cfg.max_depth,
                                 stage_seed(cfg.seed, "forest"), cfg.n_jobs)
        self.forest = self._stage("forest", rf.fit_forest, Xn, y, params)
        P = self._stage("proximities", rf.rfgap_matrix, self.forest)
        p_prime = rf.symmetrize(P)
        p_tilde = self._stage("normalize", rf.row_normalize, p_prime)
        self.artifacts.update(proximities=p_tilde)

        n_star = resolve_n_prototypes(cfg.n_prototypes, n)
        d = self._stage("dissimilarity", build_dissimilarity, p_prime)
        ms: MedoidSet = self._stage("prototypes", kmedoids_classwise, d, y, n_star)
        self.medoids = ms.indices
        self.p_star = rf.prototype_probabilities(p_prime, self.medoids)

        if target is None:
            dp = DiffusionParams(cfg.diffusion_t, cfg.diffusion_eps, cfg.latent_dim,
                                 cfg.mds_iters, cfg.mds_tol, stage_seed(cfg.seed, "mds"))
            target = self._stage("target", diffusion_embed, p_tilde, dp)
        coords = np.asarray(getattr(target, "coords", target), dtype=np.float64)
        if coords.shape[0] != n:
            raise StageError("target", ValueError(
                f"row-count mismatch: target has {coords.shape[0]} rows, expected {n}"))
        if coords.shape[1] != cfg.latent_dim:
            raise StageError("target", ValueError(
                f"target has {coords.shape[1]} columns, latent_dim is {cfg.latent_dim}"))
        self.artifacts.update(raw_target=coords)
        if cfg.standardize_target:
            self.target_center = coords.mean(axis=0)
            scale = float(np.sqrt(np.mean(np.sum((coords - self.target_center) ** 2, axis=1))
                                  / cfg.latent_dim))
            self.target_scale = scale if scale > 0 else 1.0
        else:
            self.target_center = np.zeros(cfg.latent_dim)
            self.target_scale = 1.0
        self.target = (coords - self.target_center) / self.target_scale

        self.spec = MlpSpec(len(self.medoids), cfg.hidden, cfg.latent_dim, cfg.clamp_hidden)
        tc = TrainConfig(cfg.lam, cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.epochs,
                         stage_seed(cfg.seed, "network"), dtype=cfg.dtype)
        self.weights, self.history = self._stage("network", train, self.p_star, self.target,
                                                 self.spec, tc)

        self.extensions = self._stage("extensions", self._fit_extensions, p_tilde)
        return self

    def _fit_extensions(self, p_tilde) -> dict[str, LinearExtension]:
        exts = {"least_squares": fit_least_squares(p_tilde, self.target),
                "linear_reconstruction": fit_linear_reconstruction(self.target)}
        try:
            exts["nystrom"] = fit_nystrom(rf.symmetrize(p_tilde), self.config.latent_dim)
        except ValueError as exc:
            log.warning("nystrom extension unavailable: %s", exc)
        return exts

    # ------------------------------------------------------------------
    def _check_fitted(self):
        if self.weights is None:
            raise RuntimeError("model is not fitted")

    def normalize(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.x_train.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} features, model expects "
                             f"{self.x_train.shape[1]}")
        return apply_normalizer(self.normalizer, X)

    def proximities(self, X) -> np.ndarray:
        """Out-of-sample RF-GAP rows of new (raw) points to all training rows."""
        return rf.rfgap_oos(self.forest, self.normalize(X))

    def prototype_inputs(self, X) -> np.ndarray:
        """Prototype transition probabilities of new points (network inputs).

        Points with no proximity mass on any prototype get a uniform
        distribution over the prototypes of their predicted class.
        """
        Xn = self.normalize(X)
        prox = rf.rfgap_oos(self.forest, Xn)
        proto_cls = self.y_train[self.medoids]

        def fallback(r):
            c = self.forest.predict(Xn[r:r + 1])[0]
            v = (proto_cls == c).astype(np.float64)
            return v / v.sum() if v.sum() else np.full(v.size, 1.0 / v.size)

        return rf.prototype_probabilities(prox, self.medoids, fallback=fallback)

    def transform(self, X, extension: str = "rfae") -> np.ndarray:
        """Embed unseen points; no labels involved."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if extension != "rfae" and extension not in self.extensions:
            raise ValueError(f"unknown or unavailable extension {extension!r}")
        if X.ndim == 2 and X.shape[0] == 0:
            return np.zeros((0, self.config.latent_dim))
        if extension == "rfae":
            return embed_oos(self.weights, self.spec, self.prototype_inputs(X))
        return apply_extension(self.extensions[extension], self.proximities(X))

    def train_embedding(self, extension: str = "rfae") -> np.ndarray:
        """Embedding of the training rows themselves."""
        self._check_fitted()
        if extension == "rfae":
            return embed_oos(self.weights, self.spec, self.p_star)
        if extension == "nystrom":
            return self.extensions["nystrom"].eigenvectors.copy()
        return self.target.copy()

    def config_dict(self) -> dict:
        d = asdict(self.config)
        d["hidden"] = list(d["hidden"])
        return d
