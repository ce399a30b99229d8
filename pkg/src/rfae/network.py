"""The RF-AE network in plain numpy.

Encoder and decoder are one stack of dense layers: ELU on hidden layers,
identity at the bottleneck, softmax at the output. Training minimizes
``lambda * JSD(p, p_hat) + (1 - lambda) * ||z - z_G||^2`` averaged over the
batch, with AdamW.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# specs and parameters
# ---------------------------------------------------------------------------

@dataclass
class MlpSpec:
    """Layer layout of the autoencoder.

    Hidden widths are clamped to ``4 * input_dim`` when ``clamp_hidden`` is
    set, which keeps toy problems small. The decoder mirrors the encoder.
    """

    input_dim: int
    encoder_hidden: tuple[int, ...] = (800, 400, 100)
    latent_dim: int = 2
    clamp_hidden: bool = True

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ValueError("input_dim and latent_dim must be positive")

    @property
    def hidden(self) -> tuple[int, ...]:
        if not self.clamp_hidden:
            return self.encoder_hidden
        return tuple(min(h, 4 * self.input_dim) for h in self.encoder_hidden)

    @property
    def decoder_hidden(self) -> tuple[int, ...]:
        return self.hidden[::-1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.latent_dim, *self.decoder_hidden,
                self.input_dim]

    @property
    def activations(self) -> list[str]:
        n_enc = len(self.hidden)
        return ["elu"] * n_enc + ["identity"] + ["elu"] * n_enc + ["softmax"]

    @property
    def bottleneck(self) -> int:
        """Index of the layer whose output is the latent code."""
        return len(self.hidden)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "encoder_hidden": list(self.encoder_hidden),
                "latent_dim": self.latent_dim, "clamp_hidden": self.clamp_hidden}


@dataclass
class TrainConfig:
    lam: float = 0.01
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 512
    epochs: int = 200
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class NetworkWeights:
    """Per-layer ``(out, in)`` weights and biases plus AdamW state."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m: list[np.ndarray] = field(default_factory=list, repr=False)
    v: list[np.ndarray] = field(default_factory=list, repr=False)
    step: int = 0

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              [a.copy() for a in self.m], [a.copy() for a in self.v], self.step)

    def astype(self, dtype) -> "NetworkWeights":
        cast = lambda xs: [np.asarray(a, dtype=dtype) for a in xs]  # noqa: E731
        return NetworkWeights(cast(self.weights), cast(self.biases), cast(self.m),
                              cast(self.v), self.step)


def init_layers(sizes, seed, dtype=np.float64) -> NetworkWeights:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return NetworkWeights(Ws, bs)


def init_weights(spec: MlpSpec, seed, dtype=np.float64) -> NetworkWeights:
    return init_layers(spec.sizes, seed, dtype)


# ---------------------------------------------------------------------------
# generic dense stack
# ---------------------------------------------------------------------------

def _activate(a, kind):
    if kind == "elu":
        return np.where(a > 0, a, np.expm1(np.minimum(a, 0)))
    if kind == "relu":
        return np.maximum(a, 0)
    if kind == "identity":
        return a
    if kind == "softmax":
        e = np.exp(a - a.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def stack_forward(net: NetworkWeights, activations, x):
    """Run ``x`` through the stack; returns the list of layer outputs
    (index 0 is the input) and the list of pre-activations."""
    outs, pre = [x], []
    h = x
    for W, b, kind in zip(net.weights, net.biases, activations):
        a = h @ W.T + b
        h = _activate(a, kind)
        pre.append(a)
        outs.append(h)
    return outs, pre


def stack_backward(net: NetworkWeights, activations, outs, pre, grad_pre_last, extra=None):
    """Backpropagate from the gradient w.r.t. the last pre-activation.

    ``extra`` maps a layer index to an additional gradient on that layer's
    output (e.g. the geometric loss on the bottleneck).
    """
    extra = extra or {}
    L = len(net.weights)
    gW, gb = [None] * L, [None] * L
    g_pre = grad_pre_last
    for k in range(L - 1, -1, -1):
        gW[k] = g_pre.T @ outs[k]
        gb[k] = g_pre.sum(axis=0)
        if k == 0:
            break
        g_out = g_pre @ net.weights[k]
        if k - 1 in extra:
            g_out = g_out + extra[k - 1]
        kind = activations[k - 1]
        if kind == "elu":
            g_pre = g_out * np.where(pre[k - 1] > 0, 1.0, np.exp(np.minimum(pre[k - 1], 0)))
        elif kind == "relu":
            g_pre = g_out * (pre[k - 1] > 0)
        elif kind == "identity":
            g_pre = g_out
        else:
            raise ValueError(f"cannot backpropagate through hidden {kind!r}")
    return gW, gb


def adamw_step(net: NetworkWeights, gW, gb, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
    """In-place AdamW update with decoupled weight decay on every parameter."""
    params = net.params()
    grads = [*gW, *gb]
    if not net.m:
        net.m = [np.zeros_like(p) for p in params]
        net.v = [np.zeros_like(p) for p in params]
    net.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** net.step
    c2 = 1.0 - b2 ** net.step
    for p, g, m, v in zip(params, grads, net.m, net.v):
        p *= 1.0 - lr * weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _xlogy_half(a, s):
    """Elementwise a * log(2a / s) with 0 * log 0 = 0, where s = a + b.

    Working with ``s`` rather than ``(a + b) / 2`` keeps denormal entries
    from rounding the mixture to zero; the ratio is exactly 1 when a == b.
    """
    a, s = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(s, dtype=np.float64))
    out = np.zeros(a.shape)
    nz = a > 0
    out[nz] = a[nz] * np.log(2.0 * a[nz] / s[nz])
    return out


def jsd(p, q, axis=-1):
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    s = p + q
    return np.maximum(0.5 * (_xlogy_half(p, s) + _xlogy_half(q, s)).sum(axis=axis), 0.0)


def loss_terms(batch_p, batch_zG, latent, recon):
    """Per-row JSD reconstruction and squared-distance geometric terms."""
    recon_term = jsd(batch_p, recon, axis=1)
    geo_term = np.sum((np.asarray(latent, dtype=np.float64) - batch_zG) ** 2, axis=1)
    return recon_term, geo_term


def total_loss(batch_p, batch_zG, latent, recon, lam) -> float:
    """Batch mean of ``lam * JSD + (1 - lam) * ||z - z_G||^2``.

    The endpoints drop the unused term entirely, so ``lam = 1`` never
    touches ``batch_zG`` and ``lam = 0`` never touches the reconstruction.
    """
    if lam == 1.0:
        return float(np.mean(jsd(batch_p, recon, axis=1)))
    geo = np.sum((np.asarray(latent, dtype=np.float64) - batch_zG) ** 2, axis=1)
    if lam == 0.0:
        return float(np.mean(geo))
    return float(np.mean(lam * jsd(batch_p, recon, axis=1) + (1.0 - lam) * geo))


# ---------------------------------------------------------------------------
# autoencoder forward / backward
# ---------------------------------------------------------------------------

def forward(net: NetworkWeights, spec: MlpSpec, batch):
    """Returns ``{"latent", "recon", "caches"}`` for a batch of probability rows."""
    batch = np.asarray(batch, dtype=net.weights[0].dtype)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ValueError(f"expected (B, {spec.input_dim}) input, got {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("non-finite input")
    outs, pre = stack_forward(net, spec.activations, batch)
    return {"latent": outs[spec.bottleneck + 1], "recon": outs[-1], "caches": (outs, pre)}


def backward(net: NetworkWeights, spec: MlpSpec, out, batch_p, batch_zG, lam):
    """Analytic gradients of :func:`total_loss` for every weight and bias.

    For softmax output ``q`` the JSD gradient w.r.t. ``q_k`` is
    ``0.5 * log(q_k / m_k)``; it is pushed through the softmax Jacobian.
    """
    outs, pre = out["caches"]
    B = outs[0].shape[0]
    q = outs[-1]
    dtype = q.dtype
    if lam > 0:
        p = np.asarray(batch_p, dtype=dtype)
        pos = q > 0
        qs = np.where(pos, q, 1)
        # q * g_q with log(q / m) = log 2 + log q - log(p + q); the q -> 0
        # limit is 0, which covers underflowed softmax entries
        qg = np.where(pos, 0.5 * q * (np.log(2) + np.log(qs) - np.log(np.where(pos, p + q, 1))), 0)
        g_last = (qg - q * np.sum(qg, axis=1, keepdims=True)) * (lam / B)
    else:
        g_last = np.zeros_like(q)
    extra = {}
    if lam < 1:
        z = outs[spec.bottleneck + 1]
        extra[spec.bottleneck] = (2.0 * (1.0 - lam) / B) * (z - np.asarray(batch_zG, dtype=dtype))
    return stack_backward(net, spec.activations, outs, pre, g_last, extra)


def embed_oos(net: NetworkWeights, spec: MlpSpec, p_star) -> np.ndarray:
    """Encoder-only pass: prototype probability rows to latent coordinates."""
    p_star = np.asarray(p_star, dtype=net.weights[0].dtype)
    if p_star.ndim == 1:
        p_star = p_star[None, :]
    if p_star.shape[0] == 0:
        return np.zeros((0, spec.latent_dim))
    if p_star.shape[1] != spec.input_dim:
        raise ValueError(f"dimension mismatch: {p_star.shape[1]} != {spec.input_dim}")
    n_enc = spec.bottleneck + 1
    enc = NetworkWeights(net.weights[:n_enc], net.biases[:n_enc])
    outs, _ = stack_forward(enc, spec.activations[:n_enc], p_star)
    return np.asarray(outs[-1], dtype=np.float64)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class LossHistory:
    recon: list[float] = field(default_factory=list)
    geo: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def rows(self):
        for k, (r, g, t) in enumerate(zip(self.recon, self.geo, self.total), start=1):
            yield k, r, g, t

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,recon_loss,geo_loss,total\n")
            for k, r, g, t in self.rows():
                fh.write(f"{k},{r!r},{g!r},{t!r}\n")


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def train(p_star, zG, spec: MlpSpec, config: TrainConfig, net: NetworkWeights | None = None):
    """Fit the autoencoder for ``config.epochs`` epochs (no early stopping).

    Returns ``(weights, LossHistory)``; the history holds per-epoch sample
    means of the reconstruction, geometric and total losses, measured on
    each batch before its update.
    """
    dtype = np.dtype(config.dtype)
    X = np.asarray(p_star, dtype=dtype)
    Z = np.asarray(getattr(zG, "coords", zG), dtype=dtype)
    if X.shape[0] != Z.shape[0]:
        raise ValueError("target rows must align with input rows")
    if Z.shape[1] != spec.latent_dim:
        raise ValueError("target dimension differs from latent_dim")
    net = net.astype(dtype) if net is not None else init_weights(spec, [config.seed, 0], dtype)
    history = LossHistory()
    n = X.shape[0]
    bs = min(config.batch_size, n)
    rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        r_sum = g_sum = 0.0
        for idx in _batches(n, bs, rng):
            out = forward(net, spec, X[idx])
            r, g = loss_terms(X[idx], Z[idx], out["latent"], out["recon"])
            r_sum += float(r.sum())
            g_sum += float(g.sum())
            gW, gb = backward(net, spec, out, X[idx], Z[idx], config.lam)
            adamw_step(net, gW, gb, config.lr, config.weight_decay, config.betas,
                       config.adam_eps)
        rec, geo = r_sum / n, g_sum / n
        tot = config.lam * rec + (1 - config.lam) * geo
        if not np.isfinite(tot) or not all(np.all(np.isfinite(w)) for w in net.weights):
            raise TrainingError(f"non-finite loss at epoch {epoch + 1} "
                                f"(recon={rec}, geo={geo}); try a smaller learning rate")
        history.recon.append(rec)
        history.geo.append(geo)
        history.total.append(tot)
    return net, history


def train_regressor(X, Y, hidden=(800, 400, 100), config: TrainConfig | None = None,
                    activation="elu"):
    """Feature-input MLP regressing ``X`` onto ``Y`` with squared error.

    Same layer machinery and optimizer as the autoencoder encoder; used as
    the raw-feature comparator for kernel-input encoders. Returns
    ``(weights, activations, per-epoch mean squared distance)``.
    """
    config = config or TrainConfig(lam=0.0)
    dtype = np.dtype(config.dtype)
    X = np.asarray(X, dtype=dtype)
    Y = np.asarray(Y, dtype=dtype)
    sizes = [X.shape[1], *hidden, Y.shape[1]]
    acts = [activation] * len(hidden) + ["identity"]
    net = init_layers(sizes, [config.seed, 0], dtype)
    n = X.shape[0]
    bs = min(config.batch_size, n)
    rng = np.random.default_rng([config.seed, 1])
    losses = []
    for _ in range(config.epochs):
        total = 0.0
        for idx in _batches(n, bs, rng):
            outs, pre = stack_forward(net, acts, X[idx])
            diff = outs[-1] - Y[idx]
            total += float(np.sum(diff.astype(np.float64) ** 2))
            gW, gb = stack_backward(net, acts, outs, pre, (2.0 / idx.size) * diff)
            adamw_step(net, gW, gb, config.lr, config.weight_decay, config.betas,
                       config.adam_eps)
        losses.append(total / n)
        if not np.isfinite(losses[-1]):
            raise TrainingError("non-finite regression loss")
    return net, acts, losses


def predict_stack(net: NetworkWeights, activations, X) -> np.ndarray:
    outs, _ = stack_forward(net, activations, np.asarray(X, dtype=net.weights[0].dtype))
    return np.asarray(outs[-1], dtype=np.float64)
