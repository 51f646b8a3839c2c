"""Small feed-forward ReLU classifiers trained to MAP estimates.

Networks are plain numpy: ReLU hidden layers followed by a linear head.  The
head never carries an explicit bias; when biases are enabled a constant-1
feature is appended to the penultimate activation instead (the usual bias
trick), so the logits are always exactly ``head @ features(x)``.  That keeps
the head linear in its weight matrix, which the Laplace machinery relies on.

Training is single-threaded, full-precision, and deterministic given the
seeds in the configs.  All randomness flows through numpy's PCG64 generator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class ConfigMismatch(Exception):
    """Data and network configuration disagree."""


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of a classifier: D -> hidden_dims -> C.

    ``use_bias=False`` drops every bias in the network, which makes it
    positively homogeneous in its input; the far-away confidence checks
    require that mode.  ``hidden_dims`` may be empty (linear model on raw
    inputs).
    """

    input_dim: int
    hidden_dims: tuple[int, ...] = (32, 32)
    num_classes: int = 2
    use_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be >= 1")

    @property
    def feature_dim(self) -> int:
        """Width P of the feature vector feeding the linear head."""
        base = self.hidden_dims[-1] if self.hidden_dims else self.input_dim
        return base + 1 if self.use_bias else base


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    optimizer: str = "adam"  # "adam" or "sgd" (Nesterov momentum 0.9)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels in [0, num_classes)."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"bad dataset shapes X={X.shape} y={y.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset must be nonempty")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels out of range")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C")  # private copy
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mlp:
    """Trained (or freshly initialized) network; immutable after construction.

    ``hidden_weights[l]`` has shape (out, in); ``hidden_biases`` is a matching
    list (absent entirely in no-bias mode).  ``head`` has shape (C, P) with P
    from the bias trick.
    """

    config: MlpConfig
    hidden_weights: tuple[np.ndarray, ...]
    hidden_biases: tuple[np.ndarray, ...] | None
    head: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "hidden_weights", tuple(_freeze(w) for w in self.hidden_weights)
        )
        if self.hidden_biases is not None:
            object.__setattr__(
                self, "hidden_biases", tuple(_freeze(b) for b in self.hidden_biases)
            )
        head = _freeze(self.head)
        if head.shape != (self.config.num_classes, self.config.feature_dim):
            raise ValueError(
                f"head shape {head.shape} does not match config "
                f"({self.config.num_classes}, {self.config.feature_dim})"
            )
        object.__setattr__(self, "head", head)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    @property
    def num_classes(self) -> int:
        return self.config.num_classes


def he_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """He-normal weights: std sqrt(2 / fan_in). Biases start at zero."""
    return rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)


def init_mlp(cfg: MlpConfig, seed=None) -> Mlp:
    """Fresh network with He-normal weights; ``seed`` overrides cfg.seed."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dims = (cfg.input_dim,) + cfg.hidden_dims
    weights = [he_init(rng, dims[i + 1], dims[i]) for i in range(len(cfg.hidden_dims))]
    biases = [np.zeros(h) for h in cfg.hidden_dims] if cfg.use_bias else None
    head = he_init(rng, cfg.num_classes, cfg.feature_dim)
    return Mlp(cfg, tuple(weights), tuple(biases) if biases is not None else None, head)


def _check_input(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.config.input_dim:
        raise ConfigMismatch(
            f"input dim {batch.shape[-1]} does not match network "
            f"input_dim {net.config.input_dim}"
        )
    return batch, single


def _hidden_forward(net: Mlp, batch: np.ndarray) -> list[np.ndarray]:
    """Post-ReLU activations per hidden layer (before the bias-trick append)."""
    acts = []
    h = batch
    for l, w in enumerate(net.hidden_weights):
        pre = h @ w.T
        if net.hidden_biases is not None:
            pre = pre + net.hidden_biases[l]
        h = np.maximum(pre, 0.0)
        acts.append(h)
    return acts


def features(net: Mlp, x) -> np.ndarray:
    """Penultimate feature vector(s) phi(x), with the constant-1 column
    appended in bias mode.  forward(net, x) == head @ features(net, x)
    holds exactly by construction."""
    batch, single = _check_input(net, x)
    acts = _hidden_forward(net, batch)
    phi = acts[-1] if acts else batch
    if net.config.use_bias:
        phi = np.concatenate([phi, np.ones((phi.shape[0], 1))], axis=1)
    return phi[0] if single else phi


def forward(net: Mlp, x) -> np.ndarray:
    """Logits head @ phi(x)."""
    phi = features(net, x)
    return phi @ net.head.T


def relu_pattern(net: Mlp, x) -> tuple[bytes, ...]:
    """Active-unit mask per hidden layer, packed as bytes for comparison."""
    batch, _ = _check_input(net, x)
    return tuple((a > 0.0).tobytes() for a in _hidden_forward(net, batch))


def softmax(logits) -> np.ndarray:
    """Row-wise stable softmax (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class MlpGrads:
    hidden: list[tuple[np.ndarray, np.ndarray | None]]
    head: np.ndarray


def _l2_norm_sq(net_params) -> float:
    weights, biases, head = net_params
    total = float(np.sum(head * head))
    for w in weights:
        total += float(np.sum(w * w))
    if biases is not None:
        for b in biases:
            total += float(np.sum(b * b))
    return total


def loss_and_grad(
    net: Mlp, batch: Dataset, weight_decay: float, n_total: int | None = None
) -> tuple[float, MlpGrads]:
    """Mean cross-entropy over the batch plus an L2 penalty, with exact
    backprop gradients.

    The penalty is ``weight_decay / (2 * n_total) * ||theta||^2`` so that
    n_total times the full-data loss is the negative log joint under an
    isotropic Gaussian prior with precision ``weight_decay``.  ``n_total``
    defaults to the batch size.
    """
    if batch.num_classes != net.config.num_classes:
        raise ConfigMismatch("batch class count does not match network")
    n_total = batch.n if n_total is None else int(n_total)
    X, y = batch.X, batch.y
    B = X.shape[0]

    acts = _hidden_forward(net, X)
    phi = acts[-1] if acts else X
    if net.config.use_bias:
        phi = np.concatenate([phi, np.ones((B, 1))], axis=1)
    logits = phi @ net.head.T

    logp = log_softmax(logits)
    ce = -float(logp[np.arange(B), y].mean())

    probs = np.exp(logp)
    delta = probs
    delta[np.arange(B), y] -= 1.0
    delta /= B  # d(mean CE)/d(logits)

    d_head = delta.T @ phi
    d_phi = delta @ net.head
    if net.config.use_bias:
        d_phi = d_phi[:, :-1]  # constant feature carries no gradient

    hidden_grads: list[tuple[np.ndarray, np.ndarray | None]] = []
    upstream = d_phi
    for l in range(len(net.hidden_weights) - 1, -1, -1):
        act = acts[l]
        upstream = upstream * (act > 0.0)
        below = acts[l - 1] if l > 0 else X
        dw = upstream.T @ below
        db = upstream.sum(axis=0) if net.hidden_biases is not None else None
        hidden_grads.append((dw, db))
        upstream = upstream @ net.hidden_weights[l]
    hidden_grads.reverse()

    reg = weight_decay / n_total
    params = (net.hidden_weights, net.hidden_biases, net.head)
    loss = ce + 0.5 * reg * _l2_norm_sq(params)
    d_head += reg * net.head
    hidden_grads = [
        (
            dw + reg * net.hidden_weights[l],
            None if db is None else db + reg * net.hidden_biases[l],
        )
        for l, (dw, db) in enumerate(hidden_grads)
    ]
    return loss, MlpGrads(hidden=hidden_grads, head=d_head)


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1**self.t)
            vhat = self.v[i] / (1 - self.b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _NesterovSgd:
    def __init__(self, shapes, lr, momentum=0.9):
        self.lr, self.mu = lr, momentum
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        for i, (p, g) in enumerate(zip(params, grads)):
            self.v[i] = self.mu * self.v[i] + g
            p -= self.lr * (g + self.mu * self.v[i])


def _flatten_params(weights, biases, head):
    out = list(weights)
    if biases is not None:
        out += list(biases)
    out.append(head)
    return out


def _flatten_grads(grads: MlpGrads, with_bias: bool):
    out = [dw for dw, _ in grads.hidden]
    if with_bias:
        out += [db for _, db in grads.hidden]
    out.append(grads.head)
    return out


def train_map(cfg: MlpConfig, tcfg: TrainConfig, data: Dataset) -> Mlp:
    """Mini-batch MAP training.  Both the init and the shuffle stream are
    derived from ``tcfg.seed``, so identical configs give bit-identical nets.
    ``epochs=0`` returns the freshly initialized network."""
    if data.num_classes != cfg.num_classes:
        raise ConfigMismatch("dataset class count does not match config")
    if data.dim != cfg.input_dim:
        raise ConfigMismatch("dataset feature dim does not match config")

    init_seed, shuffle_seed = np.random.SeedSequence(tcfg.seed).spawn(2)
    net = init_mlp(cfg, seed=init_seed)
    if tcfg.epochs == 0:
        return net

    weights = [w.copy() for w in net.hidden_weights]
    biases = [b.copy() for b in net.hidden_biases] if net.hidden_biases else None
    head = net.head.copy()

    params = _flatten_params(weights, biases, head)
    shapes = [p.shape for p in params]
    opt_cls = _Adam if tcfg.optimizer == "adam" else _NesterovSgd
    opt = opt_cls(shapes, tcfg.learning_rate)

    rng = np.random.default_rng(shuffle_seed)
    n = data.n
    for _ in range(tcfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            work = Mlp(
                cfg,
                tuple(weights),
                tuple(biases) if biases is not None else None,
                head,
            )
            _, grads = loss_and_grad(work, data.subset(idx), tcfg.weight_decay, n)
            opt.step(params, _flatten_grads(grads, biases is not None))

    return Mlp(cfg, tuple(weights), tuple(biases) if biases is not None else None, head)


def train_ensemble(cfg: MlpConfig, tcfg: TrainConfig, data: Dataset, k: int) -> list[Mlp]:
    """K independently initialized MAP estimates, member i seeded tcfg.seed + i."""
    if k < 1:
        raise ValueError("ensemble size must be >= 1")
    return [train_map(cfg, replace(tcfg, seed=tcfg.seed + i), data) for i in range(k)]
