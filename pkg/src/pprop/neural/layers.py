"""Dense/sparse MLP predictor, cross-entropy head, L2 penalty and Adam.

Gradients are written out by hand; every forward returns a cache that the
matching backward consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MlpConfig",
    "PredictorParams",
    "StaleCacheError",
    "init_glorot",
    "init_mlp",
    "dropout",
    "mlp_forward",
    "mlp_backward",
    "softmax",
    "softmax_xent_loss",
    "l2_penalty",
    "adam_step",
]


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters changed."""


@dataclass(frozen=True)
class MlpConfig:
    sizes: tuple = (None, 64, None)
    dropout: float = 0.5
    l2: float = 0.005
    bias: bool = True

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")

    @classmethod
    def default(cls, n_features, n_classes, hidden=64, **kw):
        hidden = tuple(hidden) if isinstance(hidden, (list, tuple)) else (hidden,)
        return cls(sizes=(n_features, *hidden, n_classes), **kw)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


@dataclass(eq=False)
class PredictorParams:
    """Named parameter tensors plus Adam moment buffers."""

    tensors: dict
    m: dict = field(default=None)
    v: dict = field(default=None)
    step: int = 0
    version: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = {k: np.zeros_like(t) for k, t in self.tensors.items()}
        if self.v is None:
            self.v = {k: np.zeros_like(t) for k, t in self.tensors.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def snapshot(self) -> dict:
        return {k: t.copy() for k, t in self.tensors.items()}

    def load(self, tensors: dict):
        for k, t in tensors.items():
            self.tensors[k][...] = t
        self.version += 1


def init_glorot(shape, seed) -> np.ndarray:
    """Glorot/Xavier uniform initialization."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_mlp(cfg: MlpConfig, seed) -> PredictorParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for i, (a, b) in enumerate(zip(cfg.sizes[:-1], cfg.sizes[1:])):
        tensors[f"W{i}"] = init_glorot((a, b), rng)
        if cfg.bias:
            tensors[f"b{i}"] = np.zeros(b)
    return PredictorParams(tensors)


def dropout(X, rate, rng):
    """Inverted dropout. Returns ``(dropped, mask)``; sparse inputs drop stored entries."""
    if rng is None or rate == 0:
        return X, None
    if sp.issparse(X):
        X = X.tocsr()
        mask = rng.random(X.nnz) >= rate
        out = sp.csr_matrix((X.data * mask / (1.0 - rate), X.indices, X.indptr), shape=X.shape)
        return out, mask
    mask = rng.random(X.shape) >= rate
    return X * mask / (1.0 - rate), mask


def _check_finite(X):
    data = X.data if sp.issparse(X) else X
    if not np.all(np.isfinite(data)):
        raise ValueError("input contains NaN or infinite values")


def mlp_forward(params: PredictorParams, cfg: MlpConfig, X, rng=None, train_mode=False):
    """dropout -> linear -> ReLU -> ... -> dropout -> linear.

    Dropout is active only with ``train_mode=True`` and a generator.
    """
    _check_finite(X)
    rng = rng if train_mode else None
    layers = []
    A = X
    for i in range(cfg.n_layers):
        A_in, mask = dropout(A, cfg.dropout, rng)
        Z = A_in @ params[f"W{i}"]
        Z = np.asarray(Z)
        if cfg.bias:
            Z = Z + params[f"b{i}"]
        pre = Z
        if i < cfg.n_layers - 1:
            A = np.maximum(Z, 0.0)
        layers.append((A_in, mask, pre))
    cache = {"layers": layers, "version": params.version, "cfg": cfg}
    return pre, cache


def mlp_backward(params: PredictorParams, cache, dH) -> dict:
    """Parameter gradients of the MLP given ``dL/dH``."""
    if cache.get("version") != params.version:
        raise StaleCacheError("parameters changed since the forward pass")
    cfg = cache["cfg"]
    grads = {}
    dZ = np.asarray(dH, dtype=np.float64)
    for i in reversed(range(cfg.n_layers)):
        A_in, mask, _ = cache["layers"][i]
        W = params[f"W{i}"]
        grads[f"W{i}"] = np.asarray(A_in.T @ dZ)
        if cfg.bias:
            grads[f"b{i}"] = dZ.sum(axis=0)
        if i == 0:
            break
        dA_in = dZ @ W.T
        if mask is not None:
            dA_in = dA_in * mask / (1.0 - cfg.dropout)
        dZ = dA_in * (cache["layers"][i - 1][2] > 0)
    return grads


def softmax(Z) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(Z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_loss(Z, labels, index_set):
    """Mean cross-entropy over ``index_set`` and its gradient w.r.t. ``Z``."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("index set is empty")
    Z = np.asarray(Z, dtype=np.float64)
    sub = Z[idx]
    shifted = sub - sub.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    y = np.asarray(labels)[idx]
    log_p = shifted[np.arange(idx.size), y] - log_norm
    loss = float(-log_p.mean())
    p = np.exp(shifted - log_norm[:, None])
    p[np.arange(idx.size), y] -= 1.0
    grad = np.zeros_like(Z)
    np.add.at(grad, idx, p / idx.size)
    return loss, grad


def l2_penalty(params: PredictorParams, l2: float, weight: str = "W0"):
    """``l2 / 2 * ||W0||_F^2`` on the first-layer weights only."""
    W = params[weight]
    grads = {k: np.zeros_like(t) for k, t in params.tensors.items()}
    if l2 == 0:
        return 0.0, grads
    grads[weight] = l2 * W
    return float(0.5 * l2 * np.sum(W * W)), grads


def adam_step(params: PredictorParams, grads: dict, lr=0.01, beta1=0.9, beta2=0.999,
              eps=1e-8) -> PredictorParams:
    """Bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    params.step += 1
    t = params.step
    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.version += 1
    return params
