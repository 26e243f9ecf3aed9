"""End-to-end node classifiers built from the predictor and propagation operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import NormalizedAdjacency
from ..propagation import (
    ExactPPR,
    IterativePPR,
    exact_ppr_matrix,
    propagate_adjoint,
    propagate_exact,
    propagate_iterative,
    drop_edges,
)
from .layers import (
    MlpConfig,
    PredictorParams,
    StaleCacheError,
    dropout,
    init_glorot,
    init_mlp,
    l2_penalty,
    mlp_backward,
    mlp_forward,
)

__all__ = [
    "GcnConfig",
    "Model",
    "MLPModel",
    "APPNPModel",
    "PPNPModel",
    "GCNModel",
    "init_gcn",
    "gcn_forward",
    "gcn_backward",
]


@dataclass(frozen=True)
class GcnConfig:
    hidden: int = 64
    l2: float = 0.02
    dropout: float = 0.5
    adj_dropout: float = 0.5
    bias: bool = True
    variant: str = "optimized"

    @classmethod
    def vanilla(cls):
        return cls(hidden=16, l2=5e-4, adj_dropout=0.0, variant="vanilla")

    @classmethod
    def optimized(cls):
        return cls(hidden=64, l2=0.02, adj_dropout=0.5, variant="optimized")


class Model:
    """Common surface: ``forward`` returns ``(logits, cache)``, ``backward`` the
    parameter gradients for an upstream ``dL/dlogits``."""

    tag = "model"
    params: PredictorParams
    l2 = 0.0

    def forward(self, X, rng=None, train=False, propagate=True):
        raise NotImplementedError

    def backward(self, cache, dlogits) -> dict:
        raise NotImplementedError

    def regularization(self):
        return l2_penalty(self.params, self.l2)

    def predict(self, X, propagate=True) -> np.ndarray:
        logits, _ = self.forward(X, train=False, propagate=propagate)
        return logits


class MLPModel(Model):
    tag = "mlp"

    def __init__(self, cfg: MlpConfig, seed):
        self.cfg = cfg
        self.l2 = cfg.l2
        self.params = init_mlp(cfg, seed)

    def forward(self, X, rng=None, train=False, propagate=True):
        return mlp_forward(self.params, self.cfg, X, rng, train)

    def backward(self, cache, dlogits):
        return mlp_backward(self.params, cache, dlogits)


class APPNPModel(MLPModel):
    """MLP predictions followed by K power-iteration steps of personalized PageRank."""

    tag = "appnp"

    def __init__(self, cfg: MlpConfig, adj: NormalizedAdjacency, seed, alpha=0.1, K=10,
                 adj_dropout=0.5):
        super().__init__(cfg, seed)
        self.op = IterativePPR(adj, alpha=alpha, K=K, dropout=adj_dropout,
                               limit_mode=alpha == 0)

    def forward(self, X, rng=None, train=False, propagate=True):
        H, cache = mlp_forward(self.params, self.cfg, X, rng, train)
        if not propagate:
            cache["record"] = None
            return H, cache
        Z, record = propagate_iterative(self.op, H, rng if train else None, record=True)
        cache["record"] = record
        return Z, cache

    def backward(self, cache, dlogits):
        if cache.get("record") is not None:
            dlogits = propagate_adjoint(self.op, dlogits, cache["record"])
        return mlp_backward(self.params, cache, dlogits)


class PPNPModel(MLPModel):
    """MLP predictions propagated with the dense personalized PageRank matrix."""

    tag = "ppnp"

    def __init__(self, cfg: MlpConfig, adj: NormalizedAdjacency, seed, alpha=0.1,
                 op: ExactPPR | None = None):
        super().__init__(cfg, seed)
        self.op = op if op is not None else exact_ppr_matrix(adj, alpha)

    def forward(self, X, rng=None, train=False, propagate=True):
        H, cache = mlp_forward(self.params, self.cfg, X, rng, train)
        cache["propagated"] = propagate
        return (propagate_exact(self.op, H) if propagate else H), cache

    def backward(self, cache, dlogits):
        if cache["propagated"]:
            dlogits = propagate_adjoint(self.op, dlogits)
        return mlp_backward(self.params, cache, dlogits)


def init_gcn(n_features, n_classes, cfg: GcnConfig, seed) -> PredictorParams:
    rng = np.random.default_rng(seed)
    tensors = {"W0": init_glorot((n_features, cfg.hidden), rng)}
    if cfg.bias:
        tensors["b0"] = np.zeros(cfg.hidden)
    tensors["W1"] = init_glorot((cfg.hidden, n_classes), rng)
    if cfg.bias:
        tensors["b1"] = np.zeros(n_classes)
    return PredictorParams(tensors)


def _adjacency(adj, rate, rng):
    return drop_edges(adj.matrix, rate, rng) if rng is not None and rate > 0 else adj.matrix


def gcn_forward(params: PredictorParams, cfg: GcnConfig, adj: NormalizedAdjacency, X,
                rng=None, train_mode=False):
    """``A relu(A X W0 + b0) W1 + b1`` with feature and adjacency dropout in training."""
    rng = rng if train_mode else None
    X_in, _ = dropout(X, cfg.dropout, rng)
    A0 = _adjacency(adj, cfg.adj_dropout, rng)
    Z1 = np.asarray(A0 @ np.asarray(X_in @ params["W0"]))
    if cfg.bias:
        Z1 = Z1 + params["b0"]
    H1 = np.maximum(Z1, 0.0)
    H1_in, mask1 = dropout(H1, cfg.dropout, rng)
    A1 = _adjacency(adj, cfg.adj_dropout, rng)
    Z2 = np.asarray(A1 @ (H1_in @ params["W1"]))
    if cfg.bias:
        Z2 = Z2 + params["b1"]
    cache = {"version": params.version, "X_in": X_in, "A0": A0, "Z1": Z1,
             "H1_in": H1_in, "mask1": mask1, "A1": A1}
    return Z2, cache


def gcn_backward(params: PredictorParams, cfg: GcnConfig, cache, dZ2) -> dict:
    if cache.get("version") != params.version:
        raise StaleCacheError("parameters changed since the forward pass")
    grads = {}
    dZ2 = np.asarray(dZ2, dtype=np.float64)
    if cfg.bias:
        grads["b1"] = dZ2.sum(axis=0)
    dM2 = cache["A1"].T @ dZ2
    grads["W1"] = cache["H1_in"].T @ dM2
    dH1 = dM2 @ params["W1"].T
    if cache["mask1"] is not None:
        dH1 = dH1 * cache["mask1"] / (1.0 - cfg.dropout)
    dZ1 = dH1 * (cache["Z1"] > 0)
    if cfg.bias:
        grads["b0"] = dZ1.sum(axis=0)
    dM1 = cache["A0"].T @ dZ1
    grads["W0"] = np.asarray(cache["X_in"].T @ dM1)
    return grads


class GCNModel(Model):
    def __init__(self, n_features, n_classes, adj: NormalizedAdjacency, cfg: GcnConfig, seed):
        self.cfg = cfg
        self.adj = adj
        self.l2 = cfg.l2
        self.tag = f"gcn-{cfg.variant}"
        self.params = init_gcn(n_features, n_classes, cfg, seed)

    def forward(self, X, rng=None, train=False, propagate=True):
        return gcn_forward(self.params, self.cfg, self.adj, X, rng, train)

    def backward(self, cache, dlogits):
        return gcn_backward(self.params, self.cfg, cache, dlogits)
