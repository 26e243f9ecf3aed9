"""Feature-to-logits predictors, losses and the Adam optimizer."""

from .layers import (
    MlpConfig,
    PredictorParams,
    StaleCacheError,
    adam_step,
    dropout,
    init_glorot,
    init_mlp,
    l2_penalty,
    mlp_backward,
    mlp_forward,
    softmax,
    softmax_xent_loss,
)
from .models import (
    APPNPModel,
    GCNModel,
    GcnConfig,
    MLPModel,
    Model,
    PPNPModel,
    gcn_backward,
    gcn_forward,
    init_gcn,
)

__all__ = [
    "MlpConfig", "PredictorParams", "StaleCacheError", "adam_step", "dropout",
    "init_glorot", "init_mlp", "l2_penalty", "mlp_backward", "mlp_forward", "softmax",
    "softmax_xent_loss", "APPNPModel", "GCNModel", "GcnConfig", "MLPModel", "Model",
    "PPNPModel", "gcn_backward", "gcn_forward", "init_gcn",
]
