"""Personalized-PageRank propagation operators and their adjoints.

All operators are linear maps on ``n x c`` matrices. Softmax is left to the
loss head so that forward and adjoint stay testable in isolation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .graph import NormalizedAdjacency

__all__ = [
    "DenseCapError",
    "ExactPPR",
    "IterativePPR",
    "PropagationMode",
    "PropagationRecord",
    "exact_ppr_matrix",
    "propagate_exact",
    "propagate_iterative",
    "propagate_adjoint",
    "gcn_step",
    "drop_edges",
]

DEFAULT_DENSE_CAP = 5000


class DenseCapError(MemoryError):
    """Raised when a dense PPR matrix would exceed the configured node cap."""


class PropagationMode(enum.Enum):
    NEVER = "never"
    TRAINING_ONLY = "training"
    INFERENCE_ONLY = "inference"
    BOTH = "both"

    @property
    def in_training(self) -> bool:
        return self in (PropagationMode.TRAINING_ONLY, PropagationMode.BOTH)

    @property
    def in_inference(self) -> bool:
        return self in (PropagationMode.INFERENCE_ONLY, PropagationMode.BOTH)


@dataclass(frozen=True, eq=False)
class ExactPPR:
    alpha: float
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class IterativePPR:
    """K steps of ``Z <- (1 - alpha) A Z + alpha H`` starting from ``Z = H``.

    ``alpha = 0`` (pure neighbour averaging) is only accepted with
    ``limit_mode=True``. ``dropout`` drops stored entries of the adjacency
    independently per step.
    """

    adj: NormalizedAdjacency
    alpha: float = 0.1
    K: int = 10
    dropout: float = 0.0
    limit_mode: bool = False

    def __post_init__(self):
        lo_ok = self.alpha > 0 or (self.alpha == 0 and self.limit_mode)
        if not (lo_ok and self.alpha <= 1):
            raise ValueError(f"alpha={self.alpha} outside (0, 1] "
                             "(alpha=0 needs limit_mode=True)")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def n(self) -> int:
        return self.adj.n


@dataclass(eq=False)
class PropagationRecord:
    """Per-step adjacency matrices actually used by one forward pass."""

    steps: list = field(default_factory=list)


def exact_ppr_matrix(adj: NormalizedAdjacency, alpha: float,
                     max_nodes: int = DEFAULT_DENSE_CAP) -> ExactPPR:
    """Dense ``alpha (I - (1 - alpha) A)^-1`` via a Cholesky solve."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1]")
    n = adj.n
    if n > max_nodes:
        raise DenseCapError(f"n={n} exceeds the dense cap of {max_nodes} nodes; "
                            "use the iterative operator instead")
    system = np.eye(n) - (1.0 - alpha) * adj.matrix.toarray()
    if adj.kind == "sym":
        # eigenvalues of the system lie in [alpha, 2 - alpha], so it is SPD
        factor = scipy.linalg.cho_factor(system)
        pi = scipy.linalg.cho_solve(factor, alpha * np.eye(n))
        pi = 0.5 * (pi + pi.T)
    else:
        pi = scipy.linalg.solve(system, alpha * np.eye(n))
    return ExactPPR(float(alpha), pi)


def _check_rows(n, H):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != n:
        raise ValueError(f"expected an array with {n} rows, got shape {H.shape}")
    return H


def propagate_exact(op: ExactPPR, H) -> np.ndarray:
    return op.matrix @ _check_rows(op.n, H)


def drop_edges(mat: sp.csr_matrix, rate: float, rng) -> sp.csr_matrix:
    """Inverted dropout on the stored entries of a CSR matrix."""
    keep = rng.random(mat.nnz) >= rate
    return sp.csr_matrix((mat.data * keep / (1.0 - rate), mat.indices, mat.indptr),
                         shape=mat.shape)


def propagate_iterative(op: IterativePPR, H, rng=None, record: bool = False):
    """Run the power iteration. Returns ``Z`` or ``(Z, PropagationRecord)``.

    Edge dropout is only applied when ``rng`` is given and ``op.dropout > 0``.
    """
    H = _check_rows(op.n, H)
    rec = PropagationRecord()
    use_dropout = rng is not None and op.dropout > 0
    Z = H
    teleport = op.alpha * H
    for _ in range(op.K):
        A = drop_edges(op.adj.matrix, op.dropout, rng) if use_dropout else op.adj.matrix
        if use_dropout:
            rec.steps.append(A)
        Z = (1.0 - op.alpha) * (A @ Z) + teleport
    return (Z, rec) if record else Z


def propagate_adjoint(op, G, record: PropagationRecord | None = None) -> np.ndarray:
    """Apply the transpose of the forward operator to an upstream gradient.

    For an iterative operator run with edge dropout the recorded per-step
    matrices are replayed in reverse order.
    """
    if not isinstance(op, (ExactPPR, IterativePPR)):
        raise TypeError(f"unsupported operator {type(op).__name__}")
    G = _check_rows(op.n, G)
    if isinstance(op, ExactPPR):
        return op.matrix.T @ G
    if record is not None and record.steps:
        if len(record.steps) != op.K:
            raise ValueError("record does not match the operator's step count")
        steps = record.steps
    elif op.dropout > 0 and record is None:
        raise ValueError("adjoint of a dropout forward pass needs its recorded masks")
    else:
        steps = [op.adj.matrix] * op.K
    # Z_{k+1} = (1 - a) A_k Z_k + a H; walk the recurrence backwards
    grad_z = G
    grad_h = np.zeros_like(G)
    for A in reversed(steps):
        grad_h += op.alpha * grad_z
        grad_z = (1.0 - op.alpha) * (A.T @ grad_z)
    return grad_h + grad_z


def gcn_step(adj: NormalizedAdjacency, H) -> np.ndarray:
    return adj.matrix @ _check_rows(adj.n, H)
