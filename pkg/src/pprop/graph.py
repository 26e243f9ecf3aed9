"""Sparse graph container, adjacency normalization and graph utilities."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "SbmConfig",
    "normalize_adjacency",
    "normalize_features",
    "largest_connected_component",
    "bfs_distances",
    "avg_shortest_path",
    "generate_sbm",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph with node features and labels.

    ``adjacency`` is a binary symmetric CSR matrix without stored self-loops.
    ``node_ids`` maps local node index to the id in the graph this one was
    derived from (identity for freshly built graphs).
    """

    adjacency: sp.csr_matrix
    features: sp.csr_matrix
    labels: np.ndarray
    n_classes: int
    node_ids: np.ndarray = field(default=None)
    name: str = "graph"

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise ValueError("features and labels must have one row per node")
        if (abs(self.adjacency - self.adjacency.T) > 0).nnz:
            raise ValueError("adjacency is not symmetric")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency must not store self-loops")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if self.node_ids is None:
            object.__setattr__(self, "node_ids", np.arange(n))
        empty = np.flatnonzero(np.diff(self.features.indptr) == 0)
        if empty.size:
            warnings.warn(f"{empty.size} node(s) have no nonzero feature", stacklevel=3)

    @classmethod
    def from_edges(cls, n, edges, features, labels, n_classes, name="graph"):
        """Build a graph from an edge list, symmetrizing and deduplicating it.

        Self-loops are dropped with a warning.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            warnings.warn(f"dropping {int(loops.sum())} self-loop(s)", stacklevel=2)
            edges = edges[~loops]
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        adj.sum_duplicates()
        adj.data[:] = 1.0
        adj.sort_indices()
        return cls(adj, sp.csr_matrix(features, dtype=np.float64),
                   np.asarray(labels, dtype=np.int64), int(n_classes), name=name)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v, sorted."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def subgraph(self, nodes) -> "Graph":
        nodes = np.sort(np.asarray(nodes, dtype=np.int64))
        return Graph(
            self.adjacency[nodes][:, nodes].tocsr(),
            self.features[nodes].tocsr(),
            self.labels[nodes],
            self.n_classes,
            node_ids=self.node_ids[nodes],
            name=self.name,
        )

    def with_features(self, features) -> "Graph":
        return Graph(self.adjacency, sp.csr_matrix(features), self.labels,
                     self.n_classes, node_ids=self.node_ids, name=self.name)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """CSR propagation matrix plus the self-loop degree vector ``D~``."""

    matrix: sp.csr_matrix
    degrees: np.ndarray
    kind: str = "sym"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def columns(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr


def _as_adjacency(g):
    return g.adjacency if isinstance(g, Graph) else sp.csr_matrix(g)


def normalize_adjacency(g, kind: str = "sym") -> NormalizedAdjacency:
    """Return ``D~^-1/2 (A + I) D~^-1/2`` (``kind="sym"``).

    ``kind="rw"`` gives the column-stochastic ``(A + I) D~^-1`` instead; it is
    exposed for experimentation only.
    """
    adj = _as_adjacency(g).astype(np.float64)
    if (abs(adj - adj.T) > 0).nnz:
        raise ValueError("adjacency is not symmetric")
    n = adj.shape[0]
    with_loops = (adj + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(with_loops.sum(axis=1)).ravel()
    if kind == "sym":
        d = sp.diags(1.0 / np.sqrt(deg))
        mat = d @ with_loops @ d
    elif kind == "rw":
        mat = with_loops @ sp.diags(1.0 / deg)
    else:
        raise ValueError(f"unknown normalization {kind!r}")
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return NormalizedAdjacency(mat, deg, kind)


def normalize_features(g: Graph) -> Graph:
    """L1-normalize every nonzero feature row."""
    x = sp.csr_matrix(g.features, dtype=np.float64, copy=True)
    sums = np.asarray(abs(x).sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    x = sp.csr_matrix(sp.diags(scale) @ x)
    x.sort_indices()
    return g.with_features(x)


def largest_connected_component(g: Graph) -> Graph:
    if g.n == 0:
        raise ValueError("graph is empty")
    _, comp = connected_components(g.adjacency, directed=False)
    sizes = np.bincount(comp)
    # ties go to the component containing the smallest node id
    keep = np.flatnonzero(comp == np.argmax(sizes))
    if keep.size == g.n:
        return g
    return g.subgraph(keep)


def bfs_distances(g, sources) -> np.ndarray:
    """Multi-source hop distances. Unreachable nodes get ``n``."""
    adj = _as_adjacency(g)
    n = adj.shape[0]
    sources = np.unique(np.asarray(list(sources) if not isinstance(sources, np.ndarray)
                                   else sources, dtype=np.int64))
    if sources.size == 0:
        raise ValueError("need at least one source node")
    if sources.min() < 0 or sources.max() >= n:
        raise ValueError("source node id out of range")
    dist = np.full(n, n, dtype=np.int64)
    dist[sources] = 0
    queue = deque(sources.tolist())
    indptr, indices = adj.indptr, adj.indices
    while queue:
        u = queue.popleft()
        nxt = dist[u] + 1
        for v in indices[indptr[u]:indptr[u + 1]]:
            if dist[v] == n:
                dist[v] = nxt
                queue.append(v)
    return dist


def avg_shortest_path(g, sample_pairs: int = 10_000, seed: int = 0,
                      exact_limit: int = 1000) -> float:
    """Mean hop distance between distinct node pairs.

    Exact over all ordered pairs when ``n <= exact_limit``; otherwise the mean
    over ``sample_pairs`` random pairs (BFS from each sampled source).
    """
    adj = _as_adjacency(g)
    n = adj.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes")
    if connected_components(adj, directed=False)[0] != 1:
        raise ValueError("graph is not connected")
    if n <= exact_limit:
        dist = shortest_path(adj, directed=False, unweighted=True)
        return float(dist.sum() / (n * (n - 1)))
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, sample_pairs)
    dst = (src + rng.integers(1, n, sample_pairs)) % n
    total = 0.0
    for s in np.unique(src):
        d = bfs_distances(adj, [s])
        total += d[dst[src == s]].sum()
    return float(total / sample_pairs)


@dataclass(frozen=True)
class SbmConfig:
    """Planted-partition SBM with bag-of-words class signatures."""

    nodes_per_block: int = 100
    n_blocks: int = 3
    p_in: float = 0.05
    p_out: float = 0.005
    features_per_class: int = 20
    feature_noise: float = 0.5
    tokens_per_node: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 1 or self.nodes_per_block < 1:
            raise ValueError("need at least one block with at least one node")
        for name in ("p_in", "p_out", "feature_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_blocks > 1 and not self.p_in > self.p_out:
            raise ValueError("p_in must exceed p_out")
        if self.features_per_class < 1 or self.tokens_per_node < 1:
            raise ValueError("features_per_class and tokens_per_node must be positive")


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Sample an SBM graph. Features are raw token counts (not normalized).

    Each class owns a disjoint block of ``features_per_class`` feature ids.
    Every token of a node is drawn from its class block with probability
    ``1 - feature_noise`` and uniformly from all features otherwise.
    """
    rng = np.random.default_rng(cfg.seed)
    b, k = cfg.nodes_per_block, cfg.n_blocks
    n = b * k
    labels = np.repeat(np.arange(k), b)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], cfg.p_in, cfg.p_out)
    hit = rng.random(iu.size) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)

    f = k * cfg.features_per_class
    t = cfg.tokens_per_node
    own = labels[:, None] * cfg.features_per_class + rng.integers(0, cfg.features_per_class, (n, t))
    noise = rng.integers(0, f, (n, t))
    tokens = np.where(rng.random((n, t)) < cfg.feature_noise, noise, own)
    rows = np.repeat(np.arange(n), t)
    feats = sp.csr_matrix((np.ones(n * t), (rows, tokens.ravel())), shape=(n, f))
    feats.sum_duplicates()
    feats.sort_indices()
    return Graph.from_edges(n, edges, feats, labels, k, name=f"sbm-{cfg.seed}")
