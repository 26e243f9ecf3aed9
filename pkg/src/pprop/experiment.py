"""Split sampling, early-stopping training and run-matrix orchestration."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .config import ExperimentConfig
from .graph import Graph, normalize_adjacency
from .neural import (
    APPNPModel,
    GCNModel,
    GcnConfig,
    MLPModel,
    MlpConfig,
    PPNPModel,
    adam_step,
    softmax_xent_loss,
)
from .propagation import PropagationMode, exact_ppr_matrix
from .stats import accuracy, bootstrap_ci, macro_f1

log = logging.getLogger(__name__)

__all__ = [
    "SplitSpec",
    "Splits",
    "resolve_split_sizes",
    "sample_splits",
    "EarlyStopState",
    "run_early_stopping",
    "RunResult",
    "RunContext",
    "build_model",
    "train_with_early_stopping",
    "run_single",
    "run_matrix",
    "ablation_propagation_mode",
    "sweep",
]

REFERENCE_VISIBLE = 1500
REFERENCE_STOP = 500
SMALL_GRAPH_VISIBLE_FRACTION = 0.7


@dataclass(frozen=True)
class SplitSpec:
    visible_size: int | None = None
    train_per_class: int = 20
    stop_size: int | None = None
    split_seed: int = 0
    init_seed: int = 0
    mode: str = "validation"
    visible_seed: int = 0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, split_seed, init_seed=0):
        return cls(cfg.visible_size, cfg.train_per_class, cfg.stop_size, split_seed,
                   init_seed, cfg.mode, cfg.visible_seed)


def resolve_split_sizes(n: int, spec: SplitSpec) -> tuple:
    """Return ``(visible_size, stop_size)`` for a graph with ``n`` nodes.

    Explicit sizes are used as given. Automatic sizing uses 1500 visible and
    500 early-stopping nodes when ``n >= 2000``; smaller graphs get
    ``round(0.7 n)`` visible nodes and a stop set one third of that, keeping
    the 1500:500 ratio.
    """
    visible = spec.visible_size
    auto_visible = visible is None
    if auto_visible:
        if n >= REFERENCE_VISIBLE + REFERENCE_STOP:
            visible = REFERENCE_VISIBLE
        else:
            visible = int(round(SMALL_GRAPH_VISIBLE_FRACTION * n))
    stop = spec.stop_size
    if stop is None:
        stop = REFERENCE_STOP if visible == REFERENCE_VISIBLE else \
            int(round(visible * REFERENCE_STOP / REFERENCE_VISIBLE))
    return visible, stop


@dataclass(frozen=True, eq=False)
class Splits:
    """Index sets of one split. ``test`` is only materialized in test mode."""

    train: np.ndarray
    stop: np.ndarray
    eval: np.ndarray
    mode: str
    split_seed: int
    validation: np.ndarray | None = None
    test: np.ndarray | None = None


def sample_splits(g: Graph, spec: SplitSpec) -> Splits:
    visible_size, stop_size = resolve_split_sizes(g.n, spec)
    if visible_size > g.n:
        raise ValueError(f"visible size {visible_size} exceeds node count {g.n}")
    perm = np.random.default_rng(spec.visible_seed).permutation(g.n)
    visible = np.sort(perm[:visible_size])

    rng = np.random.default_rng(spec.split_seed)
    train = []
    for k in range(g.n_classes):
        members = visible[g.labels[visible] == k]
        if members.size < spec.train_per_class:
            raise ValueError(f"class {k} has only {members.size} visible nodes, "
                             f"need {spec.train_per_class}")
        train.append(rng.choice(members, spec.train_per_class, replace=False))
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, np.int64)
    rest = np.setdiff1d(visible, train)
    if stop_size > rest.size:
        raise ValueError(f"early-stopping size {stop_size} exceeds the {rest.size} "
                         "visible nodes left after training selection")
    stop = np.sort(rng.choice(rest, stop_size, replace=False))
    validation = np.setdiff1d(rest, stop)
    if spec.mode == "validation":
        return Splits(train, stop, validation, "validation", spec.split_seed,
                      validation=validation)
    if spec.mode != "test":
        raise ValueError(f"unknown split mode {spec.mode!r}")
    test = np.sort(perm[visible_size:])
    return Splits(train, stop, test, "test", spec.split_seed, validation=validation, test=test)


@dataclass
class EarlyStopState:
    """Patience bookkeeping.

    ``criterion="acc_or_loss"`` resets patience when the stop-set accuracy
    rises or the loss falls, and keeps the snapshot with the highest accuracy
    (lowest loss on ties). ``criterion="loss"`` watches the loss alone.
    """

    patience: int = 100
    max_epochs: int = 10_000
    criterion: str = "acc_or_loss"
    best_acc: float = -math.inf
    best_loss: float = math.inf
    selected_acc: float = -math.inf
    selected_loss: float = math.inf
    selected_epoch: int = -1
    snapshot: object = None
    epochs_since_improvement: int = 0
    epochs: int = 0

    def update(self, acc: float, loss: float, take_snapshot=None) -> bool:
        """Record one epoch; return ``False`` once training should stop."""
        epoch = self.epochs
        self.epochs += 1
        if self.criterion == "loss":
            improved = loss < self.best_loss
            better = loss < self.selected_loss
        else:
            improved = acc > self.best_acc or loss < self.best_loss
            better = acc > self.selected_acc or (acc == self.selected_acc
                                                 and loss < self.selected_loss)
        self.best_acc = max(self.best_acc, acc)
        self.best_loss = min(self.best_loss, loss)
        if better:
            self.selected_acc, self.selected_loss, self.selected_epoch = acc, loss, epoch
            self.snapshot = take_snapshot() if take_snapshot is not None else None
        self.epochs_since_improvement = 0 if improved else self.epochs_since_improvement + 1
        return self.epochs_since_improvement < self.patience and self.epochs < self.max_epochs


def run_early_stopping(step, state: EarlyStopState) -> EarlyStopState:
    """Drive ``step(epoch) -> (acc, loss, take_snapshot)`` until ``state`` says stop."""
    while state.epochs < state.max_epochs:
        acc, loss, take_snapshot = step(state.epochs)
        if not state.update(acc, loss, take_snapshot):
            break
    return state


class DivergenceError(FloatingPointError):
    pass


@dataclass(eq=False)
class RunResult:
    split_seed: int
    init_seed: int
    model: str
    mode: str
    propagation: str
    accuracy: float
    macro_f1: float
    epochs: int
    best_epoch: int
    stop_accuracy: float
    stop_loss: float
    predictions: np.ndarray = field(repr=False)
    failed: bool = False
    error: str = ""
    time_per_epoch: float = 0.0
    train_loss: list = field(default_factory=list, repr=False)
    stop_trace: list = field(default_factory=list, repr=False)

    @property
    def key(self) -> tuple:
        return (self.split_seed, self.init_seed)


class RunContext:
    """Graph plus lazily built operators, shared by all runs of one matrix."""

    def __init__(self, graph: Graph, cfg: ExperimentConfig):
        self.graph = graph
        self.cfg = cfg

    @cached_property
    def adj(self):
        return normalize_adjacency(self.graph)

    @cached_property
    def ppr(self):
        return exact_ppr_matrix(self.adj, self.cfg.alpha)


def _mlp_config(cfg: ExperimentConfig, g: Graph) -> MlpConfig:
    hidden = (cfg.hidden,) * (cfg.n_layers - 1)
    return MlpConfig(sizes=(g.n_features, *hidden, g.n_classes), dropout=cfg.dropout,
                     l2=cfg.l2, bias=cfg.bias)


def build_model(ctx: RunContext, init_seed: int, tag: str | None = None):
    cfg, g = ctx.cfg, ctx.graph
    tag = tag or cfg.model
    if tag == "mlp":
        return MLPModel(_mlp_config(cfg, g), init_seed)
    if tag == "appnp":
        return APPNPModel(_mlp_config(cfg, g), ctx.adj, init_seed, alpha=cfg.alpha, K=cfg.K,
                          adj_dropout=cfg.adj_dropout)
    if tag == "ppnp":
        return PPNPModel(_mlp_config(cfg, g), ctx.adj, init_seed, alpha=cfg.alpha, op=ctx.ppr)
    if tag == "gcn-vanilla":
        gcfg = GcnConfig.vanilla()
    elif tag == "gcn-optimized":
        gcfg = GcnConfig.optimized()
    else:
        raise ValueError(f"unknown model tag {tag!r}")
    gcfg = GcnConfig(gcfg.hidden, gcfg.l2, cfg.dropout, gcfg.adj_dropout, cfg.bias,
                     gcfg.variant)
    return GCNModel(g.n_features, g.n_classes, ctx.adj, gcfg, init_seed)


def stopping_for(cfg: ExperimentConfig, tag: str) -> EarlyStopState:
    if tag == "gcn-vanilla":
        # original GCN schedule: loss-only patience 10, at most 200 epochs
        return EarlyStopState(patience=10, max_epochs=200, criterion="loss")
    return EarlyStopState(patience=cfg.patience, max_epochs=cfg.max_epochs)


def train_with_early_stopping(model, graph: Graph, splits: Splits, rng, lr=0.01,
                              state: EarlyStopState | None = None,
                              propagation: PropagationMode = PropagationMode.BOTH):
    """Full-batch training on ``splits.train`` with early stopping on ``splits.stop``.

    Returns ``(state, predictions, info)`` where ``predictions`` are the class
    ids of all nodes under the selected snapshot with dropout off.
    """
    state = state or EarlyStopState()
    X, y = graph.features, graph.labels
    train_prop = propagation.in_training
    info = {"train_loss": [], "stop": []}

    def step(epoch):
        logits, cache = model.forward(X, rng, train=True, propagate=train_prop)
        loss, dlogits = softmax_xent_loss(logits, y, splits.train)
        reg, reg_grads = model.regularization()
        if not math.isfinite(loss + reg):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        grads = model.backward(cache, dlogits)
        for k, g in reg_grads.items():
            grads[k] = grads[k] + g
        adam_step(model.params, grads, lr=lr)
        info["train_loss"].append(loss + reg)

        logits = model.predict(X, propagate=train_prop)
        stop_loss, _ = softmax_xent_loss(logits, y, splits.stop)
        if not math.isfinite(stop_loss):
            raise DivergenceError(f"non-finite early-stopping loss at epoch {epoch}")
        stop_acc = accuracy(logits.argmax(axis=1), y, splits.stop)
        info["stop"].append((stop_acc, stop_loss))
        return stop_acc, stop_loss, model.params.snapshot

    start = time.perf_counter()
    run_early_stopping(step, state)
    info["time_per_epoch"] = (time.perf_counter() - start) / max(state.epochs, 1)
    model.params.load(state.snapshot)
    logits = model.predict(X, propagate=propagation.in_inference)
    return state, logits.argmax(axis=1), info


def run_single(ctx: RunContext, split_seed: int, init_seed: int,
               propagation: str | None = None) -> RunResult:
    """One (split, init) run. Failures are captured in the result, not raised."""
    cfg, g = ctx.cfg, ctx.graph
    mode = PropagationMode(propagation or cfg.propagation)
    splits = sample_splits(g, SplitSpec.from_config(cfg, split_seed, init_seed))
    common = dict(split_seed=split_seed, init_seed=init_seed, model=cfg.model, mode=cfg.mode,
                  propagation=mode.value)
    try:
        model = build_model(ctx, init_seed)
        rng = np.random.default_rng([split_seed, init_seed])
        state, pred, info = train_with_early_stopping(
            model, g, splits, rng, lr=cfg.lr, state=stopping_for(cfg, cfg.model),
            propagation=mode)
    except Exception as exc:  # noqa: BLE001 - one failed run must not abort the matrix
        log.warning("run split=%s init=%s failed: %r", split_seed, init_seed, exc,
                    exc_info=not isinstance(exc, FloatingPointError))
        return RunResult(**common, accuracy=math.nan, macro_f1=math.nan, epochs=0,
                         best_epoch=-1, stop_accuracy=math.nan, stop_loss=math.nan,
                         predictions=np.full(g.n, -1), failed=True, error=repr(exc))
    return RunResult(
        **common,
        accuracy=accuracy(pred, g.labels, splits.eval),
        macro_f1=macro_f1(pred, g.labels, splits.eval, g.n_classes),
        epochs=state.epochs,
        best_epoch=state.selected_epoch,
        stop_accuracy=state.selected_acc,
        stop_loss=state.selected_loss,
        predictions=pred,
        time_per_epoch=info["time_per_epoch"],
        train_loss=info["train_loss"],
        stop_trace=info["stop"],
    )


_WORKER_CTX: RunContext | None = None


def _init_worker(graph, cfg):
    global _WORKER_CTX
    _WORKER_CTX = RunContext(graph, cfg)


def _worker_run(args):
    return run_single(_WORKER_CTX, *args)


def default_workers(cfg: ExperimentConfig | None = None) -> int:
    env = os.environ.get("PPROP_WORKERS")
    if env:
        return max(1, int(env))
    if cfg is not None and cfg.workers:
        return cfg.workers
    return 1


def run_matrix(graph: Graph, cfg: ExperimentConfig, propagation: str | None = None,
               workers: int | None = None) -> list:
    """All (split seed, init seed) runs, ordered by split then init seed."""
    jobs = [(s, i, propagation) for s in cfg.split_seeds for i in cfg.run_init_seeds]
    workers = workers or default_workers(cfg)
    if workers <= 1 or len(jobs) == 1:
        ctx = RunContext(graph, cfg)
        results = [run_single(ctx, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(graph, cfg)) as pool:
            results = list(pool.map(_worker_run, jobs))
    failed = sum(r.failed for r in results)
    if failed:
        log.warning("%d of %d runs failed", failed, len(results))
    return results


def ablation_propagation_mode(graph: Graph, cfg: ExperimentConfig, mode,
                              workers: int | None = None) -> list:
    """Run matrix of APPNP with propagation restricted to training and/or inference."""
    mode = PropagationMode(mode if isinstance(mode, str) else mode.value)
    return run_matrix(graph, cfg.replace(model="appnp", propagation=mode.value),
                      workers=workers)


@dataclass(frozen=True)
class SweepRow:
    value: float
    mean: float
    low: float
    high: float
    n_runs: int
    n_failed: int
    results: tuple = field(repr=False, default=())


_SWEEP_FIELDS = {"k": "K", "alpha": "alpha", "ntrain": "train_per_class"}


def sweep(graph: Graph, cfg: ExperimentConfig, axis: str, values,
          workers: int | None = None, bootstrap_seed: int = 0) -> list:
    """Mean eval accuracy per axis value; every value reuses the same seeds."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if axis not in _SWEEP_FIELDS:
        raise ValueError(f"unknown sweep axis {axis!r}")
    name = _SWEEP_FIELDS[axis]
    rows = []
    for v in values:
        v = int(v) if name in ("K", "train_per_class") else float(v)
        results = run_matrix(graph, cfg.replace(**{name: v}), workers=workers)
        ok = [r.accuracy for r in results if not r.failed]
        if len(ok) >= 2:
            s = bootstrap_ci(ok, seed=bootstrap_seed)
            mean, low, high = s.mean, s.low, s.high
        else:
            mean = low = high = ok[0] if ok else math.nan
        rows.append(SweepRow(v, mean, low, high, len(ok), len(results) - len(ok),
                             tuple(results)))
    return rows
