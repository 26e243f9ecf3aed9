"""Evaluation metrics, bootstrap intervals, paired t-tests and distance analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .graph import bfs_distances

__all__ = [
    "MetricSummary",
    "PairedTestResult",
    "accuracy",
    "macro_f1",
    "bootstrap_ci",
    "paired_t_test",
    "accuracy_by_distance",
]

N_BOOTSTRAP = 1000
CONFIDENCE = 0.95


def _index(index_set):
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("index set is empty")
    return idx


def accuracy(pred, truth, index_set) -> float:
    idx = _index(index_set)
    return float(np.mean(np.asarray(pred)[idx] == np.asarray(truth)[idx]))


def macro_f1(pred, truth, index_set, n_classes) -> float:
    """Unweighted mean of per-class F1 over ``range(n_classes)``.

    Zero denominators count as 0, so a class absent from both prediction and
    truth contributes an F1 of 0. The single-class case is the exception and
    scores 1 when everything is correct.
    """
    idx = _index(index_set)
    p = np.asarray(pred)[idx]
    t = np.asarray(truth)[idx]
    if n_classes == 1:
        return float(np.all(p == t))
    scores = []
    for k in range(n_classes):
        tp = np.sum((p == k) & (t == k))
        fp = np.sum((p == k) & (t != k))
        fn = np.sum((p != k) & (t == k))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    low: float
    high: float
    values: tuple = field(repr=False)
    n_resamples: int = N_BOOTSTRAP
    level: float = CONFIDENCE

    @property
    def half_width(self) -> float:
        return max(self.mean - self.low, self.high - self.mean)


def bootstrap_ci(values, n_resamples=N_BOOTSTRAP, level=CONFIDENCE, seed=0) -> MetricSummary:
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("bootstrap needs at least two values")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, x.size, size=(n_resamples, x.size))
    means = x[draws].mean(axis=1)
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(means, [tail, 100 - tail])
    mean = float(x.mean())
    # percentile endpoints can straddle the mean by rounding when all values agree
    return MetricSummary(mean, float(min(low, mean)), float(max(high, mean)),
                         tuple(x.tolist()), n_resamples, level)


@dataclass(frozen=True)
class PairedTestResult:
    t: float
    p: float
    n_pairs: int
    mean_diff: float


def paired_t_test(a, b, keys_a=None, keys_b=None) -> PairedTestResult:
    """Two-sided paired Student t-test on ``a - b``.

    With keys given, pairs are matched by key (e.g. ``(split_seed, init_seed)``)
    and both key sets must coincide. Zero-variance differences (up to
    rounding) give ``p = 1`` for a zero mean and ``p = 0`` otherwise.
    """
    if keys_a is not None or keys_b is not None:
        map_a = dict(zip(keys_a, a))
        map_b = dict(zip(keys_b, b))
        if len(map_a) != len(a) or len(map_b) != len(b) or map_a.keys() != map_b.keys():
            raise ValueError("pairing keys of the two samples do not match")
        keys = sorted(map_a)
        a = [map_a[k] for k in keys]
        b = [map_b[k] for k in keys]
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.size != len(b) or d.size < 2:
        raise ValueError("need at least two pairs of equal-length samples")
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    # differences equal up to rounding count as zero variance
    if not np.isfinite(sd) or sd <= 1e-12 * float(np.abs(d).max()):
        if mean == 0.0:
            return PairedTestResult(0.0, 1.0, n, mean)
        return PairedTestResult(float(np.copysign(np.inf, mean)), 0.0, n, mean)
    t = mean / (sd / np.sqrt(n))
    p = 2 * sps.t.sf(abs(t), df=n - 1)
    return PairedTestResult(float(t), float(min(p, 1.0)), n, mean)


def accuracy_by_distance(results_a, results_b, graph, node_sets) -> list:
    """Mean accuracy gain of model A over B per hop distance from the training set.

    ``results_*`` are run records with ``split_seed``, ``init_seed``,
    ``predictions`` (length-n). ``node_sets`` maps a split seed to
    ``(train, eval)`` index arrays. Nodes considered per split are
    ``train + eval``, so distance 0 holds exactly the training nodes.
    Returns rows ``(distance, delta_acc_pct, n_bar)`` sorted by distance;
    unreachable nodes are binned at distance ``n``.
    """
    by_key_a = {(r.split_seed, r.init_seed): r for r in results_a}
    by_key_b = {(r.split_seed, r.init_seed): r for r in results_b}
    if by_key_a.keys() != by_key_b.keys() or not by_key_a:
        raise ValueError("results of the two models are not paired on identical splits")
    truth = graph.labels
    splits = sorted({k[0] for k in by_key_a})
    deltas: dict[int, list] = {}
    counts: dict[int, list] = {}
    for s in splits:
        train, evaluate = node_sets[s]
        nodes = np.union1d(train, evaluate)
        dist = bfs_distances(graph, train)[nodes]
        keys = [k for k in by_key_a if k[0] == s]
        bins = np.unique(dist)
        for d in bins:
            members = nodes[dist == d]
            gains = [
                accuracy(by_key_a[k].predictions, truth, members)
                - accuracy(by_key_b[k].predictions, truth, members)
                for k in keys
            ]
            deltas.setdefault(int(d), []).append(100.0 * float(np.mean(gains)))
            counts.setdefault(int(d), []).append(members.size)
    rows = []
    for d in sorted(deltas):
        n_bar = float(np.sum(counts[d]) / len(splits))
        rows.append((d, float(np.mean(deltas[d])), n_bar))
    return rows
