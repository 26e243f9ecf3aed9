"""Dataset files, result tables and figure data tables.

Dataset bundle: a directory holding ``graph.tsv`` (``u<TAB>v``),
``features.tsv`` (``node<TAB>feature<TAB>value``) and ``labels.tsv``
(``node<TAB>class``). Each file starts with the header ``#n=<n> f=<f> c=<c>``.
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .experiment import RunResult
from .graph import Graph, normalize_features
from .stats import MetricSummary, PairedTestResult

__all__ = [
    "DatasetError",
    "DatasetBundle",
    "load_dataset",
    "save_dataset",
    "RESULT_COLUMNS",
    "write_results",
    "read_results",
    "write_summary",
    "emit_plot_data",
]

EDGE_WARNING = 10_000_000
_HEADER = re.compile(r"^#n=(\d+) f=(\d+) c=(\d+)$")


class DatasetError(ValueError):
    """Malformed dataset file. ``code`` is one of ``header``, ``parse``,
    ``id_range``, ``asymmetric``, ``count_mismatch``, ``missing``."""

    def __init__(self, code, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(f"[{code}] {where}{message}")
        self.code = code
        self.path = path
        self.line = line


@dataclass(frozen=True)
class DatasetBundle:
    graph_path: Path
    features_path: Path
    labels_path: Path
    name: str = "dataset"

    @classmethod
    def from_dir(cls, directory) -> "DatasetBundle":
        d = Path(directory)
        return cls(d / "graph.tsv", d / "features.tsv", d / "labels.tsv", d.name)


def _read_table(path, n_cols, kinds):
    path = Path(path)
    if not path.exists():
        raise DatasetError("missing", "file not found", path)
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError("header", "empty file", path, 1)
    m = _HEADER.match(lines[0])
    if not m:
        raise DatasetError("header", f"expected '#n=<n> f=<f> c=<c>', got {lines[0]!r}", path, 1)
    header = tuple(int(v) for v in m.groups())
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != n_cols:
            raise DatasetError("parse", f"expected {n_cols} tab-separated fields, got {line!r}",
                               path, lineno)
        try:
            rows.append(tuple(kind(p) for kind, p in zip(kinds, parts)))
        except ValueError:
            raise DatasetError("parse", f"cannot parse {line!r}", path, lineno) from None
    return header, rows


def _check_ids(path, rows, col, bound, what):
    for lineno, row in enumerate(rows, start=2):
        if not 0 <= row[col] < bound:
            raise DatasetError("id_range", f"{what} {row[col]} outside [0, {bound})", path, lineno)


def load_dataset(bundle, normalize: bool = True) -> Graph:
    """Read a dataset bundle (or its directory) into a :class:`Graph`.

    Edges are symmetrized and deduplicated. With ``normalize`` every nonzero
    feature row is scaled to unit L1 norm.
    """
    if not isinstance(bundle, DatasetBundle):
        bundle = DatasetBundle.from_dir(bundle)
    gh, edges = _read_table(bundle.graph_path, 2, (int, int))
    fh_, feats = _read_table(bundle.features_path, 3, (int, int, float))
    lh, labels = _read_table(bundle.labels_path, 2, (int, int))
    if not gh == fh_ == lh:
        raise DatasetError("count_mismatch", f"headers disagree: graph {gh}, features {fh_}, "
                           f"labels {lh}")
    n, f, c = gh
    _check_ids(bundle.graph_path, edges, 0, n, "node")
    _check_ids(bundle.graph_path, edges, 1, n, "node")
    _check_ids(bundle.features_path, feats, 0, n, "node")
    _check_ids(bundle.features_path, feats, 1, f, "feature")
    _check_ids(bundle.labels_path, labels, 0, n, "node")
    _check_ids(bundle.labels_path, labels, 1, c, "class")
    if len(edges) > EDGE_WARNING:
        warnings.warn(f"{len(edges)} edges exceed the text-format comfort limit", stacklevel=2)

    y = np.full(n, -1, dtype=np.int64)
    for lineno, (node, cls) in enumerate(labels, start=2):
        if y[node] != -1:
            raise DatasetError("count_mismatch", f"node {node} labelled twice",
                               bundle.labels_path, lineno)
        y[node] = cls
    if (y < 0).any():
        raise DatasetError("count_mismatch", f"{int((y < 0).sum())} node(s) without a label",
                           bundle.labels_path)

    if feats:
        r, col, val = (np.array(v) for v in zip(*feats))
    else:
        r = col = np.zeros(0, np.int64)
        val = np.zeros(0)
    x = sp.csr_matrix((val.astype(np.float64), (r.astype(np.int64), col.astype(np.int64))),
                      shape=(n, f))
    x.sum_duplicates()
    x.eliminate_zeros()
    x.sort_indices()

    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    g = Graph.from_edges(n, e, x, y, c, name=bundle.name)
    if (abs(g.adjacency - g.adjacency.T) > 0).nnz:
        raise DatasetError("asymmetric", "adjacency asymmetric after symmetrization",
                           bundle.graph_path)
    return normalize_features(g) if normalize else g


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(g: Graph, directory) -> DatasetBundle:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bundle = DatasetBundle.from_dir(d)
    header = f"#n={g.n} f={g.n_features} c={g.n_classes}\n"
    with open(bundle.graph_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.writelines(f"{u}\t{v}\n" for u, v in g.edges())
    x = g.features.tocoo()
    order = np.lexsort((x.col, x.row))
    with open(bundle.features_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.writelines(f"{x.row[i]}\t{x.col[i]}\t{_fmt(x.data[i])}\n" for i in order)
    with open(bundle.labels_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.writelines(f"{i}\t{k}\n" for i, k in enumerate(g.labels))
    return bundle


RESULT_COLUMNS = (
    "config_hash", "model", "mode", "propagation", "split_seed", "init_seed", "accuracy",
    "macro_f1", "epochs", "best_epoch", "stop_accuracy", "stop_loss", "failed", "error",
    "predictions",
)


def write_results(results, path, config_hash: str):
    """One row per run. Wall-clock timings are deliberately left out so that
    identical configurations produce byte-identical tables."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([
                config_hash, r.model, r.mode, r.propagation, r.split_seed, r.init_seed,
                _fmt(r.accuracy), _fmt(r.macro_f1), r.epochs, r.best_epoch,
                _fmt(r.stop_accuracy), _fmt(r.stop_loss), int(r.failed), r.error,
                " ".join(map(str, np.asarray(r.predictions).tolist())),
            ])


def read_results(path) -> list:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing result column(s) {sorted(missing)}")
        for row in reader:
            preds = np.array(row["predictions"].split(), dtype=np.int64)
            out.append(RunResult(
                split_seed=int(row["split_seed"]), init_seed=int(row["init_seed"]),
                model=row["model"], mode=row["mode"], propagation=row["propagation"],
                accuracy=float(row["accuracy"]), macro_f1=float(row["macro_f1"]),
                epochs=int(row["epochs"]), best_epoch=int(row["best_epoch"]),
                stop_accuracy=float(row["stop_accuracy"]), stop_loss=float(row["stop_loss"]),
                predictions=preds, failed=bool(int(row["failed"])), error=row["error"],
            ))
    return out


def _jsonable(obj):
    if isinstance(obj, MetricSummary):
        return {"mean": obj.mean, "ci_low": obj.low, "ci_high": obj.high,
                "n": len(obj.values), "n_resamples": obj.n_resamples, "level": obj.level}
    if isinstance(obj, PairedTestResult):
        return {"t": obj.t, "p": obj.p, "n_pairs": obj.n_pairs, "mean_diff": obj.mean_diff}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_summary(summary: dict, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


_FIGURE_COLUMNS = {
    "accuracy": ("model", "split_seed", "init_seed", "accuracy"),
    "sweep": ("axis", "value", "mean_accuracy", "ci_low", "ci_high", "n_runs", "n_failed"),
    "modes": ("mode", "mean_accuracy", "ci_low", "ci_high", "n_runs"),
    "distance": ("distance", "delta_acc_pct", "n_bar"),
}


def emit_plot_data(figure: str, data, path, tags=None, axis: str | None = None) -> Path:
    """Write one CSV table backing a figure.

    ``figure`` selects the layout:

    * ``accuracy``: ``data`` maps model tag to run results (per-run accuracy lists)
    * ``sweep``: ``data`` is a list of sweep rows; ``axis`` names the swept field
    * ``modes``: ``data`` maps propagation mode to a :class:`MetricSummary`
    * ``distance``: ``data`` is a list of ``(distance, delta_acc_pct, n_bar)``

    ``tags`` lists the keys that must be present in ``data``.
    """
    if figure not in _FIGURE_COLUMNS:
        raise ValueError(f"unknown figure {figure!r}")
    if not data:
        raise ValueError(f"no data for figure {figure!r}")
    if tags is not None:
        missing = [t for t in tags if t not in data]
        if missing:
            raise KeyError(f"figure {figure!r} lacks results for {missing}")
    rows = []
    if figure == "accuracy":
        for tag, results in data.items():
            rows += [(tag, r.split_seed, r.init_seed, _fmt(r.accuracy)) for r in results]
    elif figure == "sweep":
        rows = [(axis or "", _fmt(r.value), _fmt(r.mean), _fmt(r.low), _fmt(r.high),
                 r.n_runs, r.n_failed) for r in data]
    elif figure == "modes":
        rows = [(m, _fmt(s.mean), _fmt(s.low), _fmt(s.high), len(s.values))
                for m, s in data.items()]
    else:
        rows = [(int(d), _fmt(delta), _fmt(nbar)) for d, delta, nbar in data]
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIGURE_COLUMNS[figure])
        w.writerows(rows)
    return path
