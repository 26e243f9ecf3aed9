"""Command-line entry point: ``pprop <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .config import MODEL_TAGS, PROPAGATION_MODES, SWEEP_AXES, ExperimentConfig
from .experiment import (
    SplitSpec,
    ablation_propagation_mode,
    run_matrix,
    sample_splits,
    sweep,
)
from .graph import SbmConfig, avg_shortest_path, generate_sbm, largest_connected_component
from .stats import accuracy_by_distance, bootstrap_ci, paired_t_test

log = logging.getLogger("pprop")


def bundled_dataset() -> Path:
    return Path(resources.files("pprop") / "data" / "sbm")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for name in ("model", "alpha", "K", "dataset", "workers", "visible_size", "stop_size"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    split_mode = getattr(args, "split_mode", None)
    if split_mode is not None:
        overrides["mode"] = split_mode
    if getattr(args, "n_splits", None) is not None:
        overrides["n_split_seeds"] = args.n_splits
    if getattr(args, "n_inits", None) is not None:
        overrides["n_init_seeds"] = args.n_inits
    if args.out is not None:
        overrides["out"] = args.out
    return cfg.replace(**overrides) if overrides else cfg


def _graph(cfg: ExperimentConfig):
    path = cfg.dataset or bundled_dataset()
    return io.load_dataset(path)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out or "pprop_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metric_block(results, seed=0) -> dict:
    ok = [r for r in results if not r.failed]
    block = {"n_runs": len(results), "n_failed": len(results) - len(ok)}
    if len(ok) >= 2:
        block["accuracy"] = bootstrap_ci([r.accuracy for r in ok], seed=seed)
        block["macro_f1"] = bootstrap_ci([r.macro_f1 for r in ok], seed=seed)
    elif ok:
        block["accuracy"] = ok[0].accuracy
        block["macro_f1"] = ok[0].macro_f1
    return block


def _describe(label, block) -> str:
    acc = block.get("accuracy")
    failed = f", {block['n_failed']} failed" if block["n_failed"] else ""
    if acc is None:
        return f"{label}: no successful runs ({block['n_runs']} attempted)"
    if isinstance(acc, float):
        return f"{label}: accuracy {100 * acc:.2f}% (single run{failed})"
    f1 = block["macro_f1"]
    return (f"{label}: accuracy {100 * acc.mean:.2f} +/- {100 * acc.half_width:.2f}%, "
            f"macro F1 {100 * f1.mean:.2f} +/- {100 * f1.half_width:.2f}% "
            f"over {block['n_runs']} runs{failed}")


def _write_run_outputs(out: Path, results, cfg: ExperimentConfig, stem="results"):
    io.write_results(results, out / f"{stem}.csv", cfg.config_hash())
    with open(out / f"{stem}_timing.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("split_seed", "init_seed", "epochs", "seconds_per_epoch"))
        w.writerows((r.split_seed, r.init_seed, r.epochs, f"{r.time_per_epoch:.6g}")
                    for r in results)


def _finish(out: Path, summary: dict, lines):
    io.write_summary(summary, out / "summary.json")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_train(args) -> int:
    cfg = _config(args).replace(n_split_seeds=1, n_init_seeds=1)
    if args.split_seed is not None:
        cfg = cfg.replace(validation_seeds=(args.split_seed,) if cfg.mode == "validation"
                          else cfg.validation_seeds,
                          test_seeds=(args.split_seed,) if cfg.mode == "test" else cfg.test_seeds)
    if args.init_seed is not None:
        cfg = cfg.replace(init_seeds=(args.init_seed,))
    g = _graph(cfg)
    results = run_matrix(g, cfg, workers=1)
    out = _out_dir(cfg)
    _write_run_outputs(out, results, cfg)
    r = results[0]
    summary = {"config_hash": cfg.config_hash(), "model": cfg.model, "accuracy": r.accuracy,
               "macro_f1": r.macro_f1, "epochs": r.epochs, "failed": r.failed}
    _finish(out, summary, [f"{cfg.model} split={r.split_seed} init={r.init_seed}: "
                           f"accuracy {100 * r.accuracy:.2f}%, macro F1 "
                           f"{100 * r.macro_f1:.2f}%, {r.epochs} epochs"
                           + (f" (FAILED: {r.error})" if r.failed else "")])
    return 1 if r.failed else 0


def cmd_matrix(args) -> int:
    cfg = _config(args)
    g = _graph(cfg)
    results = run_matrix(g, cfg)
    out = _out_dir(cfg)
    _write_run_outputs(out, results, cfg)
    io.emit_plot_data("accuracy", {cfg.model: results}, out / "fig_accuracy.csv")
    block = _metric_block(results)
    summary = {"config_hash": cfg.config_hash(), "config": cfg.to_dict(), cfg.model: block}
    _finish(out, summary, [_describe(f"{cfg.model} ({cfg.mode})", block)])
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    g = _graph(cfg)
    values = args.values or list(cfg.sweep_values)
    axis = args.axis or cfg.sweep_axis
    if axis is None or not values:
        raise ValueError("sweep needs --axis and --values (or sweep_axis/sweep_values in the config)")
    rows = sweep(g, cfg, axis, values)
    out = _out_dir(cfg)
    path = io.emit_plot_data("sweep", rows, out / f"fig_sweep_{axis}.csv", axis=axis)
    summary = {"config_hash": cfg.config_hash(), "axis": axis,
               "rows": [{"value": r.value, "mean": r.mean, "ci_low": r.low, "ci_high": r.high,
                         "n_runs": r.n_runs, "n_failed": r.n_failed} for r in rows]}
    lines = [f"sweep over {axis} ({cfg.model}), table in {path}"]
    lines += [f"  {axis}={r.value:g}: accuracy {100 * r.mean:.2f}% "
              f"[{100 * r.low:.2f}, {100 * r.high:.2f}]" for r in rows]
    _finish(out, summary, lines)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args).replace(model="appnp")
    g = _graph(cfg)
    out = _out_dir(cfg)
    modes = args.mode or list(PROPAGATION_MODES)
    by_mode, summaries, lines = {}, {}, ["propagation-mode ablation (appnp)"]
    for mode in modes:
        results = ablation_propagation_mode(g, cfg, mode)
        by_mode[mode] = results
        _write_run_outputs(out, results, cfg.replace(propagation=mode), stem=f"results_{mode}")
        block = _metric_block(results)
        summaries[mode] = block
        lines.append("  " + _describe(mode, block))
    table = {m: b["accuracy"] for m, b in summaries.items() if not isinstance(
        b.get("accuracy"), (float, type(None)))}
    if table:
        io.emit_plot_data("modes", table, out / "fig_modes.csv")
    tests = {}
    if "both" in by_mode:
        for other in (m for m in modes if m != "both"):
            res = _paired(by_mode["both"], by_mode[other])
            tests[f"both_vs_{other}"] = res
            lines.append(f"  both vs {other}: mean diff {100 * res.mean_diff:+.2f} pp, "
                         f"p = {res.p:.3g}")
    _finish(out, {"config_hash": cfg.config_hash(), "modes": summaries, "tests": tests}, lines)
    return 0


def _paired(a, b, metric="accuracy"):
    ok_a = {r.key: getattr(r, metric) for r in a if not r.failed}
    ok_b = {r.key: getattr(r, metric) for r in b if not r.failed}
    keys = sorted(ok_a.keys() & ok_b.keys())
    return paired_t_test([ok_a[k] for k in keys], [ok_b[k] for k in keys])


def _two_models(args, cfg, g):
    """Results for models A and B, from files when given, otherwise freshly run."""
    out = []
    for tag, path in ((args.a, args.results_a), (args.b, args.results_b)):
        if path:
            results = io.read_results(path)
            seen = {r.model for r in results}
            if seen != {tag}:
                log.warning("%s holds results tagged %s, used as %s", path, sorted(seen), tag)
        else:
            results = run_matrix(g, cfg.replace(model=tag))
        out.append(results)
    return out


def cmd_compare(args) -> int:
    cfg = _config(args)
    g = None if (args.results_a and args.results_b) else _graph(cfg)
    res_a, res_b = _two_models(args, cfg, g)
    keys_a = [r.key for r in res_a]
    keys_b = [r.key for r in res_b]
    acc = paired_t_test([r.accuracy for r in res_a], [r.accuracy for r in res_b], keys_a, keys_b)
    f1 = paired_t_test([r.macro_f1 for r in res_a], [r.macro_f1 for r in res_b], keys_a, keys_b)
    out = _out_dir(cfg)
    summary = {"a": args.a, "b": args.b, "accuracy": acc, "macro_f1": f1,
               args.a: _metric_block(res_a), args.b: _metric_block(res_b)}
    lines = [_describe(args.a, summary[args.a]), _describe(args.b, summary[args.b]),
             f"paired t-test {args.a} vs {args.b} ({acc.n_pairs} pairs): accuracy "
             f"t = {acc.t:.3f}, p = {acc.p:.3g}; macro F1 t = {f1.t:.3f}, p = {f1.p:.3g}"]
    _finish(out, summary, lines)
    return 0


def cmd_distance(args) -> int:
    cfg = _config(args)
    g = _graph(cfg)
    res_a, res_b = _two_models(args, cfg, g)
    node_sets = {}
    for s in sorted({r.split_seed for r in res_a}):
        splits = sample_splits(g, SplitSpec.from_config(cfg, s))
        node_sets[s] = (splits.train, splits.eval)
    ok = {r.key for r in res_a if not r.failed} & {r.key for r in res_b if not r.failed}
    rows = accuracy_by_distance([r for r in res_a if r.key in ok],
                                [r for r in res_b if r.key in ok], g, node_sets)
    out = _out_dir(cfg)
    io.emit_plot_data("distance", rows, out / "fig_distance.csv")
    lines = [f"accuracy gain of {args.a} over {args.b} by hop distance from the training set"]
    lines += [f"  d={d}: {delta:+.2f} pp (n_bar = {nbar:.1f})" for d, delta, nbar in rows]
    _finish(out, {"a": args.a, "b": args.b, "rows": rows}, lines)
    return 0


def cmd_gen_sbm(args) -> int:
    cfg = SbmConfig(nodes_per_block=args.per_block, n_blocks=args.blocks, p_in=args.p_in,
                    p_out=args.p_out, features_per_class=args.features_per_class,
                    feature_noise=args.noise, tokens_per_node=args.tokens, seed=args.seed)
    g = generate_sbm(cfg)
    if not args.no_lcc:
        g = largest_connected_component(g)
    out = Path(args.out or "sbm")
    io.save_dataset(g, out)
    sys.stdout.write(f"wrote {out}: n={g.n} m={g.n_edges} f={g.n_features} c={g.n_classes}\n")
    return 0


def cmd_stats(args) -> int:
    cfg = _config(args)
    g = _graph(cfg)
    lcc = largest_connected_component(g)
    stats = {
        "name": g.name, "nodes": g.n, "edges": g.n_edges, "features": g.n_features,
        "classes": g.n_classes, "label_rate": cfg.train_per_class * g.n_classes / g.n,
        "lcc_nodes": lcc.n,
        "avg_shortest_path": avg_shortest_path(lcc, seed=0) if lcc.n > 1 else 0.0,
        "class_counts": np.bincount(g.labels, minlength=g.n_classes).tolist(),
    }
    out = _out_dir(cfg)
    lines = [f"{k}: {v:.4g}" if isinstance(v, float) else f"{k}: {v}" for k, v in stats.items()]
    _finish(out, stats, lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help="dataset bundle directory (default: bundled SBM)")
    common.add_argument("--workers", type=int, help="parallel runs (env PPROP_WORKERS wins)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--model", choices=MODEL_TAGS)
    run.add_argument("--alpha", type=float)
    run.add_argument("--K", "-K", type=int)
    run.add_argument("--n-splits", type=int, help="use the first N split seeds")
    run.add_argument("--n-inits", type=int, help="use the first N init seeds")
    run.add_argument("--visible-size", type=int)
    run.add_argument("--stop-size", type=int)

    split_mode = argparse.ArgumentParser(add_help=False)
    split_mode.add_argument("--mode", dest="split_mode", choices=("validation", "test"))

    parser = argparse.ArgumentParser(prog="pprop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, run, split_mode], help="single run")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--init-seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("matrix", parents=[common, run, split_mode], help="split x init matrix")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("sweep", parents=[common, run, split_mode], help="K / alpha / ntrain sweep")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", type=float, nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", parents=[common, run], help="propagation-mode ablation")
    p.add_argument("--mode", choices=PROPAGATION_MODES, nargs="+",
                   help="propagation modes to run (default: all four)")
    p.add_argument("--split-mode", choices=("validation", "test"))
    p.set_defaults(func=cmd_ablate)

    for name, func, text in (("compare", cmd_compare, "paired t-test between two models"),
                             ("distance", cmd_distance, "accuracy gain by hop distance")):
        p = sub.add_parser(name, parents=[common, run, split_mode], help=text)
        p.add_argument("--a", required=True, choices=MODEL_TAGS)
        p.add_argument("--b", required=True, choices=MODEL_TAGS)
        p.add_argument("--results-a", help="results.csv of model A (run fresh if omitted)")
        p.add_argument("--results-b", help="results.csv of model B (run fresh if omitted)")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-sbm", help="write a synthetic SBM dataset bundle")
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--per-block", type=int, default=100)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.005)
    p.add_argument("--features-per-class", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--tokens", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-lcc", action="store_true", help="keep all components")
    p.add_argument("--config", help="accepted for uniformity; unused")
    p.add_argument("--out", help="output directory (default ./sbm)")
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics")
    p.set_defaults(func=cmd_stats)
    return parser


def cli_run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as exit code 1
        if args.verbose:
            log.exception("command failed")
        sys.stderr.write(f"pprop {args.command}: error: {exc}\n")
        return 1


def main():
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
