import math

import numpy as np
import pytest

from pprop import experiment
from pprop.config import TEST_SPLIT_SEEDS, VALIDATION_SPLIT_SEEDS, ExperimentConfig
from pprop.experiment import (
    EarlyStopState,
    RunContext,
    SplitSpec,
    ablation_propagation_mode,
    build_model,
    resolve_split_sizes,
    run_early_stopping,
    run_matrix,
    run_single,
    sample_splits,
    sweep,
)
from pprop.graph import SbmConfig, generate_sbm, largest_connected_component, normalize_features

from conftest import make_graph


@pytest.fixture(scope="module")
def sbm():
    g = generate_sbm(SbmConfig(nodes_per_block=60, p_in=0.1, p_out=0.01, feature_noise=0.5,
                               seed=3))
    return normalize_features(largest_connected_component(g))


def fast_cfg(**kw):
    base = dict(patience=5, max_epochs=15, n_split_seeds=2, n_init_seeds=1, hidden=8)
    return ExperimentConfig(**{**base, **kw})


class TestSplits:
    def test_citeseer_scale(self):
        g = make_graph(2110, [], n_classes=6, n_features=1)
        s = sample_splits(g, SplitSpec(visible_size=1500, split_seed=1, mode="test"))
        assert (s.train.size, s.stop.size, s.validation.size, s.test.size) == (120, 500, 880, 610)
        assert resolve_split_sizes(2110, SplitSpec()) == (1500, 500)

    def test_sbm_configured(self):
        g = generate_sbm(SbmConfig(seed=0))
        s = sample_splits(g, SplitSpec(visible_size=200, stop_size=100, split_seed=3,
                                       mode="test"))
        assert (s.train.size, s.stop.size) == (60, 100)
        parts = [s.train, s.stop, s.validation, s.test]
        assert sum(p.size for p in parts) == g.n
        assert np.unique(np.concatenate(parts)).size == g.n
        assert np.all(np.bincount(g.labels[s.train], minlength=3) == 20)

    def test_small_graph_scaling(self):
        assert resolve_split_sizes(300, SplitSpec()) == (210, 70)
        assert resolve_split_sizes(300, SplitSpec(stop_size=40)) == (210, 40)

    def test_deterministic(self, sbm):
        a = sample_splits(sbm, SplitSpec(split_seed=9))
        b = sample_splits(sbm, SplitSpec(split_seed=9))
        for name in ("train", "stop", "eval"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        c = sample_splits(sbm, SplitSpec(split_seed=10))
        assert not np.array_equal(a.train, c.train)

    def test_firewall(self, sbm):
        for seed in VALIDATION_SPLIT_SEEDS[:5]:
            val = sample_splits(sbm, SplitSpec(split_seed=seed))
            test = sample_splits(sbm, SplitSpec(split_seed=seed, mode="test"))
            assert val.test is None
            seen = np.concatenate([val.train, val.stop, val.eval])
            assert not np.intersect1d(seen, test.test).size
            # the held-out set does not move with the split seed
            other = sample_splits(sbm, SplitSpec(split_seed=seed + 1, mode="test"))
            np.testing.assert_array_equal(test.test, other.test)

    def test_seed_lists_disjoint(self):
        assert len(VALIDATION_SPLIT_SEEDS) == len(TEST_SPLIT_SEEDS) == 20
        assert not set(VALIDATION_SPLIT_SEEDS) & set(TEST_SPLIT_SEEDS)
        with pytest.raises(ValueError, match="disjoint"):
            ExperimentConfig(test_seeds=VALIDATION_SPLIT_SEEDS)

    def test_too_few_nodes_in_class(self):
        g = make_graph(60, [], n_classes=2, labels=[0] * 55 + [1] * 5)
        with pytest.raises(ValueError, match="class 1"):
            sample_splits(g, SplitSpec(visible_size=60, stop_size=5))


class TestEarlyStopping:
    @staticmethod
    def drive(schedule, **kw):
        state = EarlyStopState(**kw)
        it = iter(schedule)

        def step(epoch):
            acc, loss = next(it)
            return acc, loss, (lambda: epoch)
        return run_early_stopping(step, state)

    def test_always_improving_hits_max(self):
        s = self.drive(((e / 1e4, 1.0 - e / 1e4) for e in range(10_000)))
        assert s.epochs == 10_000 and s.snapshot == 9_999

    def test_plateau_stops_after_patience(self):
        sched = [(0.5, 1.0), (0.7, 0.9)] + [(0.6, 1.2)] * 500
        s = self.drive(sched)
        assert s.epochs == 2 + 100
        assert s.snapshot == 1 and s.selected_acc == 0.7

    def test_loss_clause_resets_patience(self):
        sched = [(0.8, 1.0 - 1e-4 * e) for e in range(1000)] + [(0.8, 2.0)] * 200
        s = self.drive(sched)
        assert s.epochs == 1000 + 100
        # accuracy ties broken by the lowest loss
        assert s.snapshot == 999

    def test_tie_break_prefers_lower_loss(self):
        s = self.drive([(0.7, 1.0), (0.7, 0.5), (0.7, 0.8)] + [(0.1, 9.0)] * 200, patience=5)
        assert s.snapshot == 1

    def test_accuracy_beats_loss(self):
        s = self.drive([(0.7, 0.2), (0.8, 0.9)] + [(0.1, 9.0)] * 200, patience=5)
        assert s.snapshot == 1

    def test_loss_criterion(self):
        s = self.drive([(0.9, 1.0), (0.1, 0.5)] + [(1.0, 0.6)] * 50, patience=10,
                       criterion="loss")
        assert s.snapshot == 1 and s.epochs == 12


class TestRuns:
    def test_matrix_shape_and_determinism(self, sbm):
        cfg = fast_cfg(n_split_seeds=2, n_init_seeds=2)
        a = run_matrix(sbm, cfg)
        b = run_matrix(sbm, cfg)
        assert [r.key for r in a] == [(s, i) for s in cfg.split_seeds for i in cfg.run_init_seeds]
        assert [r.accuracy for r in a] == [r.accuracy for r in b]
        for r in a:
            assert not r.failed
            splits = sample_splits(sbm, SplitSpec.from_config(cfg, r.split_seed))
            assert r.accuracy == np.mean(r.predictions[splits.eval] == sbm.labels[splits.eval])

    def test_single_run(self, sbm):
        assert len(run_matrix(sbm, fast_cfg(n_split_seeds=1))) == 1

    def test_parallel_matches_serial(self, sbm):
        cfg = fast_cfg(n_split_seeds=2, n_init_seeds=1)
        serial = run_matrix(sbm, cfg, workers=1)
        parallel = run_matrix(sbm, cfg, workers=2)
        assert [r.accuracy for r in serial] == [r.accuracy for r in parallel]

    @pytest.mark.parametrize("model", ["appnp", "ppnp", "mlp", "gcn-vanilla", "gcn-optimized"])
    def test_every_model_trains(self, sbm, model):
        [r] = run_matrix(sbm, fast_cfg(model=model, n_split_seeds=1))
        assert not r.failed and r.epochs >= 1 and 0 <= r.accuracy <= 1
        if model == "gcn-vanilla":
            assert r.epochs <= 200

    def test_failed_run_recorded(self, sbm, monkeypatch):
        def boom(*a, **k):
            raise FloatingPointError("non-finite gradient for parameter W0")
        monkeypatch.setattr(experiment, "build_model", boom)
        results = run_matrix(sbm, fast_cfg())
        assert all(r.failed and math.isnan(r.accuracy) for r in results)
        assert "W0" in results[0].error

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_recorded(self, sbm):
        [r] = run_matrix(sbm, fast_cfg(lr=1e300, n_split_seeds=1))
        assert r.failed


class TestModes:
    def test_both_is_regular_path(self, sbm):
        cfg = fast_cfg()
        a = ablation_propagation_mode(sbm, cfg, "both")
        b = run_matrix(sbm, cfg)
        assert [r.accuracy for r in a] == [r.accuracy for r in b]

    def test_never_is_plain_mlp(self, sbm):
        cfg = fast_cfg()
        never = ablation_propagation_mode(sbm, cfg, "never")
        mlp = run_matrix(sbm, cfg.replace(model="mlp"))
        for a, b in zip(never, mlp):
            np.testing.assert_array_equal(a.predictions, b.predictions)

    def test_training_and_inference_share_weights(self, sbm):
        # training-only and both train identically; only the final read-out differs
        cfg = fast_cfg(n_split_seeds=1)
        [t] = ablation_propagation_mode(sbm, cfg, "training")
        [b] = ablation_propagation_mode(sbm, cfg, "both")
        assert t.stop_trace == b.stop_trace
        [i] = ablation_propagation_mode(sbm, cfg, "inference")
        [n] = ablation_propagation_mode(sbm, cfg, "never")
        assert i.stop_trace == n.stop_trace

    def test_alpha_one_propagation_is_identity(self, sbm):
        cfg = fast_cfg(alpha=1.0)
        model = build_model(RunContext(sbm, cfg), 0)
        np.testing.assert_allclose(model.predict(sbm.features),
                                   model.predict(sbm.features, propagate=False),
                                   atol=1e-12)

    def test_never_on_noise_is_chance(self):
        g = generate_sbm(SbmConfig(nodes_per_block=100, p_in=0.03, p_out=0.02,
                                   feature_noise=1.0, seed=5))
        cfg = fast_cfg(n_split_seeds=3, patience=20, max_epochs=200, mode="test")
        accs = [r.accuracy for r in ablation_propagation_mode(g, cfg, "never")]
        assert abs(np.mean(accs) - 1 / 3) < 0.1


class TestSweep:
    def test_single_value(self, sbm):
        rows = sweep(sbm, fast_cfg(), "k", [10])
        assert len(rows) == 1 and rows[0].value == 10 and rows[0].n_runs == 2

    def test_paired_seeds(self, sbm):
        rows = sweep(sbm, fast_cfg(), "alpha", [0.1, 0.5])
        assert [r.key for r in rows[0].results] == [r.key for r in rows[1].results]
        assert rows[0].low <= rows[0].mean <= rows[0].high

    def test_rejects_empty_and_unknown(self, sbm):
        with pytest.raises(ValueError):
            sweep(sbm, fast_cfg(), "k", [])
        with pytest.raises(ValueError):
            sweep(sbm, fast_cfg(), "hidden", [1])
