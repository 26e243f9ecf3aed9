import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pprop.graph import normalize_adjacency
from pprop.propagation import (
    DenseCapError,
    ExactPPR,
    IterativePPR,
    PropagationMode,
    exact_ppr_matrix,
    gcn_step,
    propagate_adjoint,
    propagate_exact,
    propagate_iterative,
)

from conftest import central_difference, make_graph, random_graph, rel_error

TWO_NODE_PPR = np.array([[0.55, 0.45], [0.45, 0.55]])


@pytest.fixture
def adj2(two_nodes):
    return normalize_adjacency(two_nodes)


class TestExactPPR:
    @pytest.mark.parametrize("alpha", [0.05, 0.5, 1.0])
    def test_single_node(self, alpha):
        op = exact_ppr_matrix(normalize_adjacency(make_graph(1, [], n_classes=1)), alpha)
        np.testing.assert_allclose(op.matrix, [[1.0]], atol=1e-15)

    def test_two_nodes(self, adj2):
        # 0.1 * [[0.55, -0.45], [-0.45, 0.55]]^-1, determinant 0.1
        np.testing.assert_allclose(exact_ppr_matrix(adj2, 0.1).matrix, TWO_NODE_PPR, atol=1e-14)

    def test_alpha_one_is_identity(self):
        adj = normalize_adjacency(random_graph(12, 0.3, seed=1))
        np.testing.assert_allclose(exact_ppr_matrix(adj, 1.0).matrix, np.eye(12), atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.1])
    def test_alpha_range(self, adj2, alpha):
        with pytest.raises(ValueError):
            exact_ppr_matrix(adj2, alpha)

    def test_dense_cap(self):
        adj = normalize_adjacency(random_graph(30, 0.1, seed=0))
        with pytest.raises(DenseCapError, match="iterative"):
            exact_ppr_matrix(adj, 0.1, max_nodes=20)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 40), p=st.floats(0.0, 0.4), seed=st.integers(0, 10_000),
           alpha=st.sampled_from([0.01, 0.1, 0.5, 1.0]))
    def test_properties(self, n, p, seed, alpha):
        adj = normalize_adjacency(random_graph(n, p, seed, connected=False))
        pi = exact_ppr_matrix(adj, alpha).matrix
        A = adj.matrix.toarray()
        residual = (np.eye(n) - (1 - alpha) * A) @ pi - alpha * np.eye(n)
        assert np.abs(residual).max() <= 1e-8
        np.testing.assert_allclose(pi, pi.T, atol=1e-12)
        assert pi.min() >= -1e-12
        v = np.sqrt(adj.degrees)
        np.testing.assert_allclose(pi @ v, v, atol=1e-9)

    def test_propagate(self, adj2):
        op = exact_ppr_matrix(adj2, 0.1)
        np.testing.assert_array_equal(propagate_exact(op, np.zeros((2, 3))), 0)
        np.testing.assert_allclose(propagate_exact(op, np.eye(2)), TWO_NODE_PPR, atol=1e-14)
        with pytest.raises(ValueError, match="rows"):
            propagate_exact(op, np.ones((3, 2)))

    def test_propagate_alpha_one_unchanged(self):
        adj = normalize_adjacency(random_graph(7, 0.4, seed=2))
        H = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_allclose(propagate_exact(exact_ppr_matrix(adj, 1.0), H), H, atol=1e-14)


class TestIterativePPR:
    def test_k0_returns_input(self, adj2):
        H = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(propagate_iterative(IterativePPR(adj2, 0.1, K=0), H), H)

    def test_one_step_two_nodes(self, adj2):
        Z = propagate_iterative(IterativePPR(adj2, 0.1, K=1), np.eye(2))
        np.testing.assert_allclose(Z, TWO_NODE_PPR, atol=1e-15)

    def test_alpha_zero_is_adjacency_power(self):
        adj = normalize_adjacency(random_graph(9, 0.3, seed=3))
        H = np.random.default_rng(1).normal(size=(9, 2))
        Z = propagate_iterative(IterativePPR(adj, 0.0, K=6, limit_mode=True), H)
        expected = np.linalg.matrix_power(adj.matrix.toarray(), 6) @ H
        np.testing.assert_allclose(Z, expected, atol=1e-12)

    def test_alpha_zero_needs_limit_mode(self, adj2):
        with pytest.raises(ValueError, match="limit_mode"):
            IterativePPR(adj2, 0.0, K=3)

    @pytest.mark.parametrize("kw", [dict(K=-1), dict(dropout=1.0), dict(alpha=1.5)])
    def test_rejects_bad_parameters(self, adj2, kw):
        with pytest.raises(ValueError):
            IterativePPR(adj2, **{"alpha": 0.1, **kw})

    def test_shape_mismatch(self, adj2):
        with pytest.raises(ValueError):
            propagate_iterative(IterativePPR(adj2), np.ones((3, 1)))

    def test_fixed_point(self):
        adj = normalize_adjacency(random_graph(30, 0.15, seed=4))
        H = np.random.default_rng(2).normal(size=(30, 3))
        Z = propagate_exact(exact_ppr_matrix(adj, 0.1), H)
        np.testing.assert_allclose(Z, 0.9 * (adj.matrix @ Z) + 0.1 * H, atol=1e-9)

    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.2])
    def test_geometric_convergence(self, alpha):
        for seed in range(5):
            adj = normalize_adjacency(random_graph(40, 0.1, seed=seed))
            H = np.random.default_rng(seed).normal(size=(40, 3))
            H /= np.linalg.norm(H)
            target = propagate_exact(exact_ppr_matrix(adj, alpha), H)
            gap0 = np.linalg.norm(H - target)
            for K in range(1, 31):
                Z = propagate_iterative(IterativePPR(adj, alpha, K), H)
                assert np.linalg.norm(Z - target) <= (1 - alpha) ** K * gap0 + 1e-9

    def test_dropout_scales_survivors_and_resamples(self):
        adj = normalize_adjacency(random_graph(20, 0.3, seed=5))
        op = IterativePPR(adj, 0.1, K=4, dropout=0.5)
        _, rec = propagate_iterative(op, np.ones((20, 1)), np.random.default_rng(0), record=True)
        assert len(rec.steps) == 4
        A = adj.matrix
        for step in rec.steps:
            kept = step.data != 0
            np.testing.assert_allclose(step.data[kept], 2 * A.data[kept])
            assert 0.3 < kept.mean() < 0.7
        assert any((rec.steps[0] != rec.steps[1]).nnz for _ in [0])

    def test_dropout_inactive_without_rng(self):
        adj = normalize_adjacency(random_graph(10, 0.3, seed=6))
        H = np.ones((10, 2))
        a = propagate_iterative(IterativePPR(adj, 0.1, 5, dropout=0.5), H)
        b = propagate_iterative(IterativePPR(adj, 0.1, 5), H)
        np.testing.assert_array_equal(a, b)


def _operators(seed, n=12):
    adj = normalize_adjacency(random_graph(n, 0.25, seed=seed))
    return adj, [exact_ppr_matrix(adj, 0.1), IterativePPR(adj, 0.1, 7), IterativePPR(adj, 0.2, 1)]


class TestAdjoint:
    def test_zero(self):
        _, ops = _operators(0)
        for op in ops:
            np.testing.assert_array_equal(propagate_adjoint(op, np.zeros((12, 2))), 0)

    def test_iterative_adjoint_equals_forward_without_dropout(self):
        _, ops = _operators(1)
        G = np.random.default_rng(0).normal(size=(12, 3))
        for op in ops[1:]:
            np.testing.assert_allclose(propagate_adjoint(op, G), propagate_iterative(op, G),
                                       atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_inner_product_identity(self, seed):
        _, ops = _operators(seed)
        rng = np.random.default_rng(seed)
        H, G = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
        for op in ops:
            fwd = propagate_exact(op, H) if isinstance(op, ExactPPR) else propagate_iterative(op, H)
            lhs, rhs = np.sum(fwd * G), np.sum(H * propagate_adjoint(op, G))
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)

    def test_dropout_needs_record(self):
        adj, _ = _operators(2)
        with pytest.raises(ValueError, match="recorded"):
            propagate_adjoint(IterativePPR(adj, 0.1, 3, dropout=0.5), np.ones((12, 1)))

    def test_rejects_unknown_operator(self):
        with pytest.raises(TypeError):
            propagate_adjoint(object(), np.ones((1, 1)))

    @pytest.mark.parametrize("dropout", [0.0, 0.5])
    def test_finite_difference(self, dropout):
        g = random_graph(5, 0.5, seed=7)
        adj = normalize_adjacency(g)
        op = IterativePPR(adj, 0.1, K=4, dropout=dropout)
        rng = np.random.default_rng(3)
        H = rng.normal(size=(5, 2))
        C = rng.normal(size=(5, 2))  # fixed linear functional <Z, C>

        def f():
            return np.sum(propagate_iterative(op, H, np.random.default_rng(11)) * C)

        _, rec = propagate_iterative(op, H, np.random.default_rng(11), record=True)
        analytic = propagate_adjoint(op, C, rec)
        numeric = central_difference(f, H)
        assert rel_error(analytic, numeric) <= 1e-4

    def test_exact_finite_difference(self):
        adj = normalize_adjacency(random_graph(5, 0.5, seed=8))
        op = exact_ppr_matrix(adj, 0.15)
        rng = np.random.default_rng(4)
        H, C = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        numeric = central_difference(lambda: np.sum(propagate_exact(op, H) * C), H)
        assert rel_error(propagate_adjoint(op, C), numeric) <= 1e-4


class TestGcnStep:
    def test_single_node(self):
        adj = normalize_adjacency(make_graph(1, [], n_classes=1))
        H = np.array([[3.0, -1.0]])
        np.testing.assert_array_equal(gcn_step(adj, H), H)

    def test_eigenvector_unchanged(self):
        adj = normalize_adjacency(random_graph(15, 0.2, seed=9))
        v = np.sqrt(adj.degrees)[:, None]
        np.testing.assert_allclose(gcn_step(adj, v), v, atol=1e-12)

    def test_two_nodes(self, adj2):
        np.testing.assert_allclose(gcn_step(adj2, np.eye(2)), [[0.5, 0.5], [0.5, 0.5]])

    def test_shape_mismatch(self, adj2):
        with pytest.raises(ValueError):
            gcn_step(adj2, np.ones((1, 2)))


def test_propagation_mode_flags():
    assert [(m.in_training, m.in_inference) for m in PropagationMode] == [
        (False, False), (True, False), (False, True), (True, True)]
