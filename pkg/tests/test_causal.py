from hypothesis import given, strategies as st
import numpy as np
import pytest

from appex.causal import CausalGraph, extract_graph, mae, pearson_corr, shd_confounders, shd_drift
from appex.errors import DimensionError


def _graph(d, edges=(), confs=()):
    return CausalGraph(d, frozenset(edges), frozenset(confs))


@st.composite
def graphs(draw, d=4):
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    edges = set()
    for i, j in pairs:
        s = draw(st.sampled_from([0, 1, -1]))
        if s:
            edges.add((i, j, s))
    confs = {p for p in [(i, j) for i in range(d) for j in range(i + 1, d)] if draw(st.booleans())}
    return _graph(d, edges, confs)


class TestExtractGraph:
    def test_empty(self):
        g = extract_graph(np.zeros((3, 3)), np.eye(3), 0.5)
        assert not g.edges and not g.confounders

    def test_threshold(self):
        A = np.zeros((3, 3))
        A[2, 1] = 0.6
        assert extract_graph(A, np.zeros((3, 3)), 0.5).edges == {(1, 2, 1)}
        A[2, 1] = 0.4
        assert not extract_graph(A, np.zeros((3, 3)), 0.5).edges
        A[2, 1] = -0.7
        assert extract_graph(A, np.zeros((3, 3)), 0.5).edges == {(1, 2, -1)}

    def test_confounder(self):
        H = np.eye(3) * 5
        H[1, 2] = H[2, 1] = 1.0
        g = extract_graph(np.zeros((3, 3)), H, 0.5)
        assert g.confounders == {(1, 2)}

    @given(st.integers(0, 10_000))
    def test_diagonal_never_confounds(self, seed):
        H = np.diag(np.random.default_rng(seed).uniform(1, 10, 4))
        assert not extract_graph(np.zeros((4, 4)), H, 0.5).confounders

    @given(st.integers(0, 10_000))
    def test_symmetric_drift_gives_symmetric_graph(self, seed):
        B = np.random.default_rng(seed).uniform(-3, 3, (4, 4))
        g = extract_graph(B + B.T, np.eye(4), 0.5)
        assert {(j, i, s) for i, j, s in g.edges} == set(g.edges)

    def test_rejects(self):
        with pytest.raises(ValueError, match="eps must be positive"):
            extract_graph(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)
        with pytest.raises(DimensionError):
            extract_graph(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_dict_and_dot(self):
        g = _graph(3, {(0, 1, 1), (2, 0, -1)}, {(0, 2)})
        assert CausalGraph.from_dict(g.to_dict()) == g
        dot = g.to_dot()
        assert "X0 -> X1" in dot and "X2 -> X0" in dot and "U_0_2" in dot
        assert _graph(2).to_dot().count("->") == 0


class TestShd:
    def test_examples(self):
        g = _graph(3, {(0, 1, 1)})
        assert shd_drift(g, g) == 0
        assert shd_drift(g, _graph(3, {(0, 1, -1)})) == 1
        assert shd_drift(_graph(3, {(0, 1, 1), (1, 2, -1)}), g) == 1
        assert shd_confounders(_graph(3, confs={(0, 1)}), _graph(3)) == 1
        assert shd_confounders(_graph(3, confs={(0, 1), (0, 2)}), _graph(3, confs={(0, 2), (1, 2)})) == 2

    def test_self_loops_ignored(self):
        assert shd_drift(_graph(2, {(0, 0, 1)}), _graph(2)) == 0

    @given(graphs(), graphs(), graphs())
    def test_metric_axioms(self, g1, g2, g3):
        for shd in (shd_drift, shd_confounders):
            assert shd(g1, g2) == shd(g2, g1)
            assert shd(g1, g1) == 0
            assert shd(g1, g3) <= shd(g1, g2) + shd(g2, g3)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            shd_drift(_graph(2), _graph(3))


class TestScores:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 3))
        assert mae(x, x) == 0
        assert pearson_corr(x, x) == pytest.approx(1.0)

    def test_shift(self):
        x = np.random.default_rng(1).normal(size=(3, 3))
        assert mae(x + 0.7, x) == pytest.approx(0.7)
        assert pearson_corr(x + 0.7, x) == pytest.approx(1.0)

    def test_undefined_correlation(self):
        assert mae(np.eye(2), np.zeros((2, 2))) == 0.5
        with pytest.raises(ValueError):
            pearson_corr(np.eye(2), np.zeros((2, 2)))

    def test_matches_numpy(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        assert pearson_corr(a, b) == pytest.approx(np.corrcoef(a.ravel(), b.ravel())[0, 1], rel=1e-12)
