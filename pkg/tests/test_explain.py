"""Walk, mask, and attribution tests against closed-form oracles."""

import numpy as np
import pytest

from scalegnn.explain import (
    ContractError,
    ConvergenceError,
    GraphExplanation,
    RandomWalker,
    attribute_features,
    deeplift_attribute,
    deeplift_output_delta,
    dot_from_json,
    explain_graph,
    explain_node,
    fold_batch_norm,
    rwr,
    to_dot,
    top_k_nodes,
    undirected_mask_scores,
)
from scalegnn.models import MLP
from scalegnn.sparse import SparseMatrix


def uniform_walk_support(edges, n):
    """Row-stochastic uniform transition over edges plus self-loops."""
    src = [u for u, v in edges] + [v for u, v in edges] + list(range(n))
    dst = [v for u, v in edges] + [u for u, v in edges] + list(range(n))
    pattern = SparseMatrix.from_coo(n, n, src, dst, np.ones(len(src)))
    deg = pattern.row_sums()
    vals = pattern.values / deg[pattern.row_index()]
    return pattern.replace_values(vals)


# ---------------------------------------------------------------------------
# random walk with restart


def test_rwr_two_node_closed_form():
    """Hop graph 0<->1: r = (1/(1+d), d/(1+d)); d = 0.5 gives (2/3, 1/3)."""
    w = SparseMatrix.from_coo(2, 2, [0, 1], [1, 0], [1.0, 1.0])
    r = rwr(w, np.array([1.0, 0.0]), d=0.5)
    assert np.allclose(r, [2.0 / 3.0, 1.0 / 3.0], atol=1e-9)
    for d in (0.1, 0.55, 0.9):
        r = rwr(w, np.array([1.0, 0.0]), d=d)
        assert np.allclose(r, [1.0 / (1.0 + d), d / (1.0 + d)], atol=1e-9)


def test_rwr_is_fixed_point_and_distribution():
    a_hat = uniform_walk_support([(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)], 5)
    w = a_hat.transpose().column_normalized()
    r0 = np.zeros(5)
    r0[2] = 1.0
    r = rwr(w, r0, d=0.85)
    residual = np.max(np.abs(r - (0.15 * r0 + 0.85 * w.matvec(r))))
    assert residual < 1e-9
    assert abs(r.sum() - 1.0) < 1e-9
    assert np.all(r >= 0.0)
    assert r[2] >= 0.15  # restart mass keeps the target prominent


def test_rwr_contract_checks():
    w = SparseMatrix.from_coo(2, 2, [0, 1], [1, 0], [1.0, 1.0])
    with pytest.raises(ContractError):
        rwr(w, np.array([0.5, 0.2]), d=0.5)  # not a distribution
    with pytest.raises(ContractError):
        rwr(w, np.array([1.0, 0.0]), d=0.0)
    with pytest.raises(ContractError):
        rwr(w, np.array([1.0, 0.0]), d=1.0)
    bad = SparseMatrix.from_coo(2, 2, [0, 1], [1, 0], [0.7, 1.0])
    with pytest.raises(ContractError):
        rwr(bad, np.array([1.0, 0.0]), d=0.5)


def test_rwr_iteration_budget():
    a_hat = uniform_walk_support([(i, i + 1) for i in range(30)], 31)
    w = a_hat.transpose().column_normalized()
    r0 = np.zeros(31)
    r0[0] = 1.0
    with pytest.raises(ConvergenceError):
        rwr(w, r0, d=0.9, iters=3)


def test_walker_validates_row_sums():
    pattern = SparseMatrix.from_coo(2, 2, [0, 0, 1], [0, 1, 1],
                                    [0.5, 0.5, 1.0])
    RandomWalker(pattern, np.array([0.5, 0.5, 1.0]), d=0.5)
    with pytest.raises(ContractError):
        RandomWalker(pattern, np.array([0.9, 0.5, 1.0]), d=0.5)


# ---------------------------------------------------------------------------
# top-k and node explanations


def test_top_k_ties_and_target():
    scores = np.array([5.0, 3.0, 3.0, 1.0])
    assert top_k_nodes(scores, 2, target=0) == [0, 1]
    # tie between 1 and 2 resolves to the smaller id
    assert top_k_nodes(scores, 3, target=0) == [0, 1, 2]
    # low-scoring target is forced in
    assert set(top_k_nodes(scores, 2, target=3)) == {0, 3}
    assert top_k_nodes(scores, 1, target=3) == [3]


def test_explain_node_structure():
    edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6)]
    a_hat = uniform_walk_support(edges, 7)
    walker = RandomWalker(a_hat, a_hat.values, d=0.55)
    ex = explain_node(walker, target=0, k=5, prediction=1)
    assert ex.target == 0 and ex.prediction == 1
    assert len(ex.selected_nodes) == 5
    assert 0 in ex.selected_nodes
    chosen = set(ex.selected_nodes)
    real = {(min(u, v), max(u, v)) for u, v in edges}
    for u, v in ex.selected_pairs:
        assert u < v and (u, v) in real
        assert u in chosen and v in chosen
    # pair score = sum of both directed arc importances p_v[i] * a[i, j]
    p = ex.node_scores
    u, v = ex.selected_pairs[0]
    dense = a_hat.to_dense()
    expect = p[u] * dense[u, v] + p[v] * dense[v, u]
    assert ex.pair_scores[(u, v)] == pytest.approx(expect, abs=1e-12)


def test_explain_node_locality():
    """Motif-adjacent nodes should outrank far-away nodes in the walk."""
    chain = [(i, i + 1) for i in range(20)]
    a_hat = uniform_walk_support(chain, 21)
    walker = RandomWalker(a_hat, a_hat.values, d=0.55)
    ex = explain_node(walker, target=10, k=5)
    assert set(ex.selected_nodes) <= set(range(5, 16))


# ---------------------------------------------------------------------------
# graph explanations


def block_support():
    # one graph occupying nodes 2..5 of a 6-node support, plus self-loops
    edges = [(0, 1), (2, 3), (3, 4), (2, 4), (4, 5)]
    return uniform_walk_support(edges, 6)


def test_undirected_mask_scores_mean_of_arcs():
    sp = block_support()
    scores = np.zeros(sp.nnz)
    rows = sp.row_index()
    for pos in range(sp.nnz):
        u, v = rows[pos], sp.indices[pos]
        scores[pos] = 10.0 * min(u, v) + max(u, v)  # symmetric by design
    pairs, vals = undirected_mask_scores(sp, scores, 2, 6)
    assert pairs == [(0, 1), (0, 2), (1, 2), (2, 3)]  # local ids
    assert np.allclose(vals, [23.0, 24.0, 34.0, 45.0])


def test_undirected_mask_scores_detects_leaks():
    sp = block_support()
    with pytest.raises(ContractError):
        undirected_mask_scores(sp, np.zeros(sp.nnz), 1, 3)


def test_explain_graph_strict_threshold():
    pairs = [(0, 1), (1, 2), (2, 3)]
    scores = np.array([0.9, 0.5, 0.2])
    ex = explain_graph(pairs, scores, threshold=0.5)
    assert ex.selected_pairs == [(0, 1)]  # 0.5 is not strictly above


# ---------------------------------------------------------------------------
# DeepLIFT


def test_deeplift_linear_exactness():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=(1, 3))
    layers = [(w, b)]
    x = rng.normal(size=(4, 6))
    ref = rng.normal(size=6)
    phi = deeplift_attribute(layers, x, ref, target_class=2)
    assert np.allclose(phi, (x - ref) * w[:, 2], atol=1e-12)
    delta = deeplift_output_delta(layers, x, ref, 2)
    assert np.allclose(phi.sum(axis=1), delta, atol=1e-12)


def test_deeplift_two_layer_hand_oracle():
    # relu kink between layers: multiplier = (1 - 0) / (1 - (-1)) = 0.5
    layers = [(np.array([[1.0]]), np.array([[-1.0]])),
              (np.array([[3.0]]), np.array([[0.7]]))]
    phi = deeplift_attribute(layers, np.array([[2.0]]), np.zeros(1), 0)
    assert phi[0, 0] == pytest.approx(3.0, abs=1e-12)
    delta = deeplift_output_delta(layers, np.array([[2.0]]), np.zeros(1), 0)
    assert delta[0] == pytest.approx(3.0, abs=1e-12)


def test_deeplift_identical_input_and_reference():
    rng = np.random.default_rng(1)
    layers = [(rng.normal(size=(4, 4)), rng.normal(size=(1, 4))),
              (rng.normal(size=(4, 2)), rng.normal(size=(1, 2)))]
    x = rng.normal(size=(3, 4))
    phi = deeplift_attribute(layers, x, x[0], target_class=0)
    assert np.all(np.isfinite(phi))
    assert np.allclose(phi[0], 0.0)


def test_fold_batch_norm_matches_eval_forward():
    rng = np.random.default_rng(2)
    mlp = MLP(rng, in_dim=5, hidden=8, out_dim=3, layers=3)
    for bn in mlp.bns:
        bn.running_mean[:] = rng.normal(size=bn.running_mean.shape)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, size=bn.gamma.data.shape)
        bn.beta.data[:] = rng.normal(size=bn.beta.data.shape)
    x = rng.normal(size=(6, 5))
    from scalegnn.autodiff import tensor
    direct = mlp.forward(tensor(x), training=False).data
    layers = fold_batch_norm(mlp)
    a = x
    for i, (w, b) in enumerate(layers):
        a = a @ w + b
        if i < len(layers) - 1:
            a = np.maximum(a, 0.0)
    assert np.max(np.abs(a - direct)) < 1e-10


def test_summation_to_delta_hundred_instances():
    rng = np.random.default_rng(3)
    mlp = MLP(rng, in_dim=7, hidden=16, out_dim=4, layers=3)
    for bn in mlp.bns:
        bn.running_mean[:] = rng.normal(size=bn.running_mean.shape)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)
    layers = fold_batch_norm(mlp)
    x = rng.normal(size=(100, 7))
    ref = np.zeros(7)
    for cls in range(4):
        phi = deeplift_attribute(layers, x, ref, target_class=cls)
        delta = deeplift_output_delta(layers, x, ref, cls)
        gap = np.max(np.abs(phi.sum(axis=1) - delta))
        assert gap < 1e-6, f"class {cls}: summation-to-delta off by {gap}"


def test_attribute_features_default_reference():
    rng = np.random.default_rng(4)
    mlp = MLP(rng, in_dim=5, hidden=8, out_dim=2, layers=2)
    x = rng.normal(size=(3, 5))
    phi = attribute_features(mlp, x, target_class=1)
    layers = fold_batch_norm(mlp)
    delta = deeplift_output_delta(layers, x, np.zeros(5), 1)
    assert np.allclose(phi.sum(axis=1), delta, atol=1e-8)


# ---------------------------------------------------------------------------
# DOT rendering


def test_to_dot_node_explanation():
    edges = [(0, 1), (0, 2), (1, 2)]
    a_hat = uniform_walk_support(edges, 3)
    walker = RandomWalker(a_hat, a_hat.values, d=0.55)
    ex = explain_node(walker, 0, 3, prediction=2)
    text = to_dot(ex)
    assert text.startswith("graph explanation {")
    assert "fillcolor=gold" in text  # the target
    assert "penwidth=" in text
    assert to_dot(ex) == text  # deterministic
    assert dot_from_json(ex.to_json()) == text


def test_to_dot_graph_explanation():
    ex = GraphExplanation(graph_index=1, prediction=0, threshold=0.5,
                          pairs=[(0, 1), (1, 2)],
                          scores=np.array([0.9, 0.1]),
                          selected_pairs=[(0, 1)])
    text = to_dot(ex)
    assert "color=crimson" in text and "color=gray60" in text
    assert dot_from_json(ex.to_json()) == text
