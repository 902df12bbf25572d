"""Instant explanations from trained students. No gradients, no retraining.

Node predictions: random walk with restart over the node student's learned
row-stochastic transition matrix A_hat. The walk distribution

    r <- (1 - d) r0 + d W r,      W = column-normalized A_hat^T,

converges geometrically for jump chance d < 1. Node importance is the
stationary visit probability, arc importance P_E = diag(P_V) A_hat, and the
explanation keeps the top-k nodes (target forced in, ties broken toward the
lower node id) plus every existing edge among them.

Graph predictions: the graph student's per-arc sigmoid mask, averaged over
the two directions of each undirected edge; edges with score strictly above
a threshold form the explanation.

Feature attributions: DeepLIFT rescale rule on the feature student after
folding batch norm into the adjacent linear layers. Attributions satisfy
summation-to-delta: they sum to f(x) - f(reference) for the explained class.
"""

from dataclasses import dataclass, field

import numpy as np


class ConvergenceError(RuntimeError):
    """Iterative solver failed to reach tolerance within its budget."""


class ContractError(ValueError):
    """A stochastic-matrix or distribution precondition does not hold."""


# ---------------------------------------------------------------------------
# random walk with restart


def rwr(transition, restart, d, iters=1000, tol=1e-10):
    """Fixed point of r = (1-d) restart + d W r.

    transition must be column-stochastic (each column sums to 1) and restart
    a probability vector; both are validated. Returns the visit distribution.
    """
    if not 0.0 < d < 1.0:
        raise ContractError(f"jump chance d must lie in (0, 1), got {d}")
    restart = np.asarray(restart, dtype=np.float64).ravel()
    if restart.min() < 0.0 or abs(restart.sum() - 1.0) > 1e-8:
        raise ContractError("restart must be a probability vector")
    csums = transition.col_sums()
    if np.max(np.abs(csums - 1.0)) > 1e-8:
        raise ContractError("transition matrix must be column-stochastic")
    mat = transition.to_scipy()
    r = restart.copy()
    for _ in range(iters):
        nxt = (1.0 - d) * restart + d * (mat @ r)
        delta = np.max(np.abs(nxt - r))
        r = nxt
        if delta < tol:
            return r
    raise ConvergenceError(
        f"random walk did not reach tol={tol} in {iters} iterations")


class RandomWalker:
    """Precomputed walk structures for one learned transition matrix.

    a_hat is the node student's row-stochastic arc-weight matrix on the
    support pattern (self-loops included); the walk uses its transpose,
    column-normalized to wash out float drift.
    """

    def __init__(self, support, arc_scores, d, iters=1000, tol=1e-10):
        a_hat = support.replace_values(np.asarray(arc_scores, np.float64))
        rows = a_hat.row_sums()
        if np.max(np.abs(rows - 1.0)) > 1e-6:
            raise ContractError("arc scores must be row-stochastic")
        self.a_hat = a_hat
        self.transition = a_hat.transpose().column_normalized()
        self.d = d
        self.iters = iters
        self.tol = tol

    def visit_probs(self, target):
        restart = np.zeros(self.a_hat.rows)
        restart[target] = 1.0
        return rwr(self.transition, restart, self.d, self.iters, self.tol)


def top_k_nodes(scores, k, target):
    """k highest-scoring node ids; the target is always kept and ties favor
    the lower id. Returned in rank order."""
    n = scores.shape[0]
    if not 0 <= target < n:
        raise ContractError(f"target {target} out of range")
    k = min(k, n)
    order = np.lexsort((np.arange(n), -scores))
    picked = [int(target)]
    for node in order:
        if len(picked) >= k:
            break
        if node != target:
            picked.append(int(node))
    rank = {v: i for i, v in enumerate(order)}
    picked.sort(key=lambda v: rank[v])
    return picked


@dataclass
class NodeExplanation:
    target: int
    prediction: int
    k: int
    node_scores: np.ndarray
    selected_nodes: list
    selected_pairs: list
    pair_scores: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "kind": "node",
            "target": self.target,
            "prediction": self.prediction,
            "k": self.k,
            "selected_nodes": list(self.selected_nodes),
            "selected_edges": [list(p) for p in self.selected_pairs],
            "node_scores": {str(v): float(self.node_scores[v])
                            for v in self.selected_nodes},
            "edge_scores": {f"{u}-{v}": s
                            for (u, v), s in sorted(self.pair_scores.items())},
        }


def explain_node(walker, target, k, prediction=None):
    """Run the walk from target and assemble the top-k explanation.

    Arc importances follow P_E = diag(P_V) A_hat; the reported per-edge
    score of an undirected pair sums its two arc importances. Only edges
    already present in the graph (and no self-loops) are selected.
    """
    p_v = walker.visit_probs(target)
    a = walker.a_hat
    p_e = p_v[a.row_index()] * a.values
    selected = top_k_nodes(p_v, k, target)
    chosen = np.zeros(a.rows, dtype=bool)
    chosen[selected] = True
    pair_scores = {}
    rows = a.row_index()
    inside = chosen[rows] & chosen[a.indices] & (rows != a.indices)
    for arc in np.flatnonzero(inside):
        u, v = int(rows[arc]), int(a.indices[arc])
        key = (min(u, v), max(u, v))
        pair_scores[key] = pair_scores.get(key, 0.0) + float(p_e[arc])
    pairs = sorted(pair_scores, key=lambda p: (-pair_scores[p], p))
    return NodeExplanation(
        target=int(target), prediction=-1 if prediction is None
        else int(prediction), k=int(k), node_scores=p_v,
        selected_nodes=selected, selected_pairs=pairs,
        pair_scores=pair_scores)


# ---------------------------------------------------------------------------
# graph explanations from edge masks


@dataclass
class GraphExplanation:
    graph_index: int
    prediction: int
    threshold: float
    pairs: list
    scores: np.ndarray
    selected_pairs: list

    def to_json(self):
        return {
            "kind": "graph",
            "graph_index": self.graph_index,
            "prediction": self.prediction,
            "threshold": self.threshold,
            "edges": [[int(u), int(v), float(s)]
                      for (u, v), s in zip(self.pairs, self.scores)],
            "selected_edges": [list(p) for p in self.selected_pairs],
        }


def undirected_mask_scores(support, arc_scores, node_lo, node_hi):
    """Average the two directed mask values of every undirected edge whose
    endpoints lie in [node_lo, node_hi); self-loop arcs are skipped.

    Returns (pairs, scores) with pairs in graph-local ids, sorted.
    """
    lo_ptr, hi_ptr = support.indptr[node_lo], support.indptr[node_hi]
    rows = support.row_index()[lo_ptr:hi_ptr]
    cols = support.indices[lo_ptr:hi_ptr]
    vals = np.asarray(arc_scores, np.float64)[lo_ptr:hi_ptr]
    keep = rows != cols
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    if np.any(cols < node_lo) or np.any(cols >= node_hi):
        raise ContractError("graph block has arcs leaving its node range")
    lo = np.minimum(rows, cols) - node_lo
    hi = np.maximum(rows, cols) - node_lo
    table = {}
    for u, v, s in zip(lo, hi, vals):
        key = (int(u), int(v))
        acc = table.get(key)
        table[key] = (s, 1) if acc is None else (acc[0] + s, acc[1] + 1)
    pairs = sorted(table)
    scores = np.array([table[p][0] / table[p][1] for p in pairs])
    return pairs, scores


def explain_graph(pairs, scores, threshold, graph_index=0, prediction=None):
    """Edges scoring strictly above threshold form the explanation."""
    sel = [p for p, s in zip(pairs, scores) if s > threshold]
    return GraphExplanation(
        graph_index=int(graph_index),
        prediction=-1 if prediction is None else int(prediction),
        threshold=float(threshold), pairs=list(pairs), scores=scores,
        selected_pairs=sel)


# ---------------------------------------------------------------------------
# DeepLIFT feature attributions


def fold_batch_norm(mlp):
    """Fold evaluation-mode batch norm into the preceding linear layers.

    For y = gamma * (xW + b - mean) / sqrt(var + eps) + beta the folded
    layer is W' = W * s, b' = (b - mean) * s + beta with
    s = gamma / sqrt(var + eps). Returns [(W, b), ...] for the whole stack.
    """
    layers = []
    for i, lin in enumerate(mlp.linears):
        w = lin.w.data.copy()
        b = (np.zeros((1, w.shape[1])) if lin.b is None else lin.b.data.copy())
        if mlp.bns and i < len(mlp.bns):
            bn = mlp.bns[i]
            s = bn.gamma.data / np.sqrt(bn.running_var + bn.eps)
            w *= s
            b = (b - bn.running_mean) * s + bn.beta.data
        layers.append((w, b))
    return layers


def _forward_preacts(layers, x):
    pre = []
    a = x
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    return pre


def deeplift_attribute(layers, x, reference, target_class,
                       pass_through_tol=1e-7):
    """Rescale-rule DeepLIFT attributions for one class.

    x: (n, d) input rows; reference: (d,) or (n, d) baseline. Returns an
    (n, d) attribution matrix whose row sums equal the per-row output delta
    f(x)[:, class] - f(reference)[:, class] (summation-to-delta).

    Nonlinearity multipliers are delta-out / delta-in; where |delta-in|
    drops below pass_through_tol the multiplier passes through as 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim == 1:
        ref = ref[None, :]
    ref = np.broadcast_to(ref, x.shape)
    pre_x = _forward_preacts(layers, x)
    pre_r = _forward_preacts(layers, ref)
    w_last, _ = layers[-1]
    m = np.zeros((x.shape[0], w_last.shape[1]))
    m[:, target_class] = 1.0
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        m = m @ w.T
        if i > 0:
            dz = pre_x[i - 1] - pre_r[i - 1]
            da = np.maximum(pre_x[i - 1], 0.0) - np.maximum(pre_r[i - 1], 0.0)
            small = np.abs(dz) < pass_through_tol
            ratio = np.where(small, 1.0, da / np.where(small, 1.0, dz))
            m = m * ratio
    return m * (x - ref)


def deeplift_output_delta(layers, x, reference, target_class):
    """f(x) - f(reference) for the chosen class, per input row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim == 1:
        ref = ref[None, :]
    ref = np.broadcast_to(ref, x.shape)
    zx = _forward_preacts(layers, x)[-1]
    zr = _forward_preacts(layers, ref)[-1]
    return zx[:, target_class] - zr[:, target_class]


def attribute_features(mlp, x, target_class, reference=None):
    """Convenience wrapper: fold batch norm, default all-zeros reference."""
    layers = fold_batch_norm(mlp)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if reference is None:
        reference = np.zeros(x.shape[1])
    return deeplift_attribute(layers, x, reference, target_class)


# ---------------------------------------------------------------------------
# DOT export


def _pen(score, lo, hi):
    if hi <= lo:
        return 2.0
    return 0.5 + 4.5 * (score - lo) / (hi - lo)


def dot_from_json(payload):
    """Rebuild an explanation from its JSON form and render it as DOT."""
    kind = payload.get("kind")
    if kind == "node":
        pair_scores = {
            tuple(int(x) for x in key.split("-")): float(s)
            for key, s in payload.get("edge_scores", {}).items()}
        explanation = NodeExplanation(
            target=int(payload["target"]),
            prediction=int(payload.get("prediction", -1)),
            k=int(payload.get("k", 0)),
            node_scores=np.zeros(0),
            selected_nodes=[int(v) for v in payload["selected_nodes"]],
            selected_pairs=[tuple(int(x) for x in p)
                            for p in payload["selected_edges"]],
            pair_scores=pair_scores)
    elif kind == "graph":
        edges = payload.get("edges", [])
        explanation = GraphExplanation(
            graph_index=int(payload.get("graph_index", 0)),
            prediction=int(payload.get("prediction", -1)),
            threshold=float(payload.get("threshold", 0.5)),
            pairs=[(int(u), int(v)) for u, v, _ in edges],
            scores=np.array([float(s) for _, _, s in edges]),
            selected_pairs=[tuple(int(x) for x in p)
                            for p in payload["selected_edges"]])
    else:
        raise ContractError(f"unknown explanation kind {kind!r}")
    return to_dot(explanation)


def to_dot(explanation):
    """Graphviz text for an explanation; edge penwidth scales with score."""
    lines = ["graph explanation {", "  node [shape=circle, fontsize=10];"]
    if isinstance(explanation, NodeExplanation):
        for v in explanation.selected_nodes:
            extra = ", style=filled, fillcolor=gold" \
                if v == explanation.target else ""
            lines.append(f'  n{v} [label="{v}"{extra}];')
        vals = list(explanation.pair_scores.values()) or [0.0]
        lo, hi = min(vals), max(vals)
        for (u, v) in explanation.selected_pairs:
            s = explanation.pair_scores[(u, v)]
            lines.append(
                f'  n{u} -- n{v} [penwidth={_pen(s, lo, hi):.2f}, '
                f'label="{s:.3f}"];')
    elif isinstance(explanation, GraphExplanation):
        nodes = sorted({v for p in explanation.pairs for v in p})
        chosen = set(explanation.selected_pairs)
        for v in nodes:
            lines.append(f'  n{v} [label="{v}"];')
        lo = float(np.min(explanation.scores)) if len(explanation.scores) \
            else 0.0
        hi = float(np.max(explanation.scores)) if len(explanation.scores) \
            else 1.0
        for (u, v), s in zip(explanation.pairs, explanation.scores):
            style = ", color=crimson" if (u, v) in chosen else ", color=gray60"
            lines.append(
                f'  n{u} -- n{v} [penwidth={_pen(float(s), lo, hi):.2f}'
                f'{style}, label="{float(s):.3f}"];')
    else:
        raise TypeError(f"cannot render {type(explanation).__name__}")
    lines.append("}")
    return "\n".join(lines) + "\n"
