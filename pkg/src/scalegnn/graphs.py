"""Graph and dataset containers, adjacency construction, JSON persistence.

Graphs store directed arcs; undirected edges appear as both (u, v) and
(v, u). Ground-truth explanation masks, when present, mark motif membership
per node and per arc (both arcs of an undirected motif edge are marked).

Datasets bundle graphs with a task tag and train/val/test index splits over
nodes (single-graph node classification) or over graphs (graph
classification). Splits follow an 8:1:1 ratio up to rounding.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .sparse import SparseMatrix

NODE_TASK = "node-classification"
GRAPH_TASK = "graph-classification"

SCHEMA_VERSION = 1


class GraphError(ValueError):
    """Graph structure violates an invariant (duplicate arc, bad index...)."""


class ParseError(ValueError):
    """Dataset file is malformed; message carries locating context."""


@dataclass
class Graph:
    """One attributed graph.

    edges: (E, 2) int64 directed arc list.
    features: (num_nodes, d) float64.
    node_labels: (num_nodes,) int64 or None.
    graph_label: int or None.
    gt_node_mask: (num_nodes,) bool or None, motif membership.
    gt_edge_mask: (E,) bool or None, per-arc motif membership.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    node_labels: np.ndarray = None
    graph_label: int = None
    gt_node_mask: np.ndarray = None
    gt_edge_mask: np.ndarray = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise GraphError(
                f"features must be ({self.num_nodes}, d), "
                f"got {self.features.shape}")
        e = self.edges
        if e.size:
            if e.min() < 0 or e.max() >= self.num_nodes:
                raise GraphError("arc endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise GraphError("self-loop arcs are not stored explicitly")
            keys = e[:, 0] * self.num_nodes + e[:, 1]
            if np.unique(keys).size != keys.size:
                raise GraphError("duplicate directed arc")
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
            if self.node_labels.shape != (self.num_nodes,):
                raise GraphError("node_labels length mismatch")
        if self.graph_label is not None:
            self.graph_label = int(self.graph_label)
        if self.gt_node_mask is not None:
            self.gt_node_mask = np.asarray(self.gt_node_mask, dtype=bool)
            if self.gt_node_mask.shape != (self.num_nodes,):
                raise GraphError("gt_node_mask length mismatch")
        if self.gt_edge_mask is not None:
            self.gt_edge_mask = np.asarray(self.gt_edge_mask, dtype=bool)
            if self.gt_edge_mask.shape != (self.edges.shape[0],):
                raise GraphError("gt_edge_mask length mismatch")

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def undirected_pairs(self):
        """Canonical (min, max) pairs of the stored arcs, deduplicated."""
        if not self.edges.size:
            return np.zeros((0, 2), dtype=np.int64)
        lo = np.minimum(self.edges[:, 0], self.edges[:, 1])
        hi = np.maximum(self.edges[:, 0], self.edges[:, 1])
        return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass
class Dataset:
    task: str
    graphs: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in (NODE_TASK, GRAPH_TASK):
            raise GraphError(f"unknown task {self.task!r}")
        if self.task == NODE_TASK and len(self.graphs) != 1:
            raise GraphError("node classification datasets hold one graph")
        n = self.split_universe()
        seen = np.zeros(n, dtype=bool)
        for name in ("train", "val", "test"):
            if name not in self.splits:
                raise GraphError(f"missing split {name!r}")
            idx = np.asarray(self.splits[name], dtype=np.int64)
            self.splits[name] = idx
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise GraphError(f"split {name!r} index out of range")
            if np.any(seen[idx]):
                raise GraphError("splits overlap")
            seen[idx] = True
        total = sum(len(self.splits[k]) for k in ("train", "val", "test"))
        ideal = {"train": 0.8 * total, "val": 0.1 * total, "test": 0.1 * total}
        for name, want in ideal.items():
            if abs(len(self.splits[name]) - want) > 1.0:
                raise GraphError(
                    f"split {name!r} size {len(self.splits[name])} is not "
                    f"8:1:1 of {total} within rounding")

    def split_universe(self):
        """Number of indexable units: nodes for node tasks, else graphs."""
        if self.task == NODE_TASK:
            return self.graphs[0].num_nodes
        return len(self.graphs)

    @property
    def num_classes(self):
        if self.task == NODE_TASK:
            return int(self.graphs[0].node_labels.max()) + 1
        return max(g.graph_label for g in self.graphs) + 1

    @property
    def feature_dim(self):
        return self.graphs[0].features.shape[1]


def make_splits(count, rng):
    """Shuffled 8:1:1 index split; val and test get round(count/10) each."""
    perm = rng.permutation(count)
    n_val = int(round(count * 0.1))
    n_test = int(round(count * 0.1))
    n_train = count - n_val - n_test
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


# ---------------------------------------------------------------------------
# adjacency


def build_adjacency(graph, add_self_loops=True):
    """Binary adjacency of the stored arcs, optionally with unit self-loops."""
    src = graph.edges[:, 0]
    dst = graph.edges[:, 1]
    if add_self_loops:
        loops = np.arange(graph.num_nodes, dtype=np.int64)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
    vals = np.ones(src.size)
    return SparseMatrix.from_coo(graph.num_nodes, graph.num_nodes, src, dst,
                                 vals)


def symmetric_normalize(adj):
    """D^{-1/2} A D^{-1/2} with D the row-sum degrees of A.

    Expects a symmetric non-negative matrix (adjacency with self-loops);
    zero-degree rows raise since their scaling is undefined.
    """
    deg = adj.row_sums()
    if np.any(deg <= 0.0):
        raise GraphError("zero-degree node; add self-loops before normalizing")
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = adj.values * inv_sqrt[adj.row_index()] * inv_sqrt[adj.indices]
    return adj.replace_values(vals)


def khop_neighborhood(graph, center, k):
    """Node ids within k undirected hops of center, center included."""
    if not 0 <= center < graph.num_nodes:
        raise GraphError(f"center {center} out of range")
    adj = build_adjacency(graph, add_self_loops=False)
    frontier = {int(center)}
    seen = set(frontier)
    for _ in range(k):
        nxt = set()
        for u in frontier:
            lo, hi = adj.indptr[u], adj.indptr[u + 1]
            nxt.update(int(c) for c in adj.indices[lo:hi])
        frontier = nxt - seen
        if not frontier:
            break
        seen |= frontier
    return seen


def connected_component(num_nodes, edges, start):
    """Nodes reachable from start over the given undirected arc list."""
    nbrs = {}
    for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        nbrs.setdefault(int(u), []).append(int(v))
        nbrs.setdefault(int(v), []).append(int(u))
    seen = {int(start)}
    stack = [int(start)]
    while stack:
        u = stack.pop()
        for v in nbrs.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


# ---------------------------------------------------------------------------
# JSON persistence


def _graph_to_json(g):
    out = {
        "num_nodes": g.num_nodes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "node_labels": None if g.node_labels is None else g.node_labels.tolist(),
        "graph_label": g.graph_label,
        "gt_node_mask": None if g.gt_node_mask is None
        else g.gt_node_mask.astype(int).tolist(),
        "gt_edge_mask": None if g.gt_edge_mask is None
        else g.gt_edge_mask.astype(int).tolist(),
    }
    return out


def _graph_from_json(obj, where):
    try:
        return Graph(
            num_nodes=int(obj["num_nodes"]),
            edges=np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2),
            features=obj["features"],
            node_labels=obj.get("node_labels"),
            graph_label=obj.get("graph_label"),
            gt_node_mask=obj.get("gt_node_mask"),
            gt_edge_mask=obj.get("gt_edge_mask"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def save_dataset(ds, path):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "task": ds.task,
        "splits": {k: v.tolist() for k, v in ds.splits.items()},
        "graphs": [_graph_to_json(g) for g in ds.graphs],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_dataset(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(
            f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for key in ("task", "splits", "graphs"):
        if key not in payload:
            raise ParseError(f"{path}: missing key {key!r}")
    graphs = [
        _graph_from_json(obj, f"{path}: graphs[{i}]")
        for i, obj in enumerate(payload["graphs"])
    ]
    try:
        return Dataset(task=payload["task"], graphs=graphs,
                       splits=dict(payload["splits"]))
    except (GraphError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
