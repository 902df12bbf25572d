"""Synthetic explanation benchmarks with ground-truth motifs.

Five generators, all deterministic in the config seed:

- ba-shapes: 300-node Barabasi-Albert base, 80 house motifs bridged to it,
  plus 10% random perturbation edges. Labels: 0 base, 1 house top, 2 house
  middle, 3 house bottom.
- ba-community: two ba-shapes halves (labels 4..7 in the second), Gaussian
  features whose community means differ by a configurable offset, and random
  inter-community edges.
- tree-cycle / tree-grid: 511-node balanced binary tree base with 60 six-node
  cycles or 80 3x3 grids attached. Labels: 0 tree, 1 motif.
- ba-2motifs: 1000 graphs, each a 20-node BA tree (attachment m=1) bridged to
  a house (label 0) or five-node cycle (label 1).

Perturbation edge counts are round(perturb_ratio * total motif edges) and
their endpoints are drawn from base nodes only: an edge touching a motif
would open a real message path that the ground-truth masks cannot mark
positive, making the labels ambiguous. Motifs attach through a single
bridge edge from a fixed local anchor node to a uniformly chosen base node;
bridge and perturbation edges are ground-truth negative, motif edges
positive (on both arcs).
"""

from dataclasses import dataclass, replace

import numpy as np

from .graphs import Dataset, Graph, GRAPH_TASK, NODE_TASK, make_splits


@dataclass(frozen=True)
class GenConfig:
    """Generator knobs. base_nodes is the BA base size (or tree size, which
    must be 2^h - 1); num_graphs/graph_base_nodes only apply to ba-2motifs."""

    seed: int = 0
    base_nodes: int = 300
    motif_count: int = 80
    attach_m: int = 5
    perturb_ratio: float = 0.1
    feature_dim: int = 10
    feature_offset: float = 1.0
    num_graphs: int = 1000
    graph_base_nodes: int = 20


@dataclass(frozen=True)
class MotifSpec:
    name: str
    size: int
    edges: tuple
    roles: tuple
    anchor: int


HOUSE = MotifSpec(
    name="house", size=5,
    edges=((0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)),
    roles=(1, 2, 2, 3, 3), anchor=4)
CYCLE6 = MotifSpec(
    name="cycle6", size=6,
    edges=((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)),
    roles=(1,) * 6, anchor=0)
GRID3X3 = MotifSpec(
    name="grid3x3", size=9,
    edges=((0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8),
           (0, 3), (3, 6), (1, 4), (4, 7), (2, 5), (5, 8)),
    roles=(1,) * 9, anchor=0)
CYCLE5 = MotifSpec(
    name="cycle5", size=5,
    edges=((0, 1), (1, 2), (2, 3), (3, 4), (4, 0)),
    roles=(1,) * 5, anchor=0)

DATASET_DEFAULTS = {
    "ba-shapes": GenConfig(),
    "ba-community": GenConfig(),
    "tree-cycle": GenConfig(base_nodes=511, motif_count=60),
    "tree-grid": GenConfig(base_nodes=511, motif_count=80),
    "ba-2motifs": GenConfig(base_nodes=20, attach_m=1, perturb_ratio=0.0),
}

MOTIF_OF_DATASET = {
    "ba-shapes": HOUSE,
    "ba-community": HOUSE,
    "tree-cycle": CYCLE6,
    "tree-grid": GRID3X3,
}


def default_config(name, seed=0):
    if name not in DATASET_DEFAULTS:
        raise ValueError(f"unknown dataset {name!r}; choose from "
                         f"{sorted(DATASET_DEFAULTS)}")
    return replace(DATASET_DEFAULTS[name], seed=seed)


# ---------------------------------------------------------------------------
# building blocks


def ba_edges(n, m, rng):
    """Barabasi-Albert undirected edge list: seed clique of m nodes, then
    each new node attaches to m distinct earlier nodes chosen with
    probability proportional to degree."""
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= m < n, got m={m}, n={n}")
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    repeated = [v for e in edges for v in e]
    for new in range(m, n):
        targets = set()
        while len(targets) < m:
            if repeated:
                targets.add(repeated[rng.integers(len(repeated))])
            else:
                targets.add(int(rng.integers(new)))
        for t in sorted(targets):
            edges.append((t, new))
            repeated.extend((t, new))
    return edges


def balanced_tree_edges(num_nodes):
    """Balanced binary tree on ids 0..num_nodes-1 (node i parents 2i+1,
    2i+2); num_nodes must be 2^h - 1 so the bottom level is full."""
    if num_nodes < 1 or (num_nodes + 1) & num_nodes != 0:
        raise ValueError(f"tree size must be 2^h - 1, got {num_nodes}")
    return [(i, c) for i in range(num_nodes)
            for c in (2 * i + 1, 2 * i + 2) if c < num_nodes]


class _Builder:
    """Accumulates an undirected edge list with duplicate protection."""

    def __init__(self, num_nodes):
        self.num_nodes = num_nodes
        self.edges = []
        self.gt = []
        self.seen = set()

    def add(self, u, v, gt):
        u, v = int(u), int(v)
        key = (min(u, v), max(u, v))
        if u == v or key in self.seen:
            raise ValueError(f"edge ({u}, {v}) invalid or duplicate")
        self.seen.add(key)
        self.edges.append((u, v))
        self.gt.append(gt)

    def add_random(self, count, rng, lo=0, hi=None, lo2=None, hi2=None):
        """count fresh random edges between [lo, hi) and [lo2, hi2)."""
        hi = self.num_nodes if hi is None else hi
        lo2 = lo if lo2 is None else lo2
        hi2 = hi if hi2 is None else hi2
        added = 0
        guard = 0
        while added < count:
            guard += 1
            if guard > 1000 * max(count, 1):
                raise RuntimeError("could not place random edges")
            u = int(rng.integers(lo, hi))
            v = int(rng.integers(lo2, hi2))
            key = (min(u, v), max(u, v))
            if u == v or key in self.seen:
                continue
            self.add(u, v, gt=False)
            added += 1

    def to_arcs(self):
        """(E*2, 2) arc array, both directions adjacent, plus per-arc gt."""
        arcs = np.empty((2 * len(self.edges), 2), dtype=np.int64)
        gt = np.empty(2 * len(self.edges), dtype=bool)
        for i, ((u, v), flag) in enumerate(zip(self.edges, self.gt)):
            arcs[2 * i] = (u, v)
            arcs[2 * i + 1] = (v, u)
            gt[2 * i] = gt[2 * i + 1] = flag
        return arcs, gt


def _attach_motifs(builder, labels, gt_node, motif, count, base_size,
                   attach_rng):
    """Plant `count` copies of motif after the base block, each bridged to a
    uniformly chosen base node from the motif's anchor."""
    for k in range(count):
        offset = base_size + k * motif.size
        for i, role in enumerate(motif.roles):
            labels[offset + i] = role
            gt_node[offset + i] = True
        for a, b in motif.edges:
            builder.add(offset + a, offset + b, gt=True)
        target = int(attach_rng.integers(base_size))
        builder.add(offset + motif.anchor, target, gt=False)


def _shapes_structure(cfg, ss):
    """Shared skeleton of ba-shapes (also one ba-community half)."""
    rng_base, rng_attach, rng_perturb = [np.random.default_rng(s)
                                         for s in ss.spawn(3)]
    n = cfg.base_nodes + cfg.motif_count * HOUSE.size
    builder = _Builder(n)
    for u, v in ba_edges(cfg.base_nodes, cfg.attach_m, rng_base):
        builder.add(u, v, gt=False)
    labels = np.zeros(n, dtype=np.int64)
    gt_node = np.zeros(n, dtype=bool)
    _attach_motifs(builder, labels, gt_node, HOUSE, cfg.motif_count,
                   cfg.base_nodes, rng_attach)
    n_perturb = int(round(cfg.perturb_ratio * cfg.motif_count
                          * len(HOUSE.edges)))
    builder.add_random(n_perturb, rng_perturb, lo=0, hi=cfg.base_nodes)
    return builder, labels, gt_node


# ---------------------------------------------------------------------------
# node classification datasets


def gen_ba_shapes(cfg=None):
    cfg = cfg or default_config("ba-shapes")
    ss = np.random.SeedSequence(cfg.seed)
    ss_struct, ss_split = ss.spawn(2)
    builder, labels, gt_node = _shapes_structure(cfg, ss_struct)
    arcs, gt_edge = builder.to_arcs()
    n = builder.num_nodes
    g = Graph(num_nodes=n, edges=arcs, features=np.ones((n, cfg.feature_dim)),
              node_labels=labels, gt_node_mask=gt_node, gt_edge_mask=gt_edge)
    splits = make_splits(n, np.random.default_rng(ss_split))
    return Dataset(task=NODE_TASK, graphs=[g], splits=splits)


def gen_ba_community(cfg=None):
    cfg = cfg or default_config("ba-community")
    ss = np.random.SeedSequence(cfg.seed)
    ss_a, ss_b, ss_inter, ss_feat, ss_split = ss.spawn(5)
    b_a, lab_a, gt_a = _shapes_structure(cfg, ss_a)
    b_b, lab_b, gt_b = _shapes_structure(cfg, ss_b)
    half = b_a.num_nodes
    n = 2 * half
    builder = _Builder(n)
    for (u, v), flag in zip(b_a.edges, b_a.gt):
        builder.add(u, v, flag)
    for (u, v), flag in zip(b_b.edges, b_b.gt):
        builder.add(u + half, v + half, flag)
    n_inter = int(round(cfg.perturb_ratio * 2 * cfg.motif_count
                        * len(HOUSE.edges)))
    builder.add_random(n_inter, np.random.default_rng(ss_inter),
                       lo=0, hi=cfg.base_nodes,
                       lo2=half, hi2=half + cfg.base_nodes)
    labels = np.concatenate([lab_a, lab_b + 4])
    gt_node = np.concatenate([gt_a, gt_b])
    rng_feat = np.random.default_rng(ss_feat)
    feats = rng_feat.normal(0.0, 1.0, size=(n, cfg.feature_dim))
    feats[half:] += cfg.feature_offset
    arcs, gt_edge = builder.to_arcs()
    g = Graph(num_nodes=n, edges=arcs, features=feats, node_labels=labels,
              gt_node_mask=gt_node, gt_edge_mask=gt_edge)
    splits = make_splits(n, np.random.default_rng(ss_split))
    return Dataset(task=NODE_TASK, graphs=[g], splits=splits)


def _gen_tree_motif(cfg, motif):
    ss = np.random.SeedSequence(cfg.seed)
    ss_attach, ss_perturb, ss_split = ss.spawn(3)
    n = cfg.base_nodes + cfg.motif_count * motif.size
    builder = _Builder(n)
    for u, v in balanced_tree_edges(cfg.base_nodes):
        builder.add(u, v, gt=False)
    labels = np.zeros(n, dtype=np.int64)
    gt_node = np.zeros(n, dtype=bool)
    _attach_motifs(builder, labels, gt_node, motif, cfg.motif_count,
                   cfg.base_nodes, np.random.default_rng(ss_attach))
    n_perturb = int(round(cfg.perturb_ratio * cfg.motif_count
                          * len(motif.edges)))
    builder.add_random(n_perturb, np.random.default_rng(ss_perturb),
                       lo=0, hi=cfg.base_nodes)
    arcs, gt_edge = builder.to_arcs()
    g = Graph(num_nodes=n, edges=arcs, features=np.ones((n, cfg.feature_dim)),
              node_labels=labels, gt_node_mask=gt_node, gt_edge_mask=gt_edge)
    splits = make_splits(n, np.random.default_rng(ss_split))
    return Dataset(task=NODE_TASK, graphs=[g], splits=splits)


def gen_tree_cycle(cfg=None):
    return _gen_tree_motif(cfg or default_config("tree-cycle"), CYCLE6)


def gen_tree_grid(cfg=None):
    return _gen_tree_motif(cfg or default_config("tree-grid"), GRID3X3)


# ---------------------------------------------------------------------------
# graph classification dataset


def gen_ba2motifs(cfg=None):
    cfg = cfg or default_config("ba-2motifs")
    ss = np.random.SeedSequence(cfg.seed)
    ss_split, *children = ss.spawn(1 + cfg.num_graphs)
    graphs = []
    half = cfg.num_graphs // 2
    for gi in range(cfg.num_graphs):
        motif = HOUSE if gi < half else CYCLE5
        rng = np.random.default_rng(children[gi])
        base = cfg.graph_base_nodes
        n = base + motif.size
        builder = _Builder(n)
        for u, v in ba_edges(base, cfg.attach_m, rng):
            builder.add(u, v, gt=False)
        labels = np.zeros(n, dtype=np.int64)
        gt_node = np.zeros(n, dtype=bool)
        _attach_motifs(builder, labels, gt_node, motif, 1, base, rng)
        arcs, gt_edge = builder.to_arcs()
        graphs.append(Graph(
            num_nodes=n, edges=arcs,
            features=np.ones((n, cfg.feature_dim)),
            graph_label=0 if motif is HOUSE else 1,
            gt_node_mask=gt_node, gt_edge_mask=gt_edge))
    splits = make_splits(cfg.num_graphs, np.random.default_rng(ss_split))
    return Dataset(task=GRAPH_TASK, graphs=graphs, splits=splits)


GENERATORS = {
    "ba-shapes": gen_ba_shapes,
    "ba-community": gen_ba_community,
    "tree-cycle": gen_tree_cycle,
    "tree-grid": gen_tree_grid,
    "ba-2motifs": gen_ba2motifs,
}


def generate(name, cfg=None, seed=0):
    """Build a named benchmark; cfg overrides the per-dataset defaults."""
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; choose from "
                         f"{sorted(GENERATORS)}")
    return GENERATORS[name](cfg or default_config(name, seed=seed))
