"""Explanation quality metrics, the evaluation harness, and ablation sweeps.

Explanations are scored against ground-truth motifs at the edge level as
one binary classification over distinct edges: the union of all selected
edges across the explained instances is compared with the union of all
ground-truth motif edges, so an edge shared by several instances counts
once. An instance's ground truth is its own motif, the connected component
of gt-positive edges containing the explained node (node tasks) or all
gt-positive edges of the explained graph (graph tasks). Per-instance
pooled counts (every selection counted per instance) and macro averages
are reported alongside for transparency.

Node tasks explain every motif node, selecting the top-k walk nodes with
k defaulting to the node's motif size; the explanation edges are the
existing edges among selected nodes. Graph tasks explain the test-split
graphs, thresholding mean undirected mask scores; the threshold maximizes
Youden's J statistic (TPR - FPR) over the pooled scores of the explained
set.

Evaluation never trains: optimizer step counters are checked before and
after, and only explanation work is timed.
"""

from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor
import os
import time

import numpy as np

from .explain import (
    RandomWalker,
    explain_graph,
    explain_node,
    undirected_mask_scores,
)
from .graphs import GRAPH_TASK, NODE_TASK
from .training import accuracy, build_inputs, compute_artifacts, joint_train

LAMBDA_GRID = (0.1, 0.3, 0.5, 1.0, 2.0, 4.0, 10.0)
JUMP_D_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
KD_GRID = ("naive", "embed", "kdl", "joint")


# ---------------------------------------------------------------------------
# metrics


@dataclass
class PRResult:
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    empty_selections: int = 0


def micro_precision_recall(selections, truths):
    """Pool per-instance TP/FP/FN, then take the ratios.

    selections/truths are parallel lists of sets. With nothing selected at
    all, precision is reported as 1.0 and the empty-selection count flags
    the degenerate case.
    """
    if len(selections) != len(truths):
        raise ValueError("selections and truths must pair up")
    tp = fp = fn = 0
    empty = 0
    for sel, gt in zip(selections, truths):
        inter = len(sel & gt)
        tp += inter
        fp += len(sel) - inter
        fn += len(gt) - inter
        if not sel:
            empty += 1
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return PRResult(precision=precision, recall=recall, tp=tp, fp=fp, fn=fn,
                    empty_selections=empty)


def union_precision_recall(selections, truths):
    """One binary classification over the distinct explained edges.

    The union of selections is scored against the union of ground truths,
    so an edge picked from several instances counts once. Motif edges in a
    shared graph are reachable from every member node; scoring them per
    instance would weight each edge by its motif size, while the union
    treats the explained set as a single edge-labelling problem.
    """
    if len(selections) != len(truths):
        raise ValueError("selections and truths must pair up")
    sel = set().union(*selections) if selections else set()
    gt = set().union(*truths) if truths else set()
    tp = len(sel & gt)
    fp = len(sel) - tp
    fn = len(gt) - tp
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    empty = sum(1 for s in selections if not s)
    return PRResult(precision=precision, recall=recall, tp=tp, fp=fp, fn=fn,
                    empty_selections=empty)


def macro_precision_recall(selections, truths):
    """Mean per-instance precision and recall (empty instances score 1)."""
    if len(selections) != len(truths):
        raise ValueError("selections and truths must pair up")
    if not selections:
        return 1.0, 1.0
    ps, rs = [], []
    for sel, gt in zip(selections, truths):
        inter = len(sel & gt)
        ps.append(inter / len(sel) if sel else 1.0)
        rs.append(inter / len(gt) if gt else 1.0)
    return float(np.mean(ps)), float(np.mean(rs))


def youden_threshold(scores, labels):
    """Threshold maximizing TPR - FPR under the rule `select if score > t`.

    Candidates are the midpoints of consecutive distinct scores plus
    sentinels below the minimum (select everything) and above the maximum
    (select nothing); ties resolve toward the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be parallel 1-D arrays")
    if scores.size == 0:
        raise ValueError("cannot fit a threshold on no scores")
    distinct = np.unique(scores)
    candidates = np.concatenate([
        [distinct[0] - 1.0],
        (distinct[:-1] + distinct[1:]) / 2.0,
        [distinct[-1] + 1.0],
    ])
    pos = max(int(labels.sum()), 0)
    neg = labels.size - pos
    best_t, best_j = None, -np.inf
    for t in candidates:
        sel = scores > t
        tpr = (sel & labels).sum() / pos if pos else 1.0
        fpr = (sel & ~labels).sum() / neg if neg else 0.0
        j = tpr - fpr
        if j > best_j + 1e-15:
            best_j, best_t = j, float(t)
    return best_t


# ---------------------------------------------------------------------------
# ground-truth motifs


def motif_components(graph):
    """Connected components of the gt-positive edge subgraph.

    Returns (component node lists, component undirected-pair sets,
    comp_of array mapping node id -> component index or -1).
    """
    if graph.gt_edge_mask is None or graph.gt_node_mask is None:
        raise ValueError("graph carries no ground-truth masks")
    pos = graph.edges[graph.gt_edge_mask]
    nbrs = {}
    for u, v in pos:
        nbrs.setdefault(int(u), set()).add(int(v))
        nbrs.setdefault(int(v), set()).add(int(u))
    comp_of = np.full(graph.num_nodes, -1, dtype=np.int64)
    comp_nodes = []
    for start in np.flatnonzero(graph.gt_node_mask):
        start = int(start)
        if comp_of[start] >= 0:
            continue
        cid = len(comp_nodes)
        stack, seen = [start], {start}
        while stack:
            u = stack.pop()
            comp_of[u] = cid
            for w in nbrs.get(u, ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comp_nodes.append(sorted(seen))
    comp_pairs = [set() for _ in comp_nodes]
    for u, v in pos:
        cid = comp_of[u]
        if cid >= 0:
            comp_pairs[cid].add((min(int(u), int(v)), max(int(u), int(v))))
    return comp_nodes, comp_pairs, comp_of


def gt_pairs_of_graph(graph):
    pos = graph.edges[graph.gt_edge_mask]
    return {(min(int(u), int(v)), max(int(u), int(v))) for u, v in pos}


# ---------------------------------------------------------------------------
# harness


@dataclass
class EvalReport:
    dataset: str
    seed: int
    task: str
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    n_instances: int
    explain_seconds: float
    threshold: float = None
    empty_selections: int = 0
    micro_precision: float = float("nan")
    micro_recall: float = float("nan")
    macro_precision: float = float("nan")
    macro_recall: float = float("nan")
    teacher_test_acc: float = float("nan")
    student_test_accs: dict = field(default_factory=dict)
    per_instance: list = field(default_factory=list)

    def to_json(self):
        out = {k: getattr(self, k) for k in (
            "dataset", "seed", "task", "precision", "recall", "tp", "fp",
            "fn", "n_instances", "explain_seconds", "threshold",
            "empty_selections", "micro_precision", "micro_recall",
            "macro_precision", "macro_recall", "teacher_test_acc")}
        out["student_test_accs"] = dict(self.student_test_accs)
        return out

    def per_instance_csv(self, path):
        cols = ["instance", "k_or_threshold", "tp", "fp", "fn"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.per_instance:
                fh.write(",".join(str(v) for v in row) + "\n")


def _step_counts(models):
    return [p.step for m in models.values() for p in m.params()]


def evaluate(models, dataset, cfg):
    """Score the explanations of trained models against ground truth."""
    inputs = build_inputs(dataset)
    steps_before = _step_counts(models)
    t0 = time.perf_counter()
    art = compute_artifacts(models, inputs, cfg)
    if dataset.task == NODE_TASK:
        report = _evaluate_node(models, dataset, cfg, inputs, art, t0)
    else:
        report = _evaluate_graph(models, dataset, cfg, inputs, art, t0)
    if _step_counts(models) != steps_before:
        raise RuntimeError("evaluation must not take optimizer steps")
    report.teacher_test_acc = (
        accuracy(art.teacher_logits, inputs.labels, inputs.splits["test"])
        if art.teacher_logits is not None else float("nan"))
    report.student_test_accs = {
        name: accuracy(z, inputs.labels, inputs.splits["test"])
        for name, z in art.student_logits.items()}
    return report


def _evaluate_node(models, dataset, cfg, inputs, art, t0):
    if art.arc_scores is None:
        raise ValueError("node evaluation needs a trained node student")
    g = dataset.graphs[0]
    comp_nodes, comp_pairs, comp_of = motif_components(g)
    walker = RandomWalker(inputs.support, art.arc_scores, cfg.jump_d,
                          cfg.rwr_iters, cfg.rwr_tol)
    preds = np.argmax(art.teacher_logits, axis=1) \
        if art.teacher_logits is not None else None
    selections, truths, rows = [], [], []
    for v in np.flatnonzero(g.gt_node_mask):
        v = int(v)
        cid = comp_of[v]
        k = cfg.top_k if cfg.top_k else len(comp_nodes[cid])
        ex = explain_node(walker, v, k,
                          None if preds is None else preds[v])
        sel = set(ex.selected_pairs)
        gt = comp_pairs[cid]
        selections.append(sel)
        truths.append(gt)
        inter = len(sel & gt)
        rows.append((v, k, inter, len(sel) - inter, len(gt) - inter))
    elapsed = time.perf_counter() - t0
    pr = union_precision_recall(selections, truths)
    micro = micro_precision_recall(selections, truths)
    macro_p, macro_r = macro_precision_recall(selections, truths)
    return EvalReport(
        dataset=cfg.dataset, seed=cfg.seed, task=dataset.task,
        precision=pr.precision, recall=pr.recall, tp=pr.tp, fp=pr.fp,
        fn=pr.fn, n_instances=len(rows), explain_seconds=elapsed,
        empty_selections=pr.empty_selections,
        micro_precision=micro.precision, micro_recall=micro.recall,
        macro_precision=macro_p, macro_recall=macro_r, per_instance=rows)


def _evaluate_graph(models, dataset, cfg, inputs, art, t0):
    if art.arc_scores is None:
        raise ValueError("graph evaluation needs a trained graph student")
    test = inputs.splits["test"]
    preds = np.argmax(art.teacher_logits, axis=1) \
        if art.teacher_logits is not None else None
    per_graph = []
    pooled_scores, pooled_labels = [], []
    for gi in test:
        gi = int(gi)
        lo = int(inputs.node_offset[gi])
        hi = int(inputs.node_offset[gi + 1])
        pairs, scores = undirected_mask_scores(inputs.support, art.arc_scores,
                                               lo, hi)
        gt = gt_pairs_of_graph(dataset.graphs[gi])
        per_graph.append((gi, pairs, scores, gt))
        pooled_scores.append(scores)
        pooled_labels.append(np.array([p in gt for p in pairs]))
    threshold = youden_threshold(np.concatenate(pooled_scores),
                                 np.concatenate(pooled_labels))
    selections, truths, rows = [], [], []
    for gi, pairs, scores, gt in per_graph:
        ex = explain_graph(pairs, scores, threshold, gi,
                           None if preds is None else preds[gi])
        sel = set(ex.selected_pairs)
        selections.append({(gi,) + p for p in sel})
        truths.append({(gi,) + p for p in gt})
        inter = len(sel & gt)
        rows.append((gi, threshold, inter, len(sel) - inter,
                     len(gt) - inter))
    elapsed = time.perf_counter() - t0
    # pairs are graph-local, so the union keys carry the graph index;
    # disjoint graphs make the union and per-instance pools coincide
    pr = union_precision_recall(selections, truths)
    micro = micro_precision_recall(selections, truths)
    macro_p, macro_r = macro_precision_recall(selections, truths)
    return EvalReport(
        dataset=cfg.dataset, seed=cfg.seed, task=dataset.task,
        precision=pr.precision, recall=pr.recall, tp=pr.tp, fp=pr.fp,
        fn=pr.fn, n_instances=len(rows), explain_seconds=elapsed,
        threshold=threshold, empty_selections=pr.empty_selections,
        micro_precision=micro.precision, micro_recall=micro.recall,
        macro_precision=macro_p, macro_recall=macro_r, per_instance=rows)


def train_and_evaluate(dataset, cfg, progress=None):
    models, _, log = joint_train(dataset, cfg, progress=progress)
    report = evaluate(models, dataset, cfg)
    return models, report, log


# ---------------------------------------------------------------------------
# ablation sweeps


def worker_count(requested=None):
    """Resolve the ablation worker count; SCALE_THREADS caps it."""
    cap = int(os.environ.get("SCALE_THREADS", "0") or 0)
    n = requested if requested else (cap if cap else 1)
    if cap:
        n = min(n, cap)
    return max(1, n)


def _row(mode, value, report):
    return {
        "mode": mode,
        "value": value,
        "seed": report.seed,
        "precision": report.precision,
        "recall": report.recall,
        "teacher_test_acc": report.teacher_test_acc,
        "explain_seconds": report.explain_seconds,
    }


def ablate(dataset, cfg, mode, values=None, seeds=None, workers=None,
           progress=None):
    """Sweep one knob and score explanations at every setting.

    jump_d sweeps reuse one trained model per seed (the walk is
    explanation-time work); lambda/kd_setting/epochs sweeps retrain.
    Returns a list of result-row dicts.
    """
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    if mode == "jump_d":
        values = list(values) if values is not None else list(JUMP_D_GRID)
        rows = []
        for s in seeds:
            base = replace(cfg, seed=s)
            models, _, _ = joint_train(dataset, base, progress=progress)
            for d in values:
                report = evaluate(models, dataset, replace(base, jump_d=d))
                rows.append(_row(mode, d, report))
        return rows
    if mode == "lambda":
        values = list(values) if values is not None else list(LAMBDA_GRID)
        configs = [replace(cfg, lam=v, seed=s) for v in values for s in seeds]
    elif mode == "kd_setting":
        values = list(values) if values is not None else list(KD_GRID)
        configs = [replace(cfg, kd_setting=v, seed=s)
                   for v in values for s in seeds]
    elif mode == "epochs":
        if values is None:
            raise ValueError("epochs mode needs explicit budget values")
        configs = [replace(cfg, epochs=int(v), seed=s)
                   for v in values for s in seeds]
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")

    def run(c):
        _, report, _ = train_and_evaluate(dataset, c, progress=progress)
        key = {"lambda": c.lam, "kd_setting": c.kd_setting,
               "epochs": c.epochs}[mode]
        return _row(mode, key, report)

    n_workers = worker_count(workers)
    if n_workers == 1:
        return [run(c) for c in configs]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(run, configs))


ABLATION_COLUMNS = ("mode", "value", "seed", "precision", "recall",
                    "teacher_test_acc", "explain_seconds")


def ablation_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(ABLATION_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in ABLATION_COLUMNS) + "\n")
