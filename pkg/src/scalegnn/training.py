"""Joint teacher/student training via online knowledge distillation.

Each epoch runs one full-batch Adam step on the teacher's cross-entropy,
recomputes detached teacher logits and final-layer embeddings, then steps
every student on

    L_student = L_ce + lambda * L_sce,

where L_sce is the soft cross-entropy between temperature-softened teacher
and student distributions (no temperature-squared factor):

    L_sce = -(1/N) sum_i softmax(z_t_i / tau) . log softmax(z_s_i / tau).

Both loss terms run over the training split. The teacher never sees any
student gradient, and its parameter trajectory is identical with or without
students attached.

Propagation supports differ by task. Node tasks use the symmetric
renormalization D^-1/2 (A+I) D^-1/2, which keeps six-layer stacks stable on
graphs with hubs. Graph batches scale A+I by the global max row sum
instead: mean-pooled readouts of constant node features can only separate
classes through degree and edge-count statistics, and per-degree
normalization cancels exactly those.

kd_setting picks the distillation variant:
  naive  - CE only, mask MLPs read the student's own detached embeddings
  embed  - CE only, mask MLPs read teacher embeddings
  kdl    - CE + lambda*SCE, student's own embeddings
  joint  - CE + lambda*SCE, teacher embeddings (default)

Logged validation accuracies for students come from the same training-mode
forward used for the step; final quality should be measured with a separate
evaluation-mode forward.
"""

from dataclasses import asdict, dataclass, field, replace
import json

import numpy as np

from .autodiff import (
    Tape,
    adam_step,
    add,
    clip_grad_norm,
    gather_rows,
    hadamard,
    one_hot,
    rowwise_log_softmax,
    scale,
    spmm,
    sum_all,
    tensor,
    zero_grads,
)
from .graphs import GRAPH_TASK, NODE_TASK, build_adjacency, symmetric_normalize
from .models import build_models
from .sparse import SparseMatrix

KD_SETTINGS = ("naive", "embed", "kdl", "joint")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters for one training/explanation run."""

    dataset: str = "ba-shapes"
    seed: int = 0
    mlp_layers: int = 3
    gcn_layers: int = 6
    hidden_size: int = 32
    lam: float = 0.1
    epochs: int = 1000
    lr: float = 0.01
    tau: float = 2.0
    jump_d: float = 0.55
    top_k: int = 0
    kd_setting: str = "joint"
    grad_clip: float = 1.0
    rwr_iters: int = 1000
    rwr_tol: float = 1e-10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 < self.jump_d < 1.0:
            raise ValueError(f"jump_d must lie in (0, 1), got {self.jump_d}")
        if self.kd_setting not in KD_SETTINGS:
            raise ValueError(f"kd_setting must be one of {KD_SETTINGS}")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


PRESETS = {
    "ba-shapes": RunConfig(dataset="ba-shapes", mlp_layers=3, gcn_layers=6,
                           hidden_size=32, lam=0.1, epochs=1000,
                           jump_d=0.55),
    "ba-community": RunConfig(dataset="ba-community", mlp_layers=3,
                              gcn_layers=6, hidden_size=64, lam=0.1,
                              epochs=1000, jump_d=0.55),
    "tree-cycle": RunConfig(dataset="tree-cycle", mlp_layers=3, gcn_layers=6,
                            hidden_size=64, lam=0.1, epochs=1000,
                            jump_d=0.55),
    "tree-grid": RunConfig(dataset="tree-grid", mlp_layers=3, gcn_layers=6,
                           hidden_size=64, lam=0.1, epochs=1000, jump_d=0.9),
    "ba-2motifs": RunConfig(dataset="ba-2motifs", mlp_layers=3, gcn_layers=4,
                            hidden_size=64, lam=4.0, epochs=200),
}


def preset(dataset, **overrides):
    if dataset not in PRESETS:
        raise ValueError(f"no preset for {dataset!r}; choose from "
                         f"{sorted(PRESETS)}")
    return replace(PRESETS[dataset], **overrides)


def load_config(path, **overrides):
    with open(path) as fh:
        raw = json.load(fh)
    base = preset(raw.get("dataset", "ba-shapes"))
    merged = {**base.to_dict(), **raw, **overrides}
    return RunConfig.from_dict(merged)


# ---------------------------------------------------------------------------
# full-batch inputs


@dataclass
class Inputs:
    """Dataset compiled into full-batch arrays.

    Graph tasks concatenate every graph into one block-diagonal support;
    node_offset[i] is where graph i's nodes start, and pool_indptr groups
    rows for mean pooling. Node tasks leave pool_indptr as None.
    """

    task: str
    support: SparseMatrix
    x: object
    labels: np.ndarray
    splits: dict
    pool_indptr: np.ndarray = None
    node_offset: np.ndarray = None
    n_classes: int = 0

    @property
    def train_rows(self):
        return self.splits["train"]


def build_inputs(dataset):
    if dataset.task == NODE_TASK:
        g = dataset.graphs[0]
        support = symmetric_normalize(build_adjacency(g, add_self_loops=True))
        return Inputs(task=dataset.task, support=support,
                      x=tensor(g.features), labels=g.node_labels.copy(),
                      splits=dataset.splits, n_classes=dataset.num_classes)
    sizes = np.array([g.num_nodes for g in dataset.graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    arcs = np.vstack([g.edges + offsets[i]
                      for i, g in enumerate(dataset.graphs)])
    total = int(offsets[-1])
    loops = np.arange(total, dtype=np.int64)
    src = np.concatenate([arcs[:, 0], loops])
    dst = np.concatenate([arcs[:, 1], loops])
    # Graph batches scale A+I by one global constant (the max row sum,
    # which bounds the spectral radius) instead of degree-normalizing.
    # Degree normalization cancels the degree and edge-count statistics
    # that survive mean pooling; with constant node features those are
    # the only class signal a pooled readout can see.
    deg = np.bincount(src, minlength=total)
    support = SparseMatrix.from_coo(total, total, src, dst,
                                    np.full(src.size, 1.0 / deg.max()))
    feats = np.vstack([g.features for g in dataset.graphs])
    labels = np.array([g.graph_label for g in dataset.graphs], dtype=np.int64)
    return Inputs(task=dataset.task, support=support, x=tensor(feats),
                  labels=labels, splits=dataset.splits,
                  pool_indptr=offsets, node_offset=offsets,
                  n_classes=dataset.num_classes)


# ---------------------------------------------------------------------------
# losses and metrics


def ce_loss(logits, labels, rows):
    """Mean cross-entropy of logits[rows] against integer labels[rows]."""
    lp = rowwise_log_softmax(logits)
    sel = gather_rows(lp, rows)
    onehot = one_hot(labels[rows], logits.data.shape[1])
    return scale(sum_all(hadamard(sel, onehot)), -1.0 / rows.size)


def soft_ce_loss(logits, teacher_logits, rows, tau):
    """Soft cross-entropy against temperature-softened teacher logits.

    teacher_logits is a detached ndarray; no gradient flows to the teacher.
    """
    zt = teacher_logits[rows] / tau
    zt = zt - zt.max(axis=1, keepdims=True)
    e = np.exp(zt)
    pt = e / e.sum(axis=1, keepdims=True)
    lp = rowwise_log_softmax(gather_rows(logits, rows), temperature=tau)
    return scale(sum_all(hadamard(lp, tensor(pt))), -1.0 / rows.size)


def student_loss(logits, labels, rows, teacher_logits, lam, tau):
    """CE plus lambda-weighted soft CE; skips the distillation term when
    lambda is zero or no teacher logits are supplied."""
    loss = ce_loss(logits, labels, rows)
    if lam > 0.0 and teacher_logits is not None:
        loss = add(loss, scale(soft_ce_loss(logits, teacher_logits, rows,
                                            tau), lam))
    return loss


def accuracy(logits, labels, rows):
    if rows.size == 0:
        return float("nan")
    pred = np.argmax(logits[rows], axis=1)
    return float(np.mean(pred == labels[rows]))


def _check_finite(value, what, epoch):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} at epoch {epoch}")


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainLog:
    columns: list
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append([row[c] for c in self.columns])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, int):
        return str(v)
    return f"{v:.6g}"


def _student_forward(name, model, inputs, embeddings, training):
    if name == "node_student":
        return model.forward(inputs.support, embeddings, training)
    if name == "graph_student":
        return model.forward(inputs.support, inputs.x, embeddings,
                             inputs.pool_indptr, training)
    return model.forward(inputs.x, inputs.pool_indptr, training), None


def joint_train(dataset, cfg, include=("teacher", "structure", "feature"),
                progress=None):
    """Run the online-distillation loop; returns (models, inputs, log).

    include selects which models exist; dropping students does not alter the
    teacher's trajectory. Normally the final-epoch models are returned; if
    the teacher's validation accuracy ends more than ten points below its
    best, training has diverged (dead relu layers never recover) and every
    model rolls back to the best epoch. The log records the live trajectory
    either way. Without a teacher the final epoch is returned. progress, if
    given, is called with the epoch index every 50 epochs.
    """
    inputs = build_inputs(dataset)
    in_dim = inputs.x.data.shape[1]
    models = build_models(dataset.task, in_dim, inputs.n_classes,
                          cfg.hidden_size, cfg.gcn_layers, cfg.mlp_layers,
                          cfg.seed, include=include,
                          embed_dim=student_embed_dim(
                              cfg.kd_setting, in_dim, cfg.hidden_size))
    teacher = models.get("teacher")
    students = {k: m for k, m in models.items() if k != "teacher"}
    use_kd = cfg.kd_setting in ("kdl", "joint") and cfg.lam > 0.0
    use_teacher_embed = cfg.kd_setting in ("embed", "joint")
    train_rows = inputs.splits["train"]
    val_rows = inputs.splits["val"]
    columns = ["epoch", "teacher_loss", "teacher_val_acc"]
    for name in students:
        columns += [f"{name}_loss", f"{name}_val_acc"]
    log = TrainLog(columns=columns)
    best_val, best_state, last_val = -np.inf, None, float("nan")

    for epoch in range(cfg.epochs):
        row = {"epoch": epoch}
        z_t = h_t = None
        if teacher is not None:
            with Tape() as tape:
                logits, _ = teacher.forward(inputs.support, inputs.x,
                                            inputs.pool_indptr)
                loss = ce_loss(logits, inputs.labels, train_rows)
                _check_finite(loss.item(), "teacher loss", epoch)
                zero_grads(teacher.params())
                tape.backward(loss)
                clip_grad_norm(teacher.params(), cfg.grad_clip)
                adam_step(teacher.params(), cfg.lr)
            zt_tensor, ht_tensor = teacher.forward(inputs.support, inputs.x,
                                                   inputs.pool_indptr)
            z_t, h_t = zt_tensor.data, ht_tensor.data
            row["teacher_loss"] = loss.item()
            row["teacher_val_acc"] = accuracy(z_t, inputs.labels, val_rows)
        else:
            row["teacher_loss"] = float("nan")
            row["teacher_val_acc"] = float("nan")

        for name, model in students.items():
            if name == "feature_student":
                embeddings = None
            elif use_teacher_embed and h_t is not None:
                embeddings = h_t
            elif name == "node_student":
                # without teacher embeddings the node student runs on raw
                # features (its own stack already consumes the embeddings,
                # so there is no unmasked self forward to fall back on)
                embeddings = inputs.x.data
            else:
                embeddings = _self_embeddings(model, inputs.support, inputs.x)
            with Tape() as tape:
                logits, _aux = _student_forward(name, model, inputs,
                                                embeddings, training=True)
                loss = student_loss(logits, inputs.labels, train_rows,
                                    z_t if use_kd else None, cfg.lam, cfg.tau)
                _check_finite(loss.item(), f"{name} loss", epoch)
                zero_grads(model.params())
                tape.backward(loss)
                clip_grad_norm(model.params(), cfg.grad_clip)
                adam_step(model.params(), cfg.lr)
            row[f"{name}_loss"] = loss.item()
            row[f"{name}_val_acc"] = accuracy(logits.data, inputs.labels,
                                              val_rows)
        log.append(row)
        last_val = row["teacher_val_acc"]
        if teacher is not None and row["teacher_val_acc"] >= best_val:
            best_val = row["teacher_val_acc"]
            best_state = {n: [p.data.copy() for p in m.params()]
                          for n, m in models.items()}
        if progress is not None and epoch % 50 == 0:
            progress(epoch)
    if best_state is not None and best_val - last_val > 0.1:
        for name, model in models.items():
            for p, saved in zip(model.params(), best_state[name]):
                p.data = saved
    return models, inputs, log


def node_student_input_dim(kd_setting, in_dim, hidden):
    """Width of the node student's input embeddings for a kd_setting."""
    return hidden if kd_setting in ("embed", "joint") else in_dim


def student_embeddings(models, inputs, kd_setting, name):
    """Embedding source a structure student's mask MLP reads, matching the
    training-time choice for the given kd_setting."""
    if kd_setting in ("embed", "joint") and "teacher" in models:
        _, h = models["teacher"].forward(inputs.support, inputs.x,
                                         inputs.pool_indptr)
        return h.data
    if name == "node_student":
        return inputs.x.data
    return _self_embeddings(models[name], inputs.support, inputs.x)


@dataclass
class Artifacts:
    """Evaluation-mode model outputs used by explanation and scoring.

    arc_scores: per stored arc of the support pattern; row-stochastic
    transition weights from the node student, or the sigmoid mask from the
    graph student. None when no structure student is present.
    """

    teacher_logits: np.ndarray = None
    teacher_embeddings: np.ndarray = None
    student_logits: dict = field(default_factory=dict)
    arc_scores: np.ndarray = None


def compute_artifacts(models, inputs, cfg):
    """Run every model once in evaluation mode and collect outputs."""
    art = Artifacts()
    if "teacher" in models:
        z, h = models["teacher"].forward(inputs.support, inputs.x,
                                         inputs.pool_indptr)
        art.teacher_logits, art.teacher_embeddings = z.data, h.data
    for name in ("node_student", "graph_student"):
        if name not in models:
            continue
        embeddings = student_embeddings(models, inputs, cfg.kd_setting, name)
        logits, aux = _student_forward(name, models[name], inputs,
                                       embeddings, training=False)
        art.student_logits[name] = logits.data
        art.arc_scores = aux.data[:, 0]
    if "feature_student" in models:
        logits, _ = _student_forward("feature_student",
                                     models["feature_student"], inputs, None,
                                     training=False)
        art.student_logits["feature_student"] = logits.data
    return art
