"""Teacher GCN and the specialty student learners.

The teacher is a stack of graph convolution layers, H <- relu(A_hat H W + b),
over a normalized adjacency (symmetric renormalization for node tasks, a
global spectral scaling for graph batches; see training.build_inputs),
followed by a linear head (applied to mean-pooled node embeddings for graph
classification). Biases start at zero.

Students reparameterize the teacher's propagation:

- GraphMaskStudent multiplies every stored entry of A_hat (self-loops
  included) by a sigmoid edge mask produced by an MLP over concatenated
  endpoint embeddings, and forwards the masked support through the
  teacher's own convolution stack and head (held by reference, never
  updated by the student). A mask of all ones reproduces the teacher
  exactly.
- NodeEdgeWeightStudent replaces A_hat by a row-stochastic attention matrix:
  per-arc logits from the same kind of MLP, softmax-normalized over each
  node's incident arcs (mandatory self-loops keep rows non-empty). One
  shared matrix serves every layer.
- FeatureMLPStudent ignores structure entirely: a halving-width MLP over raw
  features (per-node logits mean-pooled for graph tasks).

Mask MLPs use batch norm + relu after each hidden layer and a linear final
layer; widths halve from the configured hidden size.

Checkpoints are a JSON manifest plus a raw little-endian float64 blob
holding every parameter and batch-norm running statistic.
"""

import hashlib
import json
import os

import numpy as np

from .autodiff import (
    BatchNorm,
    Parameter,
    add,
    batch_norm,
    glorot_uniform,
    orthogonal,
    hadamard,
    matmul,
    relu,
    segment_mean_rows,
    segment_softmax,
    sigmoid,
    spmm,
    tensor,
)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint files are missing, inconsistent, or mis-shaped."""


class Linear:
    def __init__(self, rng, fan_in, fan_out, bias=True):
        self.w = Parameter(glorot_uniform(rng, fan_in, fan_out))
        self.b = Parameter(np.zeros((1, fan_out))) if bias else None

    def __call__(self, x):
        y = matmul(x, self.w)
        return y if self.b is None else add(y, self.b)

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def state(self, prefix):
        out = [(f"{prefix}.w", self.w.data)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b.data))
        return out


class MLP:
    """Dense stack with halving hidden widths.

    layers counts weight matrices; each hidden layer is linear -> batch norm
    -> relu, the final layer is linear only.
    """

    def __init__(self, rng, in_dim, hidden, out_dim, layers, use_bn=True):
        if layers < 1:
            raise ValueError("MLP needs at least one layer")
        widths = [in_dim] + [max(1, hidden // (1 << i))
                             for i in range(layers - 1)] + [out_dim]
        self.linears = [Linear(rng, widths[i], widths[i + 1])
                        for i in range(layers)]
        self.bns = [BatchNorm(widths[i + 1]) for i in range(layers - 1)] \
            if use_bn else []

    def forward(self, x, training):
        for i, lin in enumerate(self.linears[:-1]):
            x = lin(x)
            if self.bns:
                x = batch_norm(x, self.bns[i], training)
            x = relu(x)
        return self.linears[-1](x)

    def params(self):
        out = []
        for lin in self.linears:
            out.extend(lin.params())
        for bn in self.bns:
            out.extend(bn.params())
        return out

    def state(self, prefix):
        out = []
        for i, lin in enumerate(self.linears):
            out.extend(lin.state(f"{prefix}.lin{i}"))
        for i, bn in enumerate(self.bns):
            out.extend([
                (f"{prefix}.bn{i}.gamma", bn.gamma.data),
                (f"{prefix}.bn{i}.beta", bn.beta.data),
                (f"{prefix}.bn{i}.running_mean", bn.running_mean),
                (f"{prefix}.bn{i}.running_var", bn.running_var),
            ])
        return out


class GCNStack:
    """Graph convolution layers h <- relu(propagate(h W) + b).

    With constant input features and no bias every layer output is rank one
    in the node dimension (each row a multiple of one shared vector), so the
    stack cannot separate classes; the zero-initialized bias breaks that.
    """

    def __init__(self, rng, in_dim, hidden, layers):
        dims = [in_dim] + [hidden] * layers
        self.ws = [Parameter(orthogonal(rng, dims[i], dims[i + 1]))
                   for i in range(layers)]
        self.bs = [Parameter(np.zeros((1, hidden))) for _ in range(layers)]

    def forward(self, x, propagate):
        h = x
        for w, b in zip(self.ws, self.bs):
            h = relu(add(propagate(matmul(h, w)), b))
        return h

    def params(self):
        return list(self.ws) + list(self.bs)

    def state(self, prefix):
        return ([(f"{prefix}.w{i}", w.data) for i, w in enumerate(self.ws)]
                + [(f"{prefix}.b{i}", b.data) for i, b in enumerate(self.bs)])


def edge_features(embeddings, support):
    """Per-stored-arc feature rows [h_src | h_dst] for the mask MLPs."""
    rows = support.row_index()
    return np.hstack([embeddings[rows], embeddings[support.indices]])


class Teacher:
    kind = "teacher"

    def __init__(self, rng, in_dim, hidden, n_classes, gcn_layers):
        self.stack = GCNStack(rng, in_dim, hidden, gcn_layers)
        self.head = Linear(rng, hidden, n_classes)

    def forward(self, support, x, pool_indptr=None):
        """Returns (logits, final node embeddings)."""
        h = self.stack.forward(x, lambda t: spmm(support, t))
        pooled = h if pool_indptr is None else segment_mean_rows(h, pool_indptr)
        return self.head(pooled), h

    def params(self):
        return self.stack.params() + self.head.params()

    def state(self):
        return self.stack.state("stack") + self.head.state("head")


class GraphMaskStudent:
    """Learnable edge mask over a shared classifier backbone.

    The convolution stack and head are the teacher's own, held by reference:
    params() exposes only the mask MLP, so optimizer steps tune which edges
    survive, never what the classifier computes with them. That ties the
    mask to the backbone's evidence. Deleting an edge the backbone needs
    costs classification loss immediately, while edges that only add
    per-graph noise can be suppressed for free. A student with a private
    stack has a cheaper option: with constant node features and mean
    pooling the pooled representation tracks total surviving mask mass, so
    it re-encodes the label by erasing one class's motif, which inverts the
    mask on half the explanation set.
    """

    kind = "graph_student"

    def __init__(self, rng, embed_dim, hidden, mlp_layers, backbone):
        self.mask_mlp = MLP(rng, 2 * embed_dim, hidden, 1, mlp_layers)
        self.backbone = backbone

    def edge_mask(self, support, embeddings, training):
        ef = tensor(edge_features(embeddings, support))
        return sigmoid(self.mask_mlp.forward(ef, training))

    def forward(self, support, x, embeddings, pool_indptr, training):
        """Returns (logits, per-arc mask in (0, 1))."""
        mask = self.edge_mask(support, embeddings, training)
        vals = hadamard(tensor(support.values[:, None]), mask)
        h = self.backbone.stack.forward(
            x, lambda t: spmm(support, t, values=vals))
        pooled = h if pool_indptr is None else segment_mean_rows(h, pool_indptr)
        return self.backbone.head(pooled), mask

    def params(self):
        return self.mask_mlp.params()

    def state(self):
        return self.mask_mlp.state("mask_mlp")


class NodeEdgeWeightStudent:
    """Edge-weighting student for node tasks.

    Both the arc scorer and the propagation stack consume one embedding
    matrix (the teacher's final-layer embeddings when distilling, raw
    features otherwise). Feeding the row-stochastic propagation a constant
    matrix would make the forward pass independent of the arc weights, so
    the weights would never receive gradient.
    """

    kind = "node_student"

    def __init__(self, rng, embed_dim, hidden, n_classes, gcn_layers,
                 mlp_layers):
        self.embed_dim = embed_dim
        self.mask_mlp = MLP(rng, 2 * embed_dim, hidden, 1, mlp_layers)
        self.stack = GCNStack(rng, embed_dim, hidden, gcn_layers)
        self.head = Linear(rng, hidden, n_classes)

    def arc_weights(self, support, embeddings, training):
        """Row-stochastic arc weights over the support pattern."""
        ef = tensor(edge_features(embeddings, support))
        logits = self.mask_mlp.forward(ef, training)
        return segment_softmax(logits, support.indptr)

    def forward(self, support, embeddings, training):
        """Returns (logits, per-arc weights summing to 1 per row)."""
        a = self.arc_weights(support, embeddings, training)
        h = self.stack.forward(tensor(embeddings),
                               lambda t: spmm(support, t, values=a))
        return self.head(h), a

    def params(self):
        return self.mask_mlp.params() + self.stack.params() + self.head.params()

    def state(self):
        return (self.mask_mlp.state("mask_mlp") + self.stack.state("stack")
                + self.head.state("head"))


class FeatureMLPStudent:
    kind = "feature_student"

    def __init__(self, rng, in_dim, hidden, n_classes, mlp_layers):
        self.mlp = MLP(rng, in_dim, hidden, n_classes, mlp_layers)

    def forward(self, x, pool_indptr, training):
        z = self.mlp.forward(x, training)
        return z if pool_indptr is None else segment_mean_rows(z, pool_indptr)

    def params(self):
        return self.mlp.params()

    def state(self):
        return self.mlp.state("mlp")


# ---------------------------------------------------------------------------
# construction


def build_models(task, in_dim, n_classes, hidden, gcn_layers, mlp_layers,
                 seed, include=("teacher", "structure", "feature"),
                 embed_dim=None):
    """Instantiate the teacher and requested students.

    Every model draws its initial weights from its own child stream of the
    seed, spawned in a fixed order, so adding or removing students never
    changes another model's initialization. embed_dim sizes the structure
    student's arc-scoring input: the teacher embedding width (default) in
    settings that distill embeddings, the feature width otherwise. The graph
    student classifies through the teacher's layers; without a teacher it
    gets a private, untrained backbone so it stays constructible.
    """
    ss = np.random.SeedSequence(seed)
    teach_ss, struct_ss, feat_ss = ss.spawn(3)
    models = {}
    if "teacher" in include:
        models["teacher"] = Teacher(np.random.default_rng(teach_ss), in_dim,
                                    hidden, n_classes, gcn_layers)
    if "structure" in include:
        rng = np.random.default_rng(struct_ss)
        if task == "graph-classification":
            backbone = models.get("teacher") or Teacher(
                rng, in_dim, hidden, n_classes, gcn_layers)
            models["graph_student"] = GraphMaskStudent(
                rng, embed_dim or hidden, hidden, mlp_layers, backbone)
        else:
            models["node_student"] = NodeEdgeWeightStudent(
                rng, embed_dim or hidden, hidden, n_classes,
                gcn_layers, mlp_layers)
    if "feature" in include:
        models["feature_student"] = FeatureMLPStudent(
            np.random.default_rng(feat_ss), in_dim, hidden, n_classes,
            mlp_layers)
    return models


def _rebuild(name, task, in_dim, n_classes, hidden, gcn_layers, mlp_layers,
             embed_dim=None, backbone=None):
    rng = np.random.default_rng(0)
    if name == "teacher":
        return Teacher(rng, in_dim, hidden, n_classes, gcn_layers)
    if name == "graph_student":
        backbone = backbone or Teacher(rng, in_dim, hidden, n_classes,
                                       gcn_layers)
        return GraphMaskStudent(rng, embed_dim or hidden, hidden, mlp_layers,
                                backbone)
    if name == "node_student":
        return NodeEdgeWeightStudent(rng, embed_dim or hidden, hidden,
                                     n_classes, gcn_layers, mlp_layers)
    if name == "feature_student":
        return FeatureMLPStudent(rng, in_dim, hidden, n_classes, mlp_layers)
    raise CheckpointError(f"unknown model kind {name!r}")


# ---------------------------------------------------------------------------
# checkpoint io


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(directory, models, config, dataset_info):
    """Write manifest.json + params.bin under directory.

    config and dataset_info are JSON-serializable dicts; dataset_info should
    carry enough to rebuild the models (task, feature_dim, num_classes) and
    to locate/validate the dataset (path, sha256).
    """
    os.makedirs(directory, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, model in sorted(models.items()):
        for arr_name, arr in model.state():
            flat = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({
                "model": name,
                "name": arr_name,
                "shape": list(arr.shape),
                "offset": offset,
                "count": int(flat.size),
            })
            chunks.append(flat.tobytes())
            offset += flat.size
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "config": config,
        "dataset": dataset_info,
        "arrays": entries,
        "total_values": offset,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(directory):
    """Rebuild models from a checkpoint directory.

    Returns (models, config, dataset_info). Shape or size mismatches raise
    CheckpointError.
    """
    man_path = os.path.join(directory, "manifest.json")
    bin_path = os.path.join(directory, "params.bin")
    try:
        with open(man_path) as fh:
            manifest = json.load(fh)
        blob = open(bin_path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{man_path}: invalid JSON: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported format_version {manifest.get('format_version')!r}")
    total = manifest["total_values"]
    if len(blob) != 8 * total:
        raise CheckpointError(
            f"params.bin holds {len(blob)} bytes, expected {8 * total}")
    config = manifest["config"]
    info = manifest["dataset"]
    kd = config.get("kd_setting", "joint")
    embed_dim = (config["hidden_size"] if kd in ("embed", "joint")
                 else info["feature_dim"])
    # teacher first: the graph student classifies through its layers
    names = sorted({e["model"] for e in manifest["arrays"]},
                   key=lambda n: (n != "teacher", n))
    models = {}
    states = {}
    for model_name in names:
        models[model_name] = _rebuild(
            model_name, info["task"], info["feature_dim"],
            info["num_classes"], config["hidden_size"],
            config["gcn_layers"], config["mlp_layers"],
            embed_dim=embed_dim, backbone=models.get("teacher"))
        states[model_name] = dict(models[model_name].state())
    for entry in manifest["arrays"]:
        model_name = entry["model"]
        target = states[model_name].get(entry["name"])
        if target is None:
            raise CheckpointError(
                f"{model_name}: unexpected array {entry['name']!r}")
        arr = np.frombuffer(
            blob, dtype="<f8", count=entry["count"],
            offset=8 * entry["offset"]).reshape(entry["shape"])
        if target.shape != arr.shape:
            raise CheckpointError(
                f"{model_name}.{entry['name']}: shape {arr.shape} does not "
                f"match built model {target.shape}")
        target[...] = arr
    return models, config, info
