"""Model architecture, propagation equivalences, checkpoint round trips."""

import numpy as np
import pytest

from scalegnn.autodiff import tensor
from scalegnn.graphs import build_adjacency, symmetric_normalize
from scalegnn.models import (
    CheckpointError,
    MLP,
    Teacher,
    build_models,
    load_checkpoint,
    save_checkpoint,
)
from scalegnn.training import build_inputs


def support_of(dataset):
    return symmetric_normalize(build_adjacency(dataset.graphs[0]))


def test_mlp_widths_halve():
    mlp = MLP(np.random.default_rng(0), in_dim=20, hidden=32, out_dim=3,
              layers=3)
    shapes = [lin.w.data.shape for lin in mlp.linears]
    assert shapes == [(20, 32), (32, 16), (16, 3)]
    assert [bn.width for bn in mlp.bns] == [32, 16]


def test_mlp_single_layer_has_no_bn():
    mlp = MLP(np.random.default_rng(0), in_dim=4, hidden=8, out_dim=1,
              layers=1)
    assert [lin.w.data.shape for lin in mlp.linears] == [(4, 1)]
    assert mlp.bns == []


def test_teacher_shapes(mini_node_dataset):
    inputs = build_inputs(mini_node_dataset)
    teacher = Teacher(np.random.default_rng(0), in_dim=10, hidden=16,
                      n_classes=4, gcn_layers=3)
    logits, h = teacher.forward(inputs.support, inputs.x)
    assert logits.data.shape == (55, 4)
    assert h.data.shape == (55, 16)


def test_teacher_graph_pooling(mini_graph_dataset):
    inputs = build_inputs(mini_graph_dataset)
    teacher = Teacher(np.random.default_rng(0), in_dim=10, hidden=16,
                      n_classes=2, gcn_layers=2)
    logits, h = teacher.forward(inputs.support, inputs.x, inputs.pool_indptr)
    assert logits.data.shape == (20, 2)
    assert h.data.shape == (20 * 13, 16)


def test_all_ones_mask_reproduces_teacher(mini_graph_dataset):
    """A graph student whose mask is identically 1 must match the teacher
    bit for bit once their GCN weights agree."""
    inputs = build_inputs(mini_graph_dataset)
    models = build_models("graph-classification", 10, 2, hidden=16,
                          gcn_layers=3, mlp_layers=2, seed=0)
    teacher, student = models["teacher"], models["graph_student"]
    for wt, ws in zip(teacher.stack.ws, student.stack.ws):
        ws.data[...] = wt.data
    student.head.w.data[...] = teacher.head.w.data
    student.head.b.data[...] = teacher.head.b.data
    nnz = inputs.support.nnz
    student.edge_mask = lambda support, emb, training: tensor(np.ones((nnz, 1)))
    z_t, _ = teacher.forward(inputs.support, inputs.x, inputs.pool_indptr)
    z_s, _ = student.forward(inputs.support, inputs.x, None,
                             inputs.pool_indptr, training=False)
    assert np.max(np.abs(z_s.data - z_t.data)) < 1e-10


def test_node_student_weights_are_row_stochastic(mini_node_dataset):
    inputs = build_inputs(mini_node_dataset)
    models = build_models("node-classification", 10, 4, hidden=16,
                          gcn_layers=2, mlp_layers=2, seed=1)
    student = models["node_student"]
    rng = np.random.default_rng(2)
    embeddings = rng.normal(size=(55, 16))
    _, a = student.forward(inputs.support, embeddings, training=False)
    sums = np.add.reduceat(a.data[:, 0], inputs.support.indptr[:-1])
    assert np.max(np.abs(sums - 1.0)) < 1e-9
    assert np.all(a.data > 0.0)


def test_feature_student_ignores_structure(mini_node_dataset):
    models = build_models("node-classification", 10, 4, hidden=16,
                          gcn_layers=2, mlp_layers=3, seed=4)
    fs = models["feature_student"]
    x = tensor(np.random.default_rng(0).normal(size=(7, 10)))
    z = fs.forward(x, None, training=False)
    assert z.data.shape == (7, 4)
    shapes = [lin.w.data.shape for lin in fs.mlp.linears]
    assert shapes == [(10, 16), (16, 8), (8, 4)]


def test_teacher_init_independent_of_students():
    full = build_models("node-classification", 10, 4, 16, 2, 2, seed=9)
    solo = build_models("node-classification", 10, 4, 16, 2, 2, seed=9,
                        include=("teacher",))
    for a, b in zip(full["teacher"].params(), solo["teacher"].params()):
        assert np.array_equal(a.data, b.data)


def test_same_seed_same_models():
    a = build_models("node-classification", 10, 4, 16, 2, 2, seed=5)
    b = build_models("node-classification", 10, 4, 16, 2, 2, seed=5)
    for name in a:
        for pa, pb in zip(a[name].params(), b[name].params()):
            assert np.array_equal(pa.data, pb.data)


def test_checkpoint_round_trip(tmp_path):
    models = build_models("node-classification", 10, 4, hidden=16,
                          gcn_layers=2, mlp_layers=3, seed=6)
    # make batch-norm state non-trivial so the round trip is meaningful
    rng = np.random.default_rng(0)
    for bn in models["node_student"].mask_mlp.bns:
        bn.running_mean[:] = rng.normal(size=bn.running_mean.shape)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)
    config = {"hidden_size": 16, "gcn_layers": 2, "mlp_layers": 3}
    info = {"path": "x.json", "sha256": "0" * 64,
            "task": "node-classification", "feature_dim": 10,
            "num_classes": 4}
    save_checkpoint(tmp_path / "ckpt", models, config, info)
    loaded, config2, info2 = load_checkpoint(tmp_path / "ckpt")
    assert config2 == config and info2 == info
    assert set(loaded) == set(models)
    for name in models:
        orig = dict(models[name].state())
        back = dict(loaded[name].state())
        assert set(orig) == set(back)
        for key in orig:
            assert np.array_equal(orig[key], back[key]), f"{name}.{key}"


def test_checkpoint_rejects_corruption(tmp_path):
    models = build_models("node-classification", 10, 4, 16, 2, 2, seed=7)
    info = {"path": "x", "sha256": "", "task": "node-classification",
            "feature_dim": 10, "num_classes": 4}
    cfg = {"hidden_size": 16, "gcn_layers": 2, "mlp_layers": 2}
    save_checkpoint(tmp_path / "c", models, cfg, info)
    blob = (tmp_path / "c" / "params.bin").read_bytes()
    (tmp_path / "c" / "params.bin").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(tmp_path / "c")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nowhere")
