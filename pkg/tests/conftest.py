"""Shared fixtures: miniature datasets and configs that train in seconds."""

import pytest

from scalegnn.synthetic import GenConfig, gen_ba2motifs, gen_ba_shapes
from scalegnn.training import RunConfig


@pytest.fixture(scope="session")
def mini_node_dataset():
    return gen_ba_shapes(GenConfig(seed=1, base_nodes=30, motif_count=5,
                                   attach_m=2))


@pytest.fixture(scope="session")
def mini_graph_dataset():
    return gen_ba2motifs(GenConfig(seed=1, num_graphs=20, graph_base_nodes=8,
                                   attach_m=1, perturb_ratio=0.0))


@pytest.fixture(scope="session")
def mini_node_cfg():
    return RunConfig(dataset="ba-shapes", seed=3, mlp_layers=2, gcn_layers=3,
                     hidden_size=16, lam=0.1, epochs=120)


@pytest.fixture(scope="session")
def mini_graph_cfg():
    return RunConfig(dataset="ba-2motifs", seed=3, mlp_layers=2, gcn_layers=3,
                     hidden_size=16, lam=4.0, epochs=120)
