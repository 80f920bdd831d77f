import numpy as np
import pytest

import blindfold as bf


@pytest.fixture(scope="session")
def toy_text() -> str:
    return bf.toy_config()


@pytest.fixture(scope="session")
def toy_model(toy_text) -> bf.Model:
    graph = bf.parse_model_config(toy_text)
    return bf.load_model(toy_text, bf.synthesize_weights(graph, seed=7))


@pytest.fixture(scope="session")
def toy_images(toy_model) -> np.ndarray:
    rng = np.random.default_rng(1)
    return rng.uniform(0.0, 1.0, size=(3, *toy_model.graph.input_shape))


@pytest.fixture(scope="session")
def vgg16_graph() -> bf.ModelGraph:
    return bf.parse_model_config(bf.vgg16_config())


@pytest.fixture(scope="session")
def vgg19_graph() -> bf.ModelGraph:
    return bf.parse_model_config(bf.vgg19_config())


def plan_for(graph: bf.ModelGraph, spec: str) -> bf.PartitionPlan:
    mode, partition = bf.parse_mode_spec(spec)
    return bf.PartitionPlan.for_mode(mode, graph.layer_count, partition)
