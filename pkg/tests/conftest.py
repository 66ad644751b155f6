import numpy as np
import pytest

from mvann.dataset.dataset import Dataset, MultiVector
from mvann.dataset.synthetic import (GeneratorSpec, generate_queries,
                                     generate_synthetic)
from mvann.index.ant import build_ant
from mvann.index.mv_index import IndexParams, build_index
from mvann.index.token_index import TokenHnswParams, build_token_index
from mvann.similarity.usim import SimilarityConfig

SQ2 = 1.0 / np.sqrt(2.0)
SQ3 = np.sqrt(3.0)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def weighted_pair():
    """Three weighted query tokens against three data tokens in 2-d."""
    Q = MultiVector.create(0, [[1, 0], [0, 1], [SQ2, SQ2]], [1, 0, 1])
    V = MultiVector.create(1, [[0.8, 0.6], [0.6, 0.8], [SQ2, SQ2]])
    return Q, V


@pytest.fixture
def three_objects():
    """Three 2-token objects in 3-d and a 2-token query, unit weights."""
    mvs = [
        MultiVector.create(0, [[SQ3 / 2, 0.5, 0], [0, 0.8, 0.6]]),
        MultiVector.create(1, [[SQ2, SQ2, 0], [0, 0.6, 0.8]]),
        MultiVector.create(2, [[0.6, 0.8, 0], [0, 1, 0]]),
    ]
    dataset = Dataset.from_multivectors(mvs)
    Q = MultiVector.create(0, [[1, 0, 0], [0, SQ2, SQ2]])
    return dataset, Q


@pytest.fixture(scope='session')
def clustered_spec():
    return GeneratorSpec(n=200, dim=16, c_min=4, c_max=8, clusters=10,
                         sigma=0.15, seed=7)


@pytest.fixture(scope='session')
def clustered(clustered_spec):
    return generate_synthetic(clustered_spec)


@pytest.fixture(scope='session')
def clustered_queries(clustered_spec):
    return generate_queries(clustered_spec, 20, seed=8)


@pytest.fixture(scope='session')
def built(clustered):
    """(index, token_index, ant) over the clustered dataset, gamma = 1."""
    params = IndexParams(M=8, ef_construction=32, seed=3,
                         sim=SimilarityConfig(gamma=1, use_weights=False))
    index = build_index(clustered, params)
    token_index = build_token_index(clustered,
                                    TokenHnswParams(M=16, ef_construction=32,
                                                    seed=3))
    ant = build_ant(clustered, token_index, M=8, gamma=1)
    return index, token_index, ant
