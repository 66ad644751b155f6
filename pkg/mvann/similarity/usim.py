# Copyright (c) 2025 mvann authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Token distance and the unified multi-vector similarity.

USim(Q, V) = sum_q w_q / g * sum_{v in gammaNN(q, V)} dis(q, v), with
g = min(gamma, |V|). Larger is more similar for every distance kind.
Storage is float32, every table and sum is float64 and the final sum runs
in ascending query-token order, so scores are bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np

INNER_PRODUCT = 'ip'
NEG_EUCLIDEAN = 'neg_euclidean'
DISTANCES = (INNER_PRODUCT, NEG_EUCLIDEAN)

METRIC_ALIASES = {
    'maxsim': 'maxsim',
    'weighted-chamfer': 'weighted-chamfer',
    'chamfer': 'weighted-chamfer',
    'aggregate-gnn': 'aggregate-gnn',
    'agg-gnn': 'aggregate-gnn',
}


@dataclass
class SimilarityConfig:
    gamma: int = 1
    distance: str = INNER_PRODUCT
    use_weights: bool = True
    approx: bool = False
    exact_rerank: bool = False

    def __post_init__(self):
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise ValueError('gamma must be a positive integer, got {}'.format(
                self.gamma))
        self.gamma = int(self.gamma)
        if self.distance not in DISTANCES:
            raise ValueError('unknown distance {!r}, expected one of {}'.format(
                self.distance, DISTANCES))

    def exact(self):
        """The same metric with every approximation switched off."""
        return SimilarityConfig(self.gamma, self.distance, self.use_weights,
                                False, False)


class EvalCounter(object):
    """Counts token-distance evaluations."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


class ScoredMatch(object):
    """The gammaNN assignment of every query token inside one data object.

    Row q of indices/distances lists token indices of V and their
    distances to query token q, sorted by distance descending.
    """

    def __init__(self, indices: np.ndarray, distances: np.ndarray):
        self.indices = indices
        self.distances = distances

    def __len__(self):
        return self.indices.shape[0]

    def row(self, q):
        return [(int(i), float(d))
                for i, d in zip(self.indices[q], self.distances[q])]

    def rows(self):
        return [self.row(q) for q in range(len(self))]


def distance_table(a: np.ndarray, b: np.ndarray, distance=INNER_PRODUCT):
    """(|a|, |b|) float64 table of dis(a_i, b_j)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if b.ndim == 1:
        b = b.reshape(1, -1)
    if a.shape[1] != b.shape[1]:
        raise ValueError('dimension mismatch: {} vs {}'.format(
            a.shape[1], b.shape[1]))
    dots = a @ b.T
    if distance == INNER_PRODUCT:
        return dots
    if distance == NEG_EUCLIDEAN:
        sq = (np.einsum('ij,ij->i', a, a)[:, None] +
              np.einsum('ij,ij->i', b, b)[None, :] - 2.0 * dots)
        return -np.sqrt(np.maximum(sq, 0.0))
    raise ValueError('unknown distance {!r}'.format(distance))


def dis(u, v, cfg: SimilarityConfig = None):
    distance = INNER_PRODUCT if cfg is None else cfg.distance
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValueError('dimension mismatch: {} vs {}'.format(
            u.shape[0], v.shape[0]))
    return float(distance_table(u, v, distance)[0, 0])


def gamma_nn_from_table(table: np.ndarray, gamma: int):
    """Row-wise top-min(gamma, cols) of a distance table.

    Ties go to the smaller column index.
    """
    g = min(gamma, table.shape[1])
    if g == 1:
        idx = np.argmax(table, axis=1).reshape(-1, 1)
    else:
        idx = np.argsort(-table, axis=1, kind='stable')[:, :g]
    return idx, np.take_along_axis(table, idx, axis=1)


def query_weights(Q, cfg: SimilarityConfig):
    if cfg.use_weights:
        return np.asarray(Q.weights, dtype=np.float64)
    return np.ones(len(Q), dtype=np.float64)


def aggregate(weights: np.ndarray, distances: np.ndarray):
    """sum_q w_q / g * sum_j distances[q, j], summed in query-token order."""
    g = distances.shape[1]
    per_token = weights * distances.sum(axis=1) / g
    return float(np.cumsum(per_token)[-1])


def usim_from_table(table: np.ndarray, weights: np.ndarray, gamma: int):
    idx, dst = gamma_nn_from_table(table, gamma)
    return aggregate(weights, dst), ScoredMatch(idx, dst)


def _check_pair(Q, V):
    if len(Q) == 0:
        raise ValueError('empty query multi-vector')
    if len(V) == 0:
        raise ValueError('empty data multi-vector')


def gamma_nn_exact(q, V, gamma: int, cfg: SimilarityConfig = None):
    """The min(gamma, |V|) tokens of V nearest to q, best first."""
    if gamma < 1:
        raise ValueError('gamma must be >= 1, got {}'.format(gamma))
    distance = INNER_PRODUCT if cfg is None else cfg.distance
    tokens = V.tokens if hasattr(V, 'tokens') else V
    table = distance_table(q, tokens, distance)
    idx, dst = gamma_nn_from_table(table, gamma)
    return [(int(i), float(d)) for i, d in zip(idx[0], dst[0])]


def usim_exact(Q, V, cfg: SimilarityConfig, counter: EvalCounter = None):
    _check_pair(Q, V)
    table = distance_table(Q.tokens, V.tokens, cfg.distance)
    if counter is not None:
        counter.add(table.size)
    return usim_from_table(table, query_weights(Q, cfg), cfg.gamma)


def metric_preset(name: str, gamma: int = None, **kwargs) -> SimilarityConfig:
    """MaxSim, Weighted Chamfer and Aggregate gammaNN as configurations."""
    if name not in METRIC_ALIASES:
        raise ValueError('unknown metric {!r}, expected one of {}'.format(
            name, sorted(METRIC_ALIASES)))
    name = METRIC_ALIASES[name]
    if name == 'maxsim':
        return SimilarityConfig(gamma=1, use_weights=False, **kwargs)
    if name == 'weighted-chamfer':
        return SimilarityConfig(gamma=1, use_weights=True, **kwargs)
    if gamma is None or gamma <= 1:
        raise ValueError('aggregate-gnn needs gamma > 1, got {}'.format(gamma))
    return SimilarityConfig(gamma=gamma, use_weights=False, **kwargs)
