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
"""Filter-and-refine USim.

The query is clustered into k = round(sqrt(|Q|)) groups. Every centroid
keeps the beta tokens of D it is closest to, and a query token only looks
for its gammaNN inside the candidate set of its own cluster.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import kmeans_plusplus

from mvann.similarity.usim import (EvalCounter, ScoredMatch, SimilarityConfig,
                                   aggregate, distance_table,
                                   gamma_nn_from_table, query_weights,
                                   usim_exact)

LLOYD_ITERS = 10


@dataclass
class QueryClustering:
    centroids: np.ndarray
    assignment: np.ndarray
    k: int

    def members(self, cluster):
        return np.flatnonzero(self.assignment == cluster)


def num_clusters(c):
    return max(1, int(round(math.sqrt(c))))


def beta_size(gamma, c):
    return max(int(gamma), int(math.ceil(math.sqrt(c))))


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def _assign(x, centers):
    sq = (np.einsum('ij,ij->i', x, x)[:, None] - 2.0 * x @ centers.T +
          np.einsum('ij,ij->i', centers, centers)[None, :])
    return np.argmin(sq, axis=1)


def cluster_query(Q, seed=0, iters=LLOYD_ITERS) -> QueryClustering:
    """k-means++ seeding followed by a fixed number of Lloyd updates.

    Centroids are put back on the unit sphere after every update. A cluster
    left empty is re-seeded with the token farthest from its own centroid.
    """
    if len(Q) == 0:
        raise ValueError('cannot cluster an empty query')
    x = np.asarray(Q.tokens, dtype=np.float64)
    k = num_clusters(x.shape[0])
    centers, _ = kmeans_plusplus(x, k, random_state=seed)
    centers = _unit_rows(centers)
    for _ in range(iters):
        assign = _assign(x, centers)
        updated = np.zeros_like(centers)
        empty = []
        for j in range(k):
            members = assign == j
            if members.any():
                updated[j] = x[members].mean(axis=0)
            else:
                empty.append(j)
        if empty:
            spread = np.linalg.norm(x - centers[assign], axis=1)
            farthest = np.argsort(-spread, kind='stable')
            for j, t in zip(empty, farthest):
                updated[j] = x[t]
        centers = _unit_rows(updated)
    return QueryClustering(centers, _assign(x, centers), k)


def candidate_set(centroid, tokens, beta, cfg: SimilarityConfig):
    """Indices of the beta tokens closest to the centroid, ascending.

    Equal distances keep the smaller token index.
    """
    row = distance_table(centroid, tokens, cfg.distance)[0]
    top = np.argsort(-row, kind='stable')[:beta]
    return np.sort(top)


def usim_approx(Q,
                D,
                cfg: SimilarityConfig,
                clustering: QueryClustering,
                counter: EvalCounter = None,
                executor=None):
    """Approximate USim(Q, D) through the query clustering.

    Clusters are independent; pass a concurrent.futures executor to score
    them concurrently, results do not depend on it.
    """
    if len(Q) == 0:
        raise ValueError('empty query multi-vector')
    if len(D) == 0:
        raise ValueError('empty data multi-vector')
    if clustering.assignment.shape[0] != len(Q):
        raise ValueError('clustering covers {} tokens, query has {}'.format(
            clustering.assignment.shape[0], len(Q)))
    n_d = len(D)
    beta = beta_size(cfg.gamma, n_d)
    if beta >= n_d:
        return usim_exact(Q, D, cfg, counter)

    q_tokens = np.asarray(Q.tokens, dtype=np.float64)
    d_tokens = np.asarray(D.tokens, dtype=np.float64)
    clusters = [j for j in range(clustering.k)
                if np.any(clustering.assignment == j)]

    def _filter_refine(j):
        cand = candidate_set(clustering.centroids[j], d_tokens, beta, cfg)
        members = clustering.members(j)
        table = distance_table(q_tokens[members], d_tokens[cand],
                               cfg.distance)
        idx, dst = gamma_nn_from_table(table, cfg.gamma)
        return members, cand[idx], dst

    if executor is None:
        parts = list(map(_filter_refine, clusters))
    else:
        parts = list(executor.map(_filter_refine, clusters))

    g = min(cfg.gamma, beta)
    indices = np.zeros((len(Q), g), dtype=np.int64)
    distances = np.zeros((len(Q), g), dtype=np.float64)
    for members, idx, dst in parts:
        indices[members] = idx
        distances[members] = dst
    if counter is not None:
        counter.add(len(clusters) * n_d + len(Q) * beta)
    score = aggregate(query_weights(Q, cfg), distances)
    return score, ScoredMatch(indices, distances)


def usim(Q, V, cfg: SimilarityConfig, clustering=None, counter=None):
    """Route through the accelerated kernel when cfg.approx and a clustering
    of Q is at hand, exact scoring otherwise."""
    if cfg.approx and clustering is not None:
        return usim_approx(Q, V, cfg, clustering, counter)
    return usim_exact(Q, V, cfg, counter)
