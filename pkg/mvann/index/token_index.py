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
"""Single-vector HNSW over every token of a dataset, by inner product.

Nodes are global token rows of the dataset. Each layer maps a node to its
out-neighbors and their similarity.
"""

import heapq
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from mvann.dataset.dataset import Dataset, TokenRef
from mvann.index.mv_index import assign_layer

logger = logging.getLogger(__name__)


@dataclass
class TokenHnswParams:
    M: int = 32
    ef_construction: int = 40
    seed: int = 42

    def __post_init__(self):
        if self.M < 2:
            raise ValueError('M_t must be >= 2, got {}'.format(self.M))
        if self.ef_construction < self.M:
            raise ValueError('ef_construction ({}) must be >= M_t ({})'.format(
                self.ef_construction, self.M))

    @property
    def level_mult(self):
        return 1.0 / math.log(self.M)


class TokenIndex(object):

    def __init__(self, dataset: Dataset, params: TokenHnswParams):
        self.dataset = dataset
        self.params = params
        self.layers: List[Dict[int, Dict[int, float]]] = []
        self.entry_point: Optional[int] = None
        self._random = np.random.RandomState(params.seed)

    def __len__(self):
        return len(self.layers[0]) if self.layers else 0

    @property
    def vectors(self):
        return self.dataset.tokens64

    def _sims(self, q, keys):
        return (self.vectors[keys] @ q).tolist()

    def insert(self, key, level=None):
        key = int(key)
        if self.layers and key in self.layers[0]:
            raise ValueError('token {} is already indexed'.format(key))
        if level is None:
            level = assign_layer(self._random, self.params.level_mult)
        q = self.vectors[key]
        if self.entry_point is not None:
            point = self.entry_point
            sim = self._sims(q, [point])[0]
            for layer in reversed(self.layers[level + 1:]):
                point, sim = self._search_ef1(q, point, sim, layer)
            entry_points = [(sim, point)]
            for layer in reversed(self.layers[:level + 1]):
                entry_points = self._search_layer(q, entry_points, layer,
                                                  self.params.ef_construction)
                layer[key] = {
                    p: s
                    for s, p in self._heuristic_prune(entry_points,
                                                      self.params.M)
                }
                for neighbor, s in layer[key].items():
                    adj = layer[neighbor]
                    if len(adj) < self.params.M:
                        adj[key] = s
                        continue
                    cands = [(d, p) for p, d in adj.items()] + [(s, key)]
                    layer[neighbor] = {
                        p: d
                        for d, p in self._heuristic_prune(cands, self.params.M)
                    }
        for _ in range(len(self.layers), level + 1):
            self.layers.append({})
            self.entry_point = key
        for layer in self.layers[:level + 1]:
            layer.setdefault(key, {})

    def _search_ef1(self, q, entry_point, entry_sim, layer):
        """Greedy walk to the single closest node of a layer."""
        candidates = [(-entry_sim, entry_point)]
        visited = set([entry_point])
        best, best_sim = entry_point, entry_sim
        while candidates:
            neg, curr = heapq.heappop(candidates)
            if -neg < best_sim:
                break
            neighbors = [p for p in layer[curr] if p not in visited]
            if not neighbors:
                continue
            visited.update(neighbors)
            for p, s in zip(neighbors, self._sims(q, neighbors)):
                if s > best_sim or (s == best_sim and p < best):
                    best, best_sim = p, s
                    heapq.heappush(candidates, (-s, p))
        return best, best_sim

    def _search_layer(self, q, entry_points, layer, ef):
        """ef-bounded best-first search; returns (sim, key) best first."""
        candidates = [(-s, p) for s, p in entry_points]
        heapq.heapify(candidates)
        found = [(s, -p) for s, p in entry_points]
        heapq.heapify(found)
        visited = set(p for _, p in entry_points)
        while candidates:
            neg, curr = heapq.heappop(candidates)
            if -neg < found[0][0]:
                break
            neighbors = [p for p in layer[curr] if p not in visited]
            if not neighbors:
                continue
            visited.update(neighbors)
            for p, s in zip(neighbors, self._sims(q, neighbors)):
                if len(found) < ef:
                    heapq.heappush(candidates, (-s, p))
                    heapq.heappush(found, (s, -p))
                elif s > found[0][0]:
                    heapq.heappush(candidates, (-s, p))
                    heapq.heapreplace(found, (s, -p))
        return sorted(((s, -p) for s, p in found),
                      key=lambda x: (-x[0], x[1]))

    def _heuristic_prune(self, candidates, max_size):
        """Keep a candidate only if it is closer to the base point than to
        every neighbor already kept."""
        ranked = sorted(candidates, key=lambda x: (-x[0], x[1]))
        if len(ranked) <= max_size:
            return ranked
        keys = [p for _, p in ranked]
        vecs = self.vectors[keys]
        pairwise = (vecs @ vecs.T).tolist()
        pruned = []
        for i, (s, p) in enumerate(ranked):
            if len(pruned) >= max_size:
                break
            if all(pairwise[j][i] <= s for j, _ in pruned):
                pruned.append((i, (s, p)))
        return [x for _, x in pruned]

    def search(self, q, k, ef):
        """Top max(ef, k) beam, cut to k, as (key, sim) best first."""
        if self.entry_point is None:
            return []
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dataset.dim:
            raise ValueError('query dimension {} does not match {}'.format(
                q.shape[0], self.dataset.dim))
        point = self.entry_point
        sim = self._sims(q, [point])[0]
        for layer in reversed(self.layers[1:]):
            point, sim = self._search_ef1(q, point, sim, layer)
        found = self._search_layer(q, [(sim, point)], self.layers[0],
                                   max(ef, k))
        return [(p, s) for s, p in found[:k]]


def build_token_index(dataset: Dataset, params: TokenHnswParams = None,
                      progress=False) -> TokenIndex:
    if len(dataset) == 0:
        raise ValueError('cannot index an empty dataset')
    params = TokenHnswParams() if params is None else params
    start = time.time()
    index = TokenIndex(dataset, params)
    for key in tqdm(range(dataset.num_tokens), disable=not progress,
                    desc='tokens'):
        index.insert(key)
    logger.info('built token graph over {} tokens in {:.2f}s'.format(
        len(index), time.time() - start))
    return index


def token_knn(index: TokenIndex, q, k, ef, exclude_owner=None):
    """Up to k (TokenRef, sim) pairs, best first.

    Tokens of exclude_owner are dropped after the search; the beam is widened
    by the largest cardinality to make up for them.
    """
    if k < 1:
        raise ValueError('k must be >= 1, got {}'.format(k))
    if ef < k:
        raise ValueError('ef ({}) must be >= k ({})'.format(ef, k))
    dataset = index.dataset
    if exclude_owner is None:
        hits = index.search(q, k, ef)
    else:
        extra = dataset.cardinality(exclude_owner)
        hits = index.search(q, k + extra, ef + dataset.max_cardinality())
        hits = [(p, s) for p, s in hits
                if dataset.token_owner[p] != exclude_owner]
    return [(TokenRef(int(dataset.token_owner[p]), int(dataset.token_slot[p])),
             s) for p, s in hits[:k]]
