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
"""Hierarchical graph over multi-vectors.

Nodes are dataset ids, edges are undirected and carry the symmetric edge
weight f(u, v) = (USim(u, v) / |u| + USim(v, u) / |v|) / 2. Every layer is
a dict node -> {neighbor: weight}; both ends of an edge hold the same float.
"""

import concurrent.futures
import heapq
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from mvann.dataset.dataset import Dataset
from mvann.similarity.approx_usim import (QueryClustering, cluster_query,
                                          usim_approx)
from mvann.similarity.usim import (EvalCounter, SimilarityConfig,
                                   distance_table, query_weights,
                                   usim_from_table)

logger = logging.getLogger(__name__)

APPROX_MIN_TOKENS = 16


@dataclass
class IndexParams:
    """Construction parameters.

    accel_build routes every directional USim of construction whose query
    side holds at least approx_min_tokens tokens through the clustered
    kernel. sim.approx only governs query-time scoring.
    """
    M: int = 16
    ef_construction: int = 100
    m_l: Optional[float] = None
    seed: int = 42
    sim: SimilarityConfig = field(default_factory=SimilarityConfig)
    approx_min_tokens: int = APPROX_MIN_TOKENS
    accel_build: bool = True

    def __post_init__(self):
        if self.approx_min_tokens < 1:
            raise ValueError('approx_min_tokens must be >= 1, got {}'.format(
                self.approx_min_tokens))
        if self.M < 2:
            raise ValueError('M must be >= 2, got {}'.format(self.M))
        if self.ef_construction < self.M:
            raise ValueError('ef_construction ({}) must be >= M ({})'.format(
                self.ef_construction, self.M))
        if self.m_l is None:
            self.m_l = 1.0 / math.log(self.M)
        if not self.m_l > 0:
            raise ValueError('m_l must be > 0, got {}'.format(self.m_l))


def layer_from_uniform(u, m_l):
    if not 0.0 < u < 1.0:
        raise ValueError('uniform draw must lie in (0, 1), got {}'.format(u))
    return int(math.floor(-math.log(u) * m_l))


def assign_layer(rng: np.random.RandomState, m_l):
    u = rng.random_sample()
    while u <= 0.0:
        u = rng.random_sample()
    return layer_from_uniform(u, m_l)


def _check_nonempty(*mvs):
    for mv in mvs:
        if len(mv) == 0:
            raise ValueError('edge weight of an empty multi-vector')


def edge_weight(u,
                v,
                sim: SimilarityConfig,
                clustering_u: Optional[QueryClustering] = None,
                clustering_v: Optional[QueryClustering] = None,
                counter: Optional[EvalCounter] = None):
    """Average of the two length-normalized directional USim values.

    USim(u, v) goes through the clustered kernel when clustering_u is
    given, exact otherwise; likewise USim(v, u) with clustering_v. With
    sim.approx set, a missing clustering of a side holding at least
    APPROX_MIN_TOKENS tokens is computed on the fly. Arguments are put in
    id order first, so f(u, v) == f(v, u) exactly.
    """
    _check_nonempty(u, v)
    if u.id > v.id:
        u, v = v, u
        clustering_u, clustering_v = clustering_v, clustering_u
    if sim.approx:
        if clustering_u is None and len(u) >= APPROX_MIN_TOKENS:
            clustering_u = cluster_query(u, u.id)
        if clustering_v is None and len(v) >= APPROX_MIN_TOKENS:
            clustering_v = cluster_query(v, v.id)
    table = None
    if clustering_u is None or clustering_v is None:
        table = distance_table(u.tokens, v.tokens, sim.distance)
        if counter is not None:
            counter.add(table.size)
    if clustering_u is not None:
        uv, _ = usim_approx(u, v, sim, clustering_u, counter)
    else:
        uv, _ = usim_from_table(table, query_weights(u, sim), sim.gamma)
    if clustering_v is not None:
        vu, _ = usim_approx(v, u, sim, clustering_v, counter)
    else:
        vu, _ = usim_from_table(table.T, query_weights(v, sim), sim.gamma)
    return 0.5 * (uv / len(u) + vu / len(v))


def edge_weight_batch(u, dataset: Dataset, ids, sim: SimilarityConfig,
                      counter: Optional[EvalCounter] = None):
    """f(u, dataset[i]) for every i in ids from one stacked distance table."""
    _check_nonempty(u)
    block, starts = dataset.gather(ids)
    table = distance_table(u.tokens, block, sim.distance)
    if counter is not None:
        counter.add(table.size)
    wu = query_weights(u, sim)
    out = np.empty(len(ids), dtype=np.float64)
    for j, i in enumerate(ids):
        s, e = starts[j], starts[j + 1]
        sub = table[:, s:e]
        v = dataset[i]
        uv, _ = usim_from_table(sub, wu, sim.gamma)
        vu, _ = usim_from_table(sub.T, query_weights(v, sim), sim.gamma)
        out[j] = 0.5 * (uv / len(u) + vu / (e - s))
    return out


def beam_search(adjacency: Dict[int, Dict[int, float]],
                score_fn,
                entries,
                ef,
                expand=None):
    """Best-first search of one layer.

    entries are already scored (score, id) pairs and count as visited.
    score_fn maps a list of ids to their scores. expand, if given, maps a
    popped node and the visited set to extra ids to explore next to its
    graph neighbors. Returns up to ef (score, id) pairs, best first, ties
    by smaller id.
    """
    visited = set(i for _, i in entries)
    queue = [(-s, i) for s, i in entries]
    heapq.heapify(queue)
    cand = [(s, -i) for s, i in entries]
    heapq.heapify(cand)
    while len(cand) > ef:
        heapq.heappop(cand)
    while queue:
        neg, cur = heapq.heappop(queue)
        if -neg < cand[0][0]:
            break
        fresh = [n for n in sorted(adjacency.get(cur, ())) if n not in visited]
        visited.update(fresh)
        if expand is not None:
            extra = expand(cur, visited)
            visited.update(extra)
            fresh.extend(extra)
        if not fresh:
            continue
        for n, s in zip(fresh, score_fn(fresh)):
            if len(cand) < ef or s > cand[0][0]:
                heapq.heappush(queue, (-s, n))
                heapq.heappush(cand, (s, -n))
                if len(cand) > ef:
                    heapq.heappop(cand)
    return sorted(((s, -ni) for s, ni in cand), key=lambda x: (-x[0], x[1]))


class QueryScorer(object):
    """USim(Q, .) over dataset ids, remembering scores and matches.

    Matches are only stored when keep_matches is set; they feed the token
    contributions of the augmented search.
    """

    def __init__(self,
                 dataset: Dataset,
                 Q,
                 sim: SimilarityConfig,
                 clustering: Optional[QueryClustering] = None,
                 counter: Optional[EvalCounter] = None,
                 keep_matches=False):
        if len(Q) == 0:
            raise ValueError('empty query multi-vector')
        if Q.tokens.shape[1] != dataset.dim:
            raise ValueError('query dimension {} does not match dataset '
                             'dimension {}'.format(Q.tokens.shape[1],
                                                   dataset.dim))
        self.dataset = dataset
        self.Q = Q
        self.sim = sim
        self.clustering = clustering
        self.counter = counter
        self.keep_matches = keep_matches
        self.weights = query_weights(Q, sim)
        self.scores: Dict[int, float] = {}
        self.matches = {}

    def _approx(self):
        return self.sim.approx and self.clustering is not None

    def _score_exact(self, ids):
        block, starts = self.dataset.gather(ids)
        table = distance_table(self.Q.tokens, block, self.sim.distance)
        if self.counter is not None:
            self.counter.add(table.size)
        if self.sim.gamma == 1 and not self.keep_matches:
            maxes = np.maximum.reduceat(table, starts[:-1], axis=1)
            per_token = self.weights[:, None] * maxes
            return [float(x) for x in np.cumsum(per_token, axis=0)[-1]]
        out = []
        for j, i in enumerate(ids):
            score, match = usim_from_table(table[:, starts[j]:starts[j + 1]],
                                           self.weights, self.sim.gamma)
            if self.keep_matches:
                self.matches[i] = match
            out.append(score)
        return out

    def _score_approx(self, ids):
        out = []
        for i in ids:
            score, match = usim_approx(self.Q, self.dataset[i], self.sim,
                                       self.clustering, self.counter)
            if self.keep_matches:
                self.matches[i] = match
            out.append(score)
        return out

    def _known(self, i):
        return i in self.scores and (not self.keep_matches or
                                     i in self.matches)

    def __call__(self, ids):
        """Scores of ids; an id already scored for this query is served
        from memory."""
        ids = [int(i) for i in ids]
        fresh = [i for i in dict.fromkeys(ids) if not self._known(i)]
        if fresh:
            if self._approx():
                out = self._score_approx(fresh)
            else:
                out = self._score_exact(fresh)
            self.scores.update(zip(fresh, out))
        return [self.scores[i] for i in ids]


class MvIndex(object):

    def __init__(self, dataset: Dataset, params: IndexParams):
        self.dataset = dataset
        self.params = params
        self.layers: List[Dict[int, Dict[int, float]]] = []
        self.node_layer: Dict[int, int] = {}
        self.entry_point: Optional[int] = None
        self.counter = EvalCounter()
        self._rng = np.random.RandomState(params.seed)
        self._clusterings: Dict[int, QueryClustering] = {}

    def __len__(self):
        return len(self.node_layer)

    def __contains__(self, node):
        return node in self.node_layer

    @property
    def max_layer(self):
        return len(self.layers) - 1

    def neighbors(self, node, layer=0):
        return self.layers[layer][node]

    def _wants_clustering(self, node):
        return (self.params.accel_build and
                self.dataset.cardinality(node) >= self.params.approx_min_tokens)

    def clustering(self, node):
        if not self._wants_clustering(node):
            return None
        if node not in self._clusterings:
            self._clusterings[node] = cluster_query(self.dataset[node],
                                                    self.params.seed + node)
        return self._clusterings[node]

    def precompute_clusterings(self, threads=1):
        nodes = [i for i in range(len(self.dataset))
                 if self._wants_clustering(i) and i not in self._clusterings]
        if not nodes:
            return
        seed = self.params.seed

        def _cluster(i):
            return i, cluster_query(self.dataset[i], seed + i)

        if threads > 1:
            with concurrent.futures.ThreadPoolExecutor(threads) as executor:
                results = list(executor.map(_cluster, nodes))
        else:
            results = [_cluster(i) for i in nodes]
        self._clusterings.update(results)

    def edge_weights(self, node, ids):
        """f(node, i) for each i. Each direction goes through the
        accelerated kernel when its query side is large enough; pairs where
        neither side is share one stacked exact table."""
        sim = replace(self.params.sim, approx=False)
        ids = [int(i) for i in ids]
        out = np.empty(len(ids), dtype=np.float64)
        cu = self.clustering(node)
        paired = [j for j, i in enumerate(ids)
                  if cu is not None or self._wants_clustering(i)]
        batched = [j for j, i in enumerate(ids)
                   if cu is None and not self._wants_clustering(i)]
        if batched:
            out[batched] = edge_weight_batch(self.dataset[node], self.dataset,
                                             [ids[j] for j in batched], sim,
                                             self.counter)
        u = self.dataset[node]
        for j in paired:
            out[j] = edge_weight(u, self.dataset[ids[j]], sim, cu,
                                 self.clustering(ids[j]), self.counter)
        return out

    def _connect(self, layer, a, b, w):
        self.layers[layer][a][b] = w
        self.layers[layer][b][a] = w

    def _trim(self, layer, node):
        adj = self.layers[layer][node]
        if len(adj) <= self.params.M:
            return
        ranked = sorted(adj.items(), key=lambda x: (-x[1], x[0]))
        for other, _ in ranked[self.params.M:]:
            del adj[other]
            del self.layers[layer][other][node]

    def insert(self, node, level=None):
        node = int(node)
        if node in self.node_layer:
            raise ValueError('multi-vector {} is already indexed'.format(node))
        if node < 0 or node >= len(self.dataset):
            raise ValueError('multi-vector {} is not in the dataset'.format(
                node))
        if level is None:
            level = assign_layer(self._rng, self.params.m_l)
        self.node_layer[node] = level
        while len(self.layers) <= level:
            self.layers.append({})
        for lc in range(level + 1):
            self.layers[lc][node] = {}
        if self.entry_point is None:
            self.entry_point = node
            return

        memo = {}

        def score_fn(ids):
            fresh = [i for i in ids if i not in memo]
            if fresh:
                memo.update(zip(fresh, self.edge_weights(node, fresh)))
            return [memo[i] for i in ids]

        ep = self.entry_point
        top = self.node_layer[ep]
        entries = [(float(score_fn([ep])[0]), ep)]
        for lc in range(top, level, -1):
            entries = beam_search(self.layers[lc], score_fn, entries, 1)
        for lc in range(min(level, top), -1, -1):
            cand = beam_search(self.layers[lc], score_fn, entries,
                               self.params.ef_construction)
            chosen = [(s, i) for s, i in cand if i != node][:self.params.M]
            for w, other in chosen:
                self._connect(lc, node, other, w)
            for _, other in chosen:
                self._trim(lc, other)
            entries = cand
        if level > top:
            self.entry_point = node


def insert(index: MvIndex, mv):
    """Insert the dataset object mv into the index."""
    if mv.id >= len(index.dataset):
        raise ValueError('multi-vector {} is not in the dataset'.format(mv.id))
    index.insert(mv.id)
    return index


def build_index(dataset: Dataset, params: IndexParams, threads=1,
                progress=False) -> MvIndex:
    if len(dataset) == 0:
        raise ValueError('cannot index an empty dataset')
    start = time.time()
    index = MvIndex(dataset, params)
    if params.accel_build:
        index.precompute_clusterings(threads)
    for i in tqdm(range(len(dataset)), disable=not progress,
                  desc='insert'):
        index.insert(i)
    logger.info('built graph over {} multi-vectors in {:.2f}s, {} layers, '
                '{} distance evaluations'.format(len(index),
                                                 time.time() - start,
                                                 len(index.layers),
                                                 index.counter.count))
    return index


def search_layer_plain(index: MvIndex, Q, layer, eps, ef,
                       sim: Optional[SimilarityConfig] = None,
                       scorer: Optional[QueryScorer] = None):
    """Beam search of one layer by USim(Q, .), without augmentation.

    Returns up to ef (score, id) pairs, best first.
    """
    if not eps:
        raise ValueError('entry set must not be empty')
    if scorer is None:
        sim = index.params.sim if sim is None else sim
        clustering = cluster_query(Q, index.params.seed) if sim.approx \
            else None
        scorer = QueryScorer(index.dataset, Q, sim, clustering)
    eps = [int(e) for e in eps]
    for e in eps:
        if e not in index.layers[layer]:
            raise ValueError('entry point {} is not on layer {}'.format(
                e, layer))
    entries = list(zip(scorer(eps), eps))
    return beam_search(index.layers[layer], scorer, entries, ef)


def graph_stats(index: MvIndex):
    """Per-layer node and edge counts with the mean degree."""
    layers = []
    for lc, adjacency in enumerate(index.layers):
        degrees = [len(adj) for adj in adjacency.values()]
        nodes = len(degrees)
        layers.append({
            'layer': lc,
            'nodes': nodes,
            'edges': sum(degrees) // 2,
            'mean_degree': float(np.mean(degrees)) if nodes else 0.0,
            'max_degree': max(degrees) if nodes else 0,
        })
    return {
        'nodes': len(index),
        'entry_point': index.entry_point,
        'max_layer': index.max_layer,
        'layers': layers,
    }
