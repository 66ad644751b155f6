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
"""Top-down k-NN search with navigation-table expansion at the base layer.

When a node is popped from the queue its tokens are weighted by a softmax
over how much each of them contributed to USim(Q, node). Every token then
offers the objects of its table list, lazily, in order of
weight * base_score, and the first M new objects join the node's graph
neighbors for this step.
"""

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from mvann.index.ant import AntTable
from mvann.index.mv_index import MvIndex, QueryScorer, beam_search
from mvann.similarity.approx_usim import cluster_query
from mvann.similarity.usim import (EvalCounter, ScoredMatch, SimilarityConfig,
                                   query_weights, usim_exact)


@dataclass
class SearchParams:
    k: int = 10
    ef_search: int = 128
    augmented: bool = True
    sim: Optional[SimilarityConfig] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError('k must be >= 1, got {}'.format(self.k))
        if self.ef_search < self.k:
            raise ValueError('ef_search ({}) must be >= k ({})'.format(
                self.ef_search, self.k))


def token_contribs(num_tokens, weights, matches: ScoredMatch):
    """Contribution of every token of V to USim(Q, V)."""
    out = np.zeros(num_tokens, dtype=np.float64)
    np.add.at(out, matches.indices, weights[:, None] * matches.distances)
    return out


def contrib(slot, Q, matches: ScoredMatch, sim: SimilarityConfig = None):
    """Weighted similarity mass that token `slot` of V receives from the
    query tokens matching it."""
    sim = SimilarityConfig() if sim is None else sim
    weights = query_weights(Q, sim)
    hit = matches.indices == slot
    return float(np.sum((weights[:, None] * matches.distances)[hit]))


def weight_softmax(contribs):
    contribs = np.asarray(contribs, dtype=np.float64)
    if contribs.size == 0:
        raise ValueError('softmax over an empty token list')
    return softmax(contribs)


def expand_candidates(node,
                      Q,
                      matches: ScoredMatch,
                      ant: AntTable,
                      M,
                      visited=None,
                      exclude=None,
                      sim: SimilarityConfig = None):
    """Up to M distinct table targets of `node`, highest priority first.

    Targets in visited or exclude, or already selected, are skipped without
    using up a slot.
    """
    sim = SimilarityConfig() if sim is None else sim
    visited = () if visited is None else visited
    exclude = () if exclude is None else exclude
    first = int(ant.token_offsets[node])
    count = int(ant.token_offsets[node + 1]) - first
    weights = weight_softmax(
        token_contribs(count, query_weights(Q, sim), matches))
    offsets, targets, scores = ant.offsets, ant.targets, ant.scores

    heap = []
    for slot in range(count):
        b = offsets[first + slot]
        if b < offsets[first + slot + 1]:
            heap.append((-weights[slot] * scores[b], int(targets[b]), slot,
                         int(b)))
    heapq.heapify(heap)
    selected = []
    chosen = set()
    while heap and len(selected) < M:
        _, target, slot, pos = heapq.heappop(heap)
        nxt = pos + 1
        if nxt < offsets[first + slot + 1]:
            heapq.heappush(heap, (-weights[slot] * scores[nxt],
                                  int(targets[nxt]), slot, nxt))
        if target in chosen or target in visited or target in exclude \
                or target == node:
            continue
        chosen.add(target)
        selected.append(target)
    return selected


def _make_scorer(index, Q, sim, keep_matches):
    clustering = cluster_query(Q, index.params.seed) if sim.approx else None
    return QueryScorer(index.dataset, Q, sim, clustering, EvalCounter(),
                       keep_matches)


def augmented_search_layer(index: MvIndex,
                           ant: AntTable,
                           Q,
                           layer,
                           eps,
                           ef,
                           sim: SimilarityConfig = None,
                           scorer: QueryScorer = None):
    """Beam search of one layer whose expansion set is the graph neighbors
    plus up to M navigation-table targets. Returns (score, id) pairs."""
    if not eps:
        raise ValueError('entry set must not be empty')
    sim = index.params.sim if sim is None else sim
    if scorer is None:
        scorer = _make_scorer(index, Q, sim, True)
    if not scorer.keep_matches:
        raise ValueError('augmented search needs a scorer that keeps matches')
    adjacency = index.layers[layer]
    M = index.params.M

    def expand(cur, visited):
        extra = expand_candidates(cur, Q, scorer.matches[cur], ant, M,
                                  visited, adjacency[cur], sim)
        return [t for t in extra if t in adjacency]

    eps = [int(e) for e in eps]
    for e in eps:
        if e not in adjacency:
            raise ValueError('entry point {} is not on layer {}'.format(
                e, layer))
    entries = list(zip(scorer(eps), eps))
    return beam_search(adjacency, scorer, entries, ef, expand)


def knn_search(index: MvIndex, ant: Optional[AntTable], Q,
               params: SearchParams, counter: EvalCounter = None):
    """Top-k (id, score) pairs for Q, best first."""
    if len(index) == 0 or index.entry_point is None:
        raise RuntimeError('cannot search an empty index')
    sim = index.params.sim if params.sim is None else params.sim
    augmented = params.augmented and ant is not None
    scorer = _make_scorer(index, Q, sim, augmented)
    if counter is not None:
        scorer.counter = counter

    ep = index.entry_point
    entries = [(scorer([ep])[0], ep)]
    for lc in range(index.max_layer, 0, -1):
        entries = beam_search(index.layers[lc], scorer, entries, 1)
    if augmented:
        cand = augmented_search_layer(index, ant, Q, 0,
                                      [i for _, i in entries],
                                      params.ef_search, sim, scorer)
    else:
        cand = beam_search(index.layers[0], scorer, entries,
                           params.ef_search)
    if sim.approx and sim.exact_rerank:
        exact = sim.exact()
        cand = [(usim_exact(Q, index.dataset[i], exact)[0], i)
                for _, i in cand]
        cand.sort(key=lambda x: (-x[0], x[1]))
    return [(i, s) for s, i in cand[:params.k]]
