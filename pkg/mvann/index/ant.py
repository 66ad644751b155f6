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
"""Auxiliary navigation table.

For every token v of every object V the table lists up to M other objects
whose tokens are among the 5M nearest neighbors of v, ranked by the sum of
their top-gamma similarities to v.
"""

import concurrent.futures
import logging
import time
from collections import defaultdict
from typing import NamedTuple

import numpy as np
from tqdm import tqdm

from mvann.dataset.dataset import Dataset, TokenRef
from mvann.index.token_index import TokenIndex, token_knn

logger = logging.getLogger(__name__)

RETRIEVAL_FACTOR = 5


class AntEntry(NamedTuple):
    target: int
    base_score: float


class AntTable(object):
    """Per-token entry lists in CSR form.

    Token gid owns targets[offsets[gid]:offsets[gid + 1]] and the matching
    scores, sorted by score descending then target ascending.
    """

    def __init__(self, token_offsets, offsets, targets, scores, M, gamma,
                 m_prime=None):
        self.token_offsets = np.asarray(token_offsets, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.M = int(M)
        self.gamma = int(gamma)
        self.m_prime = RETRIEVAL_FACTOR * self.M if m_prime is None \
            else int(m_prime)

    @classmethod
    def empty(cls, dataset: Dataset, M=0, gamma=1):
        return cls(dataset.offsets, np.zeros(dataset.num_tokens + 1),
                   np.zeros(0), np.zeros(0), M, gamma)

    @property
    def num_tokens(self):
        return len(self.offsets) - 1

    @property
    def num_entries(self):
        return int(self.offsets[-1])

    def gid(self, ref):
        owner, slot = int(ref[0]), int(ref[1])
        n = len(self.token_offsets) - 1
        if owner < 0 or owner >= n:
            raise ValueError('token owner {} out of range [0, {})'.format(
                owner, n))
        count = self.token_offsets[owner + 1] - self.token_offsets[owner]
        if slot < 0 or slot >= count:
            raise ValueError('token slot {} out of range for owner {}'.format(
                slot, owner))
        return int(self.token_offsets[owner] + slot)

    def entries(self, gid):
        b, e = self.offsets[gid], self.offsets[gid + 1]
        return self.targets[b:e], self.scores[b:e]


def rank_owners(hits, M, gamma):
    """Group (TokenRef, sim) hits by owner and keep the best M owners."""
    groups = defaultdict(list)
    for ref, s in hits:
        groups[ref.owner].append(s)
    ranked = []
    for owner, sims in groups.items():
        sims.sort(reverse=True)
        ranked.append((owner, float(sum(sims[:gamma]))))
    ranked.sort(key=lambda x: (-x[1], x[0]))
    return ranked[:M]


def build_ant(dataset: Dataset, token_index: TokenIndex, M, gamma, ef=None,
              threads=1, progress=False) -> AntTable:
    if M < 1:
        raise ValueError('M must be >= 1, got {}'.format(M))
    if gamma < 1:
        raise ValueError('gamma must be >= 1, got {}'.format(gamma))
    start = time.time()
    m_prime = RETRIEVAL_FACTOR * M
    ef = m_prime if ef is None else max(ef, m_prime)
    vectors = dataset.tokens64

    def _build_list(gid):
        owner = int(dataset.token_owner[gid])
        hits = token_knn(token_index, vectors[gid], m_prime, ef,
                         exclude_owner=owner)
        return rank_owners(hits, M, gamma)

    gids = range(dataset.num_tokens)
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            lists = list(
                tqdm(executor.map(_build_list, gids, chunksize=64),
                     total=dataset.num_tokens, disable=not progress,
                     desc='ant'))
    else:
        lists = [_build_list(g)
                 for g in tqdm(gids, disable=not progress, desc='ant')]

    offsets = np.zeros(dataset.num_tokens + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(x) for x in lists])
    targets = np.fromiter((t for x in lists for t, _ in x), dtype=np.int64,
                          count=int(offsets[-1]))
    scores = np.fromiter((s for x in lists for _, s in x), dtype=np.float64,
                         count=int(offsets[-1]))
    logger.info('built navigation table: {} tokens, {} entries in '
                '{:.2f}s'.format(dataset.num_tokens, len(targets),
                                 time.time() - start))
    return AntTable(dataset.offsets, offsets, targets, scores, M, gamma,
                    m_prime)


def ant_lookup(table: AntTable, ref: TokenRef):
    targets, scores = table.entries(table.gid(ref))
    return [AntEntry(int(t), float(s)) for t, s in zip(targets, scores)]
