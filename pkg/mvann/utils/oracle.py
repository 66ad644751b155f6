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
"""Exact linear scan and recall."""

import concurrent.futures

import numpy as np
from tqdm import tqdm

from mvann.index.mv_index import QueryScorer
from mvann.similarity.usim import SimilarityConfig

SCAN_CHUNK = 512
TIE_TOLERANCE = 1e-9


class GroundTruth(object):
    """Exact top-k (ids, scores) per query, scores non-increasing."""

    def __init__(self, ids, scores):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        if self.ids.shape != self.scores.shape or self.ids.ndim != 2:
            raise ValueError('ids {} and scores {} must be equal 2-d '
                             'shapes'.format(self.ids.shape,
                                             self.scores.shape))

    def __len__(self):
        return self.ids.shape[0]

    @property
    def k(self):
        return self.ids.shape[1]

    def row(self, i):
        return [(int(a), float(b)) for a, b in zip(self.ids[i],
                                                   self.scores[i])]


def scan_scores(dataset, Q, sim: SimilarityConfig, chunk=SCAN_CHUNK):
    """Exact USim(Q, V) for every object V of the dataset."""
    scorer = QueryScorer(dataset, Q, sim)
    out = np.empty(len(dataset), dtype=np.float64)
    for b in range(0, len(dataset), chunk):
        ids = list(range(b, min(b + chunk, len(dataset))))
        out[b:b + len(ids)] = scorer(ids)
    return out


def linear_scan_topk(dataset, Q, k, sim: SimilarityConfig):
    """Top-min(k, n) (id, score) pairs by exact USim, ties by smaller id."""
    if sim.approx:
        raise ValueError('the linear scan is exact; pass a config with '
                         'approx=False')
    if k < 1:
        raise ValueError('k must be >= 1, got {}'.format(k))
    scores = scan_scores(dataset, Q, sim)
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [(int(i), float(scores[i])) for i in order]


def ground_truth(dataset, queries, k, sim: SimilarityConfig, threads=1,
                 progress=False) -> GroundTruth:
    k = min(k, len(dataset))

    def _row(qid):
        return linear_scan_topk(dataset, queries[qid], k, sim)

    qids = range(len(queries))
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            rows = list(tqdm(executor.map(_row, qids), total=len(queries),
                             disable=not progress, desc='ground truth'))
    else:
        rows = [_row(q) for q in tqdm(qids, disable=not progress,
                                      desc='ground truth')]
    ids = np.array([[i for i, _ in r] for r in rows],
                   dtype=np.int64).reshape(len(rows), k)
    scores = np.array([[s for _, s in r] for r in rows],
                      dtype=np.float64).reshape(len(rows), k)
    return GroundTruth(ids, scores)


def recall(result_ids, truth_ids, k=None, result_scores=None,
           kth_score=None, tol=TIE_TOLERANCE):
    """|result & truth| / k over the first k ids of each.

    With result_scores (exact scores of the returned ids) and kth_score,
    a returned id outside truth whose score ties the k-th truth score
    is credited too.
    """
    truth_ids = [int(i) for i in truth_ids]
    k = len(truth_ids) if k is None else k
    if k < 1:
        raise ValueError('k must be >= 1, got {}'.format(k))
    truth = set(truth_ids[:k])
    result = [int(i) for i in result_ids][:k]
    hits = len(truth.intersection(result))
    if kth_score is not None and result_scores is not None:
        for i, s in zip(result, result_scores):
            if i not in truth and s >= kth_score - tol:
                hits += 1
    return min(hits, k) / k
