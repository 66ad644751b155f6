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
"""Clustered multi-vector data for desk-scale experiments.

Topic centroids are uniform on the unit sphere. Each object mixes one to
three topics with Dirichlet proportions, and each of its tokens is a noisy
copy of one of them.
"""

from dataclasses import dataclass

import numpy as np

from mvann.dataset.dataset import Dataset, l2_normalize

OBJECT_STREAM = 1
QUERY_STREAM = 2


@dataclass
class GeneratorSpec:
    n: int = 1000
    dim: int = 32
    c_min: int = 8
    c_max: int = 32
    clusters: int = 20
    sigma: float = 0.15
    seed: int = 42
    max_topics: int = 3

    def __post_init__(self):
        if self.n < 1:
            raise ValueError('n must be >= 1, got {}'.format(self.n))
        if self.dim < 1:
            raise ValueError('dim must be >= 1, got {}'.format(self.dim))
        if self.c_min < 2 or self.c_min > self.c_max:
            raise ValueError('need 2 <= c_min <= c_max, got c_min={} '
                             'c_max={}'.format(self.c_min, self.c_max))
        if self.clusters < 1:
            raise ValueError('clusters must be >= 1, got {}'.format(
                self.clusters))
        if not self.sigma > 0:
            raise ValueError('sigma must be > 0, got {}'.format(self.sigma))
        if self.max_topics < 1:
            raise ValueError('max_topics must be >= 1, got {}'.format(
                self.max_topics))


def topic_centroids(spec: GeneratorSpec):
    rng = np.random.default_rng(spec.seed)
    centroids = rng.standard_normal((spec.clusters, spec.dim))
    return l2_normalize(centroids).astype(np.float64)


def _sample_objects(spec, centroids, n, rng):
    tokens, counts, topics = [], [], []
    max_topics = min(spec.max_topics, spec.clusters)
    for _ in range(n):
        c = int(rng.integers(spec.c_min, spec.c_max + 1))
        t = int(rng.integers(1, max_topics + 1))
        chosen = np.sort(rng.choice(spec.clusters, size=t, replace=False))
        mix = rng.dirichlet(np.ones(t))
        labels = chosen[rng.choice(t, size=c, p=mix)]
        noise = rng.standard_normal((c, spec.dim)) * spec.sigma
        tokens.append(l2_normalize(centroids[labels] + noise))
        counts.append(c)
        topics.append(set(int(x) for x in chosen))
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    dataset = Dataset(spec.dim, np.concatenate(tokens, axis=0), offsets,
                      normalized=True)
    dataset.validate()
    return dataset, topics


def generate_synthetic(spec: GeneratorSpec, return_topics=False):
    centroids = topic_centroids(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed,
                                                        OBJECT_STREAM]))
    dataset, topics = _sample_objects(spec, centroids, spec.n, rng)
    return (dataset, topics) if return_topics else dataset


def generate_queries(spec: GeneratorSpec, n, seed, return_topics=False):
    """Queries over the same topics as `spec`, from an independent stream."""
    centroids = topic_centroids(spec)
    rng = np.random.default_rng(np.random.SeedSequence([seed, QUERY_STREAM]))
    queries, topics = _sample_objects(spec, centroids, n, rng)
    return (queries, topics) if return_topics else queries
