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

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

NORM_TOLERANCE = 1e-4


class TokenRef(NamedTuple):
    """A token vector addressed through its owning multi-vector."""
    owner: int
    slot: int


@dataclass
class MultiVector:
    """An identified sequence of token vectors with per-token weights.

    tokens is a (c, d) float32 array, weights a (c,) float32 array.
    """
    id: int
    tokens: np.ndarray
    weights: np.ndarray

    @classmethod
    def create(cls, id, tokens, weights=None):
        tokens = np.ascontiguousarray(np.asarray(tokens, dtype=np.float32))
        if tokens.ndim == 1:
            tokens = tokens.reshape(1, -1)
        if weights is None:
            weights = np.ones(tokens.shape[0], dtype=np.float32)
        else:
            weights = np.asarray(weights, dtype=np.float32).reshape(-1)
        mv = cls(int(id), tokens, weights)
        mv.validate()
        return mv

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def dim(self):
        return self.tokens.shape[1]

    def validate(self):
        if self.id < 0:
            raise ValueError('multi-vector id must be non-negative, '
                             'got {}'.format(self.id))
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError('multi-vector {} has no token vectors'.format(
                self.id))
        if self.tokens.shape[1] < 1:
            raise ValueError('multi-vector {} has dimension 0'.format(self.id))
        if self.weights.shape != (self.tokens.shape[0], ):
            raise ValueError(
                'multi-vector {}: {} tokens but {} weights'.format(
                    self.id, self.tokens.shape[0], self.weights.shape[0]))
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError('multi-vector {} has non-finite coordinates'
                             .format(self.id))
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError('multi-vector {} has weights outside [0, 1]'
                             .format(self.id))


def l2_normalize(tokens):
    norms = np.linalg.norm(tokens, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return (tokens / norms).astype(np.float32)


class Dataset(object):
    """Dense collection of multi-vectors with ids 0..n-1.

    All token vectors are stored in one (N, d) float32 matrix; object i owns
    rows offsets[i]:offsets[i + 1].
    """

    def __init__(self,
                 dim: int,
                 tokens: np.ndarray,
                 offsets: np.ndarray,
                 weights: Optional[np.ndarray] = None,
                 normalized: bool = False):
        self.dim = int(dim)
        self.tokens = np.ascontiguousarray(tokens, dtype=np.float32)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.has_weights = weights is not None
        if weights is None:
            weights = np.ones(self.tokens.shape[0], dtype=np.float32)
        self.weights = np.ascontiguousarray(weights, dtype=np.float32)
        self.normalized = bool(normalized)
        counts = np.diff(self.offsets)
        self.token_owner = np.repeat(np.arange(len(counts), dtype=np.int64),
                                     counts)
        self.token_slot = (np.arange(self.tokens.shape[0], dtype=np.int64) -
                           self.offsets[self.token_owner])
        self._tokens64 = None

    @classmethod
    def from_multivectors(cls,
                          mvs: Sequence[MultiVector],
                          dim: Optional[int] = None,
                          normalized: bool = False,
                          with_weights: Optional[bool] = None):
        if dim is None:
            if len(mvs) == 0:
                raise ValueError('cannot infer the dimension of an empty '
                                 'dataset')
            dim = mvs[0].dim
        counts = [len(mv) for mv in mvs]
        offsets = np.zeros(len(mvs) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(counts)
        if len(mvs) > 0:
            tokens = np.concatenate([mv.tokens for mv in mvs], axis=0)
            weights = np.concatenate([mv.weights for mv in mvs])
        else:
            tokens = np.zeros((0, dim), dtype=np.float32)
            weights = np.zeros(0, dtype=np.float32)
        if with_weights is None:
            with_weights = bool(np.any(weights != 1.0))
        dataset = cls(dim, tokens, offsets, weights if with_weights else None,
                      normalized)
        for i, mv in enumerate(mvs):
            if mv.id != i:
                raise ValueError('multi-vector ids must be dense: position {} '
                                 'holds id {}'.format(i, mv.id))
        dataset.validate()
        return dataset

    def __len__(self):
        return len(self.offsets) - 1

    def __getitem__(self, i) -> MultiVector:
        i = int(i)
        if i < 0 or i >= len(self):
            raise IndexError('multi-vector id {} out of range [0, {})'.format(
                i, len(self)))
        b, e = self.offsets[i], self.offsets[i + 1]
        return MultiVector(i, self.tokens[b:e], self.weights[b:e])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def num_tokens(self):
        return self.tokens.shape[0]

    @property
    def tokens64(self):
        if self._tokens64 is None:
            self._tokens64 = self.tokens.astype(np.float64)
        return self._tokens64

    def cardinality(self, i):
        return int(self.offsets[i + 1] - self.offsets[i])

    def max_cardinality(self):
        if len(self) == 0:
            return 0
        return int(np.diff(self.offsets).max())

    def token_gid(self, ref: TokenRef):
        owner, slot = int(ref[0]), int(ref[1])
        if owner < 0 or owner >= len(self):
            raise ValueError('token owner {} out of range'.format(owner))
        if slot < 0 or slot >= self.cardinality(owner):
            raise ValueError('token slot {} out of range for owner {}'.format(
                slot, owner))
        return int(self.offsets[owner] + slot)

    def token_ref(self, gid) -> TokenRef:
        return TokenRef(int(self.token_owner[gid]), int(self.token_slot[gid]))

    def gather(self, ids: Sequence[int]):
        """Stack the token rows of several objects.

        Returns (block, starts) where block is float64 and object ids[j]
        occupies block[starts[j]:starts[j + 1]].
        """
        offsets = self.offsets
        counts = np.array([offsets[i + 1] - offsets[i] for i in ids],
                          dtype=np.int64)
        starts = np.zeros(len(ids) + 1, dtype=np.int64)
        starts[1:] = np.cumsum(counts)
        rows = np.concatenate(
            [np.arange(offsets[i], offsets[i + 1]) for i in ids])
        return self.tokens64[rows], starts

    def validate(self):
        if self.dim < 1:
            raise ValueError('dimension must be >= 1, got {}'.format(self.dim))
        if self.tokens.ndim != 2 or self.tokens.shape[1] != self.dim:
            raise ValueError('token matrix shape {} does not match dim {}'
                             .format(self.tokens.shape, self.dim))
        counts = np.diff(self.offsets)
        if self.offsets[0] != 0 or np.any(counts < 1) or \
                self.offsets[-1] != self.tokens.shape[0]:
            raise ValueError('every multi-vector needs at least one token')
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError('dataset holds non-finite coordinates')
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError('dataset holds weights outside [0, 1]')
        if self.normalized and self.num_tokens > 0:
            norms = np.linalg.norm(self.tokens.astype(np.float64), axis=1)
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(norms[worst] - 1.0) > NORM_TOLERANCE:
                ref = self.token_ref(worst)
                raise ValueError(
                    'dataset flagged normalized but token {} of object {} '
                    'has norm {:.6f}'.format(ref.slot, ref.owner,
                                             norms[worst]))

    def normalize(self):
        """Return an L2-normalized copy flagged `normalized`."""
        return Dataset(self.dim, l2_normalize(self.tokens), self.offsets,
                       self.weights if self.has_weights else None, True)


def truncate_tokens(dataset: Dataset, max_tokens: int) -> Dataset:
    """Keep the first max_tokens token vectors of every object."""
    if max_tokens < 1:
        raise ValueError('max_tokens must be >= 1, got {}'.format(max_tokens))
    mvs: List[MultiVector] = []
    for mv in dataset:
        mvs.append(
            MultiVector(mv.id, mv.tokens[:max_tokens],
                        mv.weights[:max_tokens]))
    return Dataset.from_multivectors(mvs,
                                     dim=dataset.dim,
                                     normalized=dataset.normalized,
                                     with_weights=dataset.has_weights)
