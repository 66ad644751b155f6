# Copyright (c) 2022 Hongji Wang (jijijiang77@gmail.com)
#               2025 mvann authors
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
"""Readers and writers for the on-disk formats.

All formats are little-endian and start with a magic and a u16 version.

  .mvd   dataset: "MVD1", version, flags (bit0 weights, bit1 normalized),
         dim u32, count u64; per object u32 c, [c f32 weights], c*dim f32.
  .mvgt  ground truth: "MVGT", version, k u32, queries u64; per query
         k * (u64 id, f64 score).
  .mvix  index: "MVIX", version, flags (bit0 table, bit1 token graph),
         sha256 of the dataset's .mvd bytes, build parameters, the layered
         graph, the token graph and the navigation table.
"""

import hashlib
import os
import logging
import struct

import kaldiio
import numpy as np

from mvann.dataset.dataset import Dataset, MultiVector, l2_normalize
from mvann.index.ant import AntTable
from mvann.index.mv_index import IndexParams, MvIndex
from mvann.index.token_index import TokenHnswParams, TokenIndex
from mvann.similarity.usim import DISTANCES, SimilarityConfig
from mvann.utils.oracle import GroundTruth
from mvann.utils.utils import validate_path

logger = logging.getLogger(__name__)

MVD_MAGIC = b'MVD1'
MVD_VERSION = 1
MVD_HEADER = struct.Struct('<4sHHIQ')
FLAG_WEIGHTS = 1
FLAG_NORMALIZED = 2

MVGT_MAGIC = b'MVGT'
MVGT_VERSION = 1
MVGT_HEADER = struct.Struct('<4sHIQ')
MVGT_ROW = np.dtype([('id', '<u8'), ('score', '<f8')])

MVIX_MAGIC = b'MVIX'
MVIX_VERSION = 1
MVIX_HEADER = struct.Struct('<4sHH32s')
FLAG_ANT = 1
FLAG_TOKEN_GRAPH = 2
U32 = struct.Struct('<I')
U64 = struct.Struct('<Q')
PARAMS = struct.Struct('<IIdqIIBBBBB')
TOKEN_PARAMS = struct.Struct('<IIqqI')
ANT_PARAMS = struct.Struct('<IIIQ')


class FormatError(ValueError):

    def __init__(self, message, offset):
        self.offset = int(offset)
        super(FormatError, self).__init__('{} (at byte offset {})'.format(
            message, self.offset))


class DatasetMismatchError(ValueError):
    pass


class _Reader(object):

    def __init__(self, buf, what):
        self.buf = memoryview(buf)
        self.offset = 0
        self.what = what

    def fail(self, message, offset=None):
        raise FormatError('{}: {}'.format(self.what, message),
                          self.offset if offset is None else offset)

    def take(self, size):
        if self.offset + size > len(self.buf):
            self.fail('truncated, need {} more bytes, {} left'.format(
                size, len(self.buf) - self.offset))
        chunk = self.buf[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        start = self.offset
        out = np.frombuffer(self.take(dtype.itemsize * int(count)),
                            dtype=dtype, count=int(count))
        return out, start

    def finish(self):
        if self.offset != len(self.buf):
            self.fail('{} trailing bytes'.format(len(self.buf) - self.offset))


def _read_bytes(path):
    with open(path, 'rb') as fin:
        return fin.read()


def _write_bytes(path, data):
    validate_path(path)
    with open(path, 'wb') as fout:
        fout.write(data)


def mvd_bytes(dataset: Dataset):
    flags = (FLAG_WEIGHTS if dataset.has_weights else 0) | \
        (FLAG_NORMALIZED if dataset.normalized else 0)
    parts = [MVD_HEADER.pack(MVD_MAGIC, MVD_VERSION, flags, dataset.dim,
                             len(dataset))]
    for mv in dataset:
        parts.append(U32.pack(len(mv)))
        if dataset.has_weights:
            parts.append(mv.weights.astype('<f4').tobytes())
        parts.append(mv.tokens.astype('<f4').tobytes())
    return b''.join(parts)


def write_mvd(path, dataset: Dataset):
    _write_bytes(path, mvd_bytes(dataset))


def parse_mvd(buf, what='mvd'):
    reader = _Reader(buf, what)
    magic, version, flags, dim, count = reader.unpack(MVD_HEADER)
    if magic != MVD_MAGIC:
        reader.fail('bad magic {!r}'.format(magic), 0)
    if version != MVD_VERSION:
        reader.fail('unsupported version {}'.format(version), 4)
    if flags & ~(FLAG_WEIGHTS | FLAG_NORMALIZED):
        reader.fail('unknown flags 0x{:x}'.format(flags), 6)
    if dim < 1:
        reader.fail('dimension must be >= 1', 8)
    has_weights = bool(flags & FLAG_WEIGHTS)
    smallest = U32.size + 4 * dim + (4 if has_weights else 0)
    if count > (len(reader.buf) - MVD_HEADER.size) // smallest:
        reader.fail('object count {} does not fit in {} bytes'.format(
            count, len(reader.buf)), 12)
    counts = []
    tokens, weights = [], []
    for i in range(count):
        (c, ) = reader.unpack(U32)
        if c < 1:
            reader.fail('object {} has no tokens'.format(i), reader.offset - 4)
        if has_weights:
            w, at = reader.array('<f4', c)
            bad = np.flatnonzero(~np.isfinite(w))
            if bad.size:
                reader.fail('object {} has non-finite weights'.format(i),
                            at + 4 * int(bad[0]))
            bad = np.flatnonzero((w < 0) | (w > 1))
            if bad.size:
                reader.fail('object {} has weight {} outside [0, 1]'.format(
                    i, float(w[bad[0]])), at + 4 * int(bad[0]))
            weights.append(w)
        t, at = reader.array('<f4', c * dim)
        bad = np.flatnonzero(~np.isfinite(t))
        if bad.size:
            reader.fail('object {} has non-finite values'.format(i),
                        at + 4 * int(bad[0]))
        tokens.append(t.reshape(c, dim))
        counts.append(c)
    reader.finish()
    offsets = np.zeros(count + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    if count:
        all_tokens = np.concatenate(tokens, axis=0).astype(np.float32)
    else:
        all_tokens = np.zeros((0, dim), dtype=np.float32)
    all_weights = np.concatenate(weights).astype(np.float32) \
        if has_weights and count else None
    dataset = Dataset(dim, all_tokens, offsets, all_weights,
                      bool(flags & FLAG_NORMALIZED))
    dataset.validate()
    return dataset


def read_mvd(path) -> Dataset:
    return parse_mvd(_read_bytes(path), path)


def dataset_hash(dataset: Dataset):
    return hashlib.sha256(mvd_bytes(dataset)).digest()


def write_mvgt(path, gt: GroundTruth):
    rows = np.zeros(gt.ids.shape, dtype=MVGT_ROW)
    rows['id'] = gt.ids
    rows['score'] = gt.scores
    _write_bytes(path, MVGT_HEADER.pack(MVGT_MAGIC, MVGT_VERSION, gt.k,
                                        len(gt)) + rows.tobytes())


def read_mvgt(path) -> GroundTruth:
    reader = _Reader(_read_bytes(path), path)
    magic, version, k, count = reader.unpack(MVGT_HEADER)
    if magic != MVGT_MAGIC:
        reader.fail('bad magic {!r}'.format(magic), 0)
    if version != MVGT_VERSION:
        reader.fail('unsupported version {}'.format(version), 4)
    rows, _ = reader.array(MVGT_ROW, k * count)
    reader.finish()
    rows = rows.reshape(count, k)
    return GroundTruth(rows['id'].astype(np.int64),
                       rows['score'].astype(np.float64))


def _pack_layer(layer, with_weights=True):
    nodes = np.fromiter(layer.keys(), dtype='<u8', count=len(layer))
    offsets = np.zeros(len(layer) + 1, dtype='<u8')
    offsets[1:] = np.cumsum([len(adj) for adj in layer.values()])
    neighbors = np.fromiter((p for adj in layer.values() for p in adj),
                            dtype='<u8', count=int(offsets[-1]))
    parts = [struct.pack('<Q', len(layer)), nodes.tobytes(), offsets.tobytes(),
             neighbors.tobytes()]
    if with_weights:
        weights = np.fromiter((w for adj in layer.values()
                               for w in adj.values()),
                              dtype='<f8', count=int(offsets[-1]))
        parts.append(weights.tobytes())
    return b''.join(parts)


def _unpack_layer(reader, limit, with_weights=True):
    (count, ) = reader.unpack(U64)
    nodes, at = reader.array('<u8', count)
    if np.any(nodes >= limit):
        reader.fail('layer node id out of range', at)
    offsets, at = reader.array('<u8', count + 1)
    if offsets[0] != 0 or np.any(np.diff(offsets.astype(np.int64)) < 0):
        reader.fail('malformed adjacency offsets', at)
    total = int(offsets[-1])
    neighbors, at = reader.array('<u8', total)
    if np.any(neighbors >= limit):
        reader.fail('neighbor id out of range', at)
    weights = reader.array('<f8', total)[0] if with_weights else None
    nodes = nodes.tolist()
    neighbors = neighbors.tolist()
    offsets = offsets.tolist()
    layer = {}
    for j, node in enumerate(nodes):
        b, e = offsets[j], offsets[j + 1]
        if with_weights:
            layer[node] = dict(zip(neighbors[b:e], weights[b:e].tolist()))
        else:
            layer[node] = dict.fromkeys(neighbors[b:e], 0.0)
    return layer


def _pack_params(params: IndexParams):
    sim = params.sim
    return PARAMS.pack(params.M, params.ef_construction, params.m_l,
                       params.seed, params.approx_min_tokens, sim.gamma,
                       DISTANCES.index(sim.distance), int(sim.use_weights),
                       int(sim.approx), int(sim.exact_rerank),
                       int(params.accel_build))


def _unpack_params(reader):
    at = reader.offset
    (M, efc, m_l, seed, min_tokens, gamma, distance, use_weights, approx,
     rerank, accel_build) = reader.unpack(PARAMS)
    if distance >= len(DISTANCES):
        reader.fail('unknown distance code {}'.format(distance), at)
    try:
        sim = SimilarityConfig(gamma, DISTANCES[distance], bool(use_weights),
                               bool(approx), bool(rerank))
        return IndexParams(M, efc, m_l, seed, sim, min_tokens,
                           bool(accel_build))
    except ValueError as e:
        reader.fail('invalid parameters: {}'.format(e), at)


def save_index(path, index: MvIndex, ant: AntTable = None,
               token_index: TokenIndex = None, data_path=None):
    """Write the graph, token graph and table into one file.

    data_path, when given, is recorded so the dataset can be found again
    at load time. Returns the byte size of every section.
    """
    n = len(index.dataset)
    if len(index) != n:
        raise ValueError('only a complete index can be saved: {} of {} '
                         'objects indexed'.format(len(index), n))
    flags = (FLAG_ANT if ant is not None else 0) | \
        (FLAG_TOKEN_GRAPH if token_index is not None else 0)
    sections = {}
    head = MVIX_HEADER.pack(MVIX_MAGIC, MVIX_VERSION, flags,
                            dataset_hash(index.dataset))
    where = b"" if data_path is None else \
        os.path.abspath(data_path).encode("utf8")
    head += U32.pack(len(where)) + where
    head += _pack_params(index.params)
    node_layer = np.array([index.node_layer[i] for i in range(n)],
                          dtype='<i4')
    head += U64.pack(n) + node_layer.tobytes()
    ep = -1 if index.entry_point is None else index.entry_point
    head += struct.pack('<qI', ep, len(index.layers))
    sections['header'] = len(head)
    graph = b''.join(_pack_layer(layer) for layer in index.layers)
    sections['graph'] = len(graph)
    parts = [head, graph]
    if token_index is not None:
        tp = token_index.params
        tep = -1 if token_index.entry_point is None \
            else token_index.entry_point
        body = TOKEN_PARAMS.pack(tp.M, tp.ef_construction, tp.seed, tep,
                                 len(token_index.layers))
        body += b''.join(_pack_layer(layer, with_weights=False)
                         for layer in token_index.layers)
        sections['token_graph'] = len(body)
        parts.append(body)
    if ant is not None:
        body = ANT_PARAMS.pack(ant.M, ant.gamma, ant.m_prime, ant.num_tokens)
        body += ant.offsets.astype('<u8').tobytes()
        body += ant.targets.astype('<u8').tobytes()
        body += ant.scores.astype('<f8').tobytes()
        sections['ant'] = len(body)
        parts.append(body)
    _write_bytes(path, b''.join(parts))
    logger.info('saved index to {}: {}'.format(path, sections))
    return sections


def _restore_token_sims(token_index):
    vectors = token_index.vectors
    for layer in token_index.layers:
        for key, adj in layer.items():
            if adj:
                keys = list(adj)
                sims = (vectors[keys] @ vectors[key]).tolist()
                layer[key] = dict(zip(keys, sims))


def load_index(path, dataset: Dataset = None):
    """Read an index written by save_index and check it against the data.

    Without a dataset, the one recorded at save time is read. Returns
    (index, ant, token_index); absent sections come back as None.
    """
    reader = _Reader(_read_bytes(path), path)
    magic, version, flags, digest = reader.unpack(MVIX_HEADER)
    if magic != MVIX_MAGIC:
        reader.fail('bad magic {!r}'.format(magic), 0)
    if version != MVIX_VERSION:
        reader.fail('unsupported version {}'.format(version), 4)
    if flags & ~(FLAG_ANT | FLAG_TOKEN_GRAPH):
        reader.fail('unknown flags 0x{:x}'.format(flags), 6)
    (size, ) = reader.unpack(U32)
    where = bytes(reader.take(size)).decode('utf8', errors='replace')
    if dataset is None:
        if not where:
            raise ValueError('{} records no dataset path, pass the dataset '
                             'explicitly'.format(path))
        dataset = read_mvd(where)
    if digest != dataset_hash(dataset):
        raise DatasetMismatchError(
            '{} was built from different data than the dataset given'
            .format(path))
    params = _unpack_params(reader)
    (n, ) = reader.unpack(U64)
    if n != len(dataset):
        reader.fail('index holds {} objects, dataset {}'.format(
            n, len(dataset)), reader.offset - 8)
    node_layer, at = reader.array('<i4', n)
    if np.any(node_layer < 0):
        reader.fail('negative node layer', at)
    ep, num_layers = reader.unpack(struct.Struct('<qI'))
    if ep >= n or ep < -1:
        reader.fail('entry point {} out of range'.format(ep),
                    reader.offset - 12)
    index = MvIndex(dataset, params)
    index.node_layer = {i: int(l) for i, l in enumerate(node_layer)}
    index.entry_point = None if ep < 0 else int(ep)
    index.layers = [_unpack_layer(reader, n) for _ in range(num_layers)]

    token_index = None
    if flags & FLAG_TOKEN_GRAPH:
        at = reader.offset
        m_t, efc_t, seed_t, tep, t_layers = reader.unpack(TOKEN_PARAMS)
        try:
            tparams = TokenHnswParams(m_t, efc_t, seed_t)
        except ValueError as e:
            reader.fail('invalid token graph parameters: {}'.format(e), at)
        if tep >= dataset.num_tokens or tep < -1:
            reader.fail('token entry point {} out of range'.format(tep), at)
        token_index = TokenIndex(dataset, tparams)
        token_index.entry_point = None if tep < 0 else int(tep)
        token_index.layers = [
            _unpack_layer(reader, dataset.num_tokens, with_weights=False)
            for _ in range(t_layers)
        ]
        _restore_token_sims(token_index)

    ant = None
    if flags & FLAG_ANT:
        at = reader.offset
        M, gamma, m_prime, num_tokens = reader.unpack(ANT_PARAMS)
        if num_tokens != dataset.num_tokens:
            reader.fail('table covers {} tokens, dataset has {}'.format(
                num_tokens, dataset.num_tokens), at)
        offsets, at = reader.array('<u8', num_tokens + 1)
        if offsets[0] != 0 or np.any(np.diff(offsets.astype(np.int64)) < 0):
            reader.fail('malformed table offsets', at)
        targets, at = reader.array('<u8', int(offsets[-1]))
        if np.any(targets >= n):
            reader.fail('table target out of range', at)
        scores, _ = reader.array('<f8', int(offsets[-1]))
        ant = AntTable(dataset.offsets, offsets.astype(np.int64),
                       targets.astype(np.int64), scores.astype(np.float64),
                       M, gamma, m_prime)
    reader.finish()
    return index, ant, token_index


def import_kaldi(scp_path, normalize=False):
    """One object per matrix of a Kaldi archive, rows as token vectors.

    Objects take ids 0..n-1 in scp order; the keys are returned alongside.
    """
    mvs, keys = [], []
    for key, mat in kaldiio.load_scp_sequential(scp_path):
        mat = np.asarray(mat, dtype=np.float32)
        if mat.ndim == 1:
            mat = mat.reshape(1, -1)
        if normalize:
            mat = l2_normalize(mat)
        mvs.append(MultiVector.create(len(mvs), mat))
        keys.append(key)
    if not mvs:
        raise ValueError('no matrices found in {}'.format(scp_path))
    logger.info('imported {} objects from {}'.format(len(mvs), scp_path))
    return Dataset.from_multivectors(mvs, normalized=normalize,
                                     with_weights=False), keys
