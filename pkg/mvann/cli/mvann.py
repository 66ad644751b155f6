# Copyright (c) 2023 Binbin Zhang (binbzha@qq.com)
#                    Shuai Wang (wsstriving@gmail.com)
#               2025 mvann authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np
import tableprint as tp

from mvann.cli.utils import get_args
from mvann.dataset.dataset import truncate_tokens
from mvann.dataset.synthetic import (GeneratorSpec, generate_queries,
                                     generate_synthetic)
from mvann.index.ant import build_ant
from mvann.index.audit import run_audits
from mvann.index.mv_index import IndexParams, build_index, graph_stats
from mvann.index.search import SearchParams, knn_search
from mvann.index.token_index import TokenHnswParams, build_token_index
from mvann.similarity.usim import metric_preset
from mvann.utils.file_utils import (import_kaldi, load_index, read_mvd,
                                    read_mvgt, save_index, write_mvd,
                                    write_mvgt)
from mvann.utils.oracle import ground_truth, recall
from mvann.utils.utils import get_logger, resolve_seed, validate_path

logger = logging.getLogger('mvann')

BENCH_COLUMNS = ['efS', 'k', 'recall', 'lat_mean_ms', 'lat_p50_ms',
                 'lat_p95_ms', 'n_queries']
WARMUP_QUERIES = 10


@dataclass
class BenchRecord:
    efS: int
    k: int
    recall: float
    lat_mean_ms: float
    lat_p50_ms: float
    lat_p95_ms: float
    n_queries: int

    def row(self):
        return [self.efS, self.k, '{:.6f}'.format(self.recall),
                '{:.4f}'.format(self.lat_mean_ms),
                '{:.4f}'.format(self.lat_p50_ms),
                '{:.4f}'.format(self.lat_p95_ms), self.n_queries]


def similarity_from_args(args):
    if args.metric != 'agg-gnn' and args.gamma != 1:
        logger.warning('--gamma {} ignored by metric {}'.format(
            args.gamma, args.metric))
    gamma = args.gamma if args.metric == 'agg-gnn' else None
    return metric_preset(args.metric, gamma, distance=args.distance)


def run_generate(args):
    seed = resolve_seed(args.seed)
    spec = GeneratorSpec(n=args.n, dim=args.dim, c_min=args.c_min,
                         c_max=args.c_max, clusters=args.clusters,
                         sigma=args.sigma, seed=seed)
    dataset = generate_synthetic(spec)
    write_mvd(args.out, dataset)
    print('wrote {}: {} objects, {} tokens'.format(args.out, len(dataset),
                                                    dataset.num_tokens))
    if args.queries > 0:
        if args.queries_out is None:
            raise ValueError('--queries needs --queries-out')
        qseed = seed + 1 if args.query_seed is None else args.query_seed
        queries = generate_queries(spec, args.queries, qseed)
        write_mvd(args.queries_out, queries)
        print('wrote {}: {} queries, {} tokens'.format(
            args.queries_out, len(queries), queries.num_tokens))


def run_import(args):
    dataset, _ = import_kaldi(args.scp, args.normalize)
    write_mvd(args.out, dataset)
    print('wrote {}: {} objects, {} tokens'.format(args.out, len(dataset),
                                                    dataset.num_tokens))


def print_stats(stats):
    for layer in stats['layers']:
        print('layer {layer}: {nodes} nodes, {edges} edges, mean degree '
              '{mean_degree:.2f}, max degree {max_degree}'.format(**layer))
    print('entry point {} on layer {}'.format(stats['entry_point'],
                                              stats['max_layer']))


def run_build(args):
    seed = resolve_seed(args.seed)
    dataset = read_mvd(args.data)
    sim = similarity_from_args(args)
    params = IndexParams(M=args.M, ef_construction=args.ef_construction,
                         m_l=args.ml, seed=seed, sim=sim,
                         approx_min_tokens=args.approx_min_tokens,
                         accel_build=args.accel_build)
    logger.info('building over {} objects with {}'.format(len(dataset),
                                                          params))
    start = time.time()
    index = build_index(dataset, params, threads=args.threads,
                        progress=args.verbose)
    graph_time = time.time() - start
    ant = token_index = None
    if not args.no_ant:
        token_index = build_token_index(
            dataset, TokenHnswParams(args.token_M, args.token_ef, seed),
            progress=args.verbose)
        ant = build_ant(dataset, token_index, params.M, sim.gamma,
                        threads=args.threads, progress=args.verbose)
    total = time.time() - start
    sections = save_index(args.out, index, ant, token_index,
                          data_path=args.data)
    print('build time {:.3f}s (graph {:.3f}s)'.format(total, graph_time))
    print('index size {} bytes'.format(sum(sections.values())))
    print_stats(graph_stats(index))


def run_ground_truth(args):
    dataset = read_mvd(args.data)
    queries = read_mvd(args.queries)
    sim = similarity_from_args(args)
    gt = ground_truth(dataset, queries, args.k, sim, threads=args.threads,
                      progress=args.verbose)
    write_mvgt(args.out, gt)
    print('wrote {}: {} queries, k={}'.format(args.out, len(gt), gt.k))


def _load_for_search(args):
    dataset = read_mvd(args.data) if args.data else None
    index, ant, _ = load_index(args.index, dataset)
    queries = read_mvd(args.queries)
    if args.query_tokens is not None:
        queries = truncate_tokens(queries, args.query_tokens)
    if queries.dim != index.dataset.dim:
        raise ValueError('queries have dimension {}, index {}'.format(
            queries.dim, index.dataset.dim))
    sim = replace(index.params.sim, approx=args.approx,
                  exact_rerank=args.exact_rerank)
    if args.augmented and ant is None:
        logger.warning('{} has no navigation table, searching without '
                       'augmentation'.format(args.index))
    return index, ant, queries, sim


def run_search(args):
    index, ant, queries, sim = _load_for_search(args)
    params = SearchParams(k=args.k, ef_search=args.ef_search,
                          augmented=args.augmented, sim=sim)
    lines = []
    for qid, Q in enumerate(queries):
        start = time.perf_counter()
        result = knn_search(index, ant, Q, params)
        elapsed = (time.perf_counter() - start) * 1000.0
        lines.append(json.dumps({
            'query': qid,
            'ids': [i for i, _ in result],
            'scores': [s for _, s in result],
            'latency_ms': elapsed,
        }))
    if args.out is None:
        sys.stdout.write('\n'.join(lines) + '\n')
    else:
        validate_path(args.out)
        with open(args.out, 'w') as fout:
            fout.write('\n'.join(lines) + '\n')


def bench_one(index, ant, queries, gt, params: SearchParams):
    """One sweep point; a warm-up pass runs before the timed one."""
    for qid in range(min(WARMUP_QUERIES, len(queries))):
        knn_search(index, ant, queries[qid], params)
    latencies, recalls = [], []
    for qid, Q in enumerate(queries):
        start = time.perf_counter()
        result = knn_search(index, ant, Q, params)
        latencies.append((time.perf_counter() - start) * 1000.0)
        recalls.append(recall([i for i, _ in result], gt.ids[qid][:params.k],
                              params.k))
    latencies = np.asarray(latencies)
    return BenchRecord(params.ef_search, params.k, float(np.mean(recalls)),
                       float(latencies.mean()),
                       float(np.percentile(latencies, 50)),
                       float(np.percentile(latencies, 95)), len(queries))


def run_bench(args):
    index, ant, queries, sim = _load_for_search(args)
    gt = read_mvgt(args.ground_truth)
    if len(gt) != len(queries):
        raise ValueError('ground truth covers {} queries, {} given'.format(
            len(gt), len(queries)))
    if gt.k < args.k:
        raise ValueError('ground truth holds k={}, bench asks for k={}'
                         .format(gt.k, args.k))
    logger.info('index file {} is {} bytes'.format(
        args.index, os.path.getsize(args.index)))
    records = []
    for ef in args.ef_sweep:
        params = SearchParams(k=args.k, ef_search=ef,
                              augmented=args.augmented, sim=sim)
        records.append(bench_one(index, ant, queries, gt, params))
        logger.info('efS={} recall={:.4f} mean={:.3f}ms'.format(
            ef, records[-1].recall, records[-1].lat_mean_ms))
    validate_path(args.out)
    with open(args.out, 'w', newline='') as fout:
        writer = csv.writer(fout)
        writer.writerow(BENCH_COLUMNS)
        for r in records:
            writer.writerow(r.row())
    tp.table([r.row() for r in records], BENCH_COLUMNS, width=11)


def run_audit(args):
    dataset = read_mvd(args.data) if args.data else None
    index, ant, token_index = load_index(args.index, dataset)
    violations = run_audits(index, ant, token_index)
    print_stats(graph_stats(index))
    if violations:
        for v in violations:
            logger.error('audit: {}'.format(v))
        return 1
    print('audit passed')
    return 0


COMMANDS = {
    'generate': run_generate,
    'import': run_import,
    'build': run_build,
    'ground-truth': run_ground_truth,
    'search': run_search,
    'bench': run_bench,
    'audit': run_audit,
}


def main(argv=None):
    parser, args = get_args(argv)
    get_logger(level=logging.DEBUG if args.verbose else logging.INFO)
    if args.command == 'generate' and args.c_min > args.c_max:
        parser.error('--c-min ({}) must not exceed --c-max ({})'.format(
            args.c_min, args.c_max))
    if args.command == 'search' and args.k > args.ef_search:
        parser.error('--k ({}) must not exceed --ef-search ({})'.format(
            args.k, args.ef_search))
    try:
        return COMMANDS[args.command](args) or 0
    except (ValueError, RuntimeError, OSError) as e:
        logger.error('{}: {}'.format(args.command, e))
        return 1


if __name__ == '__main__':
    sys.exit(main())
