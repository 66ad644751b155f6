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

import csv
import os
import time
from pprint import pformat

import fire
import tableprint as tp

from mvann.cli.mvann import bench_one
from mvann.dataset.dataset import truncate_tokens
from mvann.dataset.synthetic import (GeneratorSpec, generate_queries,
                                     generate_synthetic)
from mvann.index.ant import build_ant
from mvann.index.mv_index import IndexParams, build_index, graph_stats
from mvann.index.search import SearchParams
from mvann.index.token_index import TokenHnswParams, build_token_index
from mvann.similarity.usim import metric_preset
from mvann.utils.file_utils import save_index
from mvann.utils.oracle import ground_truth
from mvann.utils.utils import (get_logger, parse_config_or_kwargs,
                               resolve_seed, set_seed)

TABLE_WIDTH = 11


def similarity_for(gamma, approx=False):
    if gamma == 1:
        return metric_preset('maxsim', approx=approx)
    return metric_preset('aggregate-gnn', gamma, approx=approx)


def index_bytes(configs, tag, index, ant=None):
    """Saves the index under exp_dir and returns its size in bytes."""
    path = os.path.join(configs['exp_dir'], 'index_{}.mvix'.format(tag))
    return sum(save_index(path, index, ant).values())


def build_all(dataset, configs, sim, seed, accel_build=True):
    """Graph, token graph and table; returns them with the build times."""
    params = IndexParams(M=configs['M'],
                         ef_construction=configs['ef_construction'],
                         seed=seed,
                         sim=sim,
                         accel_build=accel_build)
    start = time.time()
    index = build_index(dataset, params, threads=configs['threads'])
    graph_time = time.time() - start
    token_index = build_token_index(
        dataset, TokenHnswParams(configs['token_M'], configs['token_ef'],
                                 seed))
    ant = build_ant(dataset, token_index, params.M, sim.gamma,
                    threads=configs['threads'])
    return index, ant, graph_time, time.time() - start


class Table(object):
    """tableprint rows through the logger, mirrored into a CSV file."""

    def __init__(self, logger, path, header):
        self.logger = logger
        self.header = header
        self.fout = open(path, 'w', newline='')
        self.writer = csv.writer(self.fout)
        self.writer.writerow(header)
        for line in tp.header(header, width=TABLE_WIDTH,
                              style='grid').split('\n'):
            logger.info(line)

    def row(self, values):
        self.writer.writerow(values)
        self.logger.info(tp.row(values, width=TABLE_WIDTH, style='grid'))

    def close(self):
        self.logger.info(tp.bottom(len(self.header), width=TABLE_WIDTH,
                                   style='grid'))
        self.fout.close()


def run_gamma_sweep(logger, configs, dataset, queries, seed):
    table = Table(logger, os.path.join(configs['exp_dir'], 'recall.csv'),
                  ['gamma', 'mode', 'efS', 'recall', 'lat_ms', 'build_s',
                   'index_bytes'])
    for gamma in configs['gammas']:
        sim = similarity_for(gamma)
        index, ant, _, build_s = build_all(dataset, configs, sim, seed)
        size = index_bytes(configs, 'gamma{}'.format(gamma), index, ant)
        gt = ground_truth(dataset, queries, configs['k'], sim,
                          threads=configs['threads'])
        for augmented in (False, True):
            for ef in configs['ef_sweep']:
                params = SearchParams(k=configs['k'], ef_search=ef,
                                      augmented=augmented, sim=sim)
                r = bench_one(index, ant, queries, gt, params)
                table.row([gamma, 'augmented' if augmented else 'plain', ef,
                           round(r.recall, 4), round(r.lat_mean_ms, 3),
                           round(build_s, 2), size])
    table.close()


def run_accel(logger, configs, dataset, seed):
    """Graph construction cost with and without the clustered kernel."""
    table = Table(logger, os.path.join(configs['exp_dir'], 'accel.csv'),
                  ['accel_build', 'build_s', 'evals', 'mean_deg',
                   'index_bytes'])
    sim = similarity_for(1)
    for accel_build in (False, True):
        params = IndexParams(M=configs['M'],
                             ef_construction=configs['ef_construction'],
                             seed=seed,
                             sim=sim,
                             accel_build=accel_build)
        start = time.time()
        index = build_index(dataset, params, threads=configs['threads'])
        elapsed = time.time() - start
        stats = graph_stats(index)
        size = index_bytes(configs, 'accel{}'.format(int(accel_build)),
                           index)
        table.row([accel_build, round(elapsed, 2), index.counter.count,
                   round(stats['layers'][0]['mean_degree'], 2), size])
    table.close()


def run_scaling(logger, configs, seed):
    table = Table(logger, os.path.join(configs['exp_dir'], 'scaling.csv'),
                  ['n', 'build_s', 'index_bytes', 'recall', 'lat_ms'])
    sim = similarity_for(1)
    for n in configs['scaling_sizes']:
        spec = GeneratorSpec(seed=seed, **dict(configs['data'], n=n))
        dataset = generate_synthetic(spec)
        queries = generate_queries(spec, configs['n_queries'], seed + 1)
        index, ant, _, build_s = build_all(dataset, configs, sim, seed)
        size = index_bytes(configs, 'n{}'.format(n), index, ant)
        gt = ground_truth(dataset, queries, configs['k'], sim,
                          threads=configs['threads'])
        params = SearchParams(k=configs['k'],
                              ef_search=configs['scaling_ef'],
                              augmented=True,
                              sim=sim)
        r = bench_one(index, ant, queries, gt, params)
        table.row([n, round(build_s, 2), size, round(r.recall, 4),
                   round(r.lat_mean_ms, 3)])
    table.close()


def run_dim_sweep(logger, configs, seed):
    """Token dimensionality against build cost, size and recall."""
    table = Table(logger, os.path.join(configs['exp_dir'], 'dims.csv'),
                  ['dim', 'build_s', 'index_bytes', 'recall', 'lat_ms'])
    sim = similarity_for(1)
    for dim in configs['dims']:
        spec = GeneratorSpec(seed=seed, **dict(configs['data'], dim=dim))
        dataset = generate_synthetic(spec)
        queries = generate_queries(spec, configs['n_queries'], seed + 1)
        index, ant, _, build_s = build_all(dataset, configs, sim, seed)
        size = index_bytes(configs, 'dim{}'.format(dim), index, ant)
        gt = ground_truth(dataset, queries, configs['k'], sim,
                          threads=configs['threads'])
        params = SearchParams(k=configs['k'],
                              ef_search=configs['sweep_ef'],
                              augmented=True,
                              sim=sim)
        r = bench_one(index, ant, queries, gt, params)
        table.row([dim, round(build_s, 2), size, round(r.recall, 4),
                   round(r.lat_mean_ms, 3)])
    table.close()


def run_k_sweep(logger, configs, dataset, queries, seed):
    """Recall and latency as the number of requested neighbors grows."""
    table = Table(logger, os.path.join(configs['exp_dir'], 'ks.csv'),
                  ['k', 'efS', 'recall', 'lat_ms'])
    sim = similarity_for(1)
    index, ant, _, _ = build_all(dataset, configs, sim, seed)
    gt = ground_truth(dataset, queries, max(configs['ks']), sim,
                      threads=configs['threads'])
    for k in configs['ks']:
        k = min(k, gt.k)
        params = SearchParams(k=k,
                              ef_search=max(configs['sweep_ef'], k),
                              augmented=True,
                              sim=sim)
        r = bench_one(index, ant, queries, gt, params)
        table.row([k, params.ef_search, round(r.recall, 4),
                   round(r.lat_mean_ms, 3)])
    table.close()


def ablation(config='conf/ablation.yaml', **kwargs):
    """Recall, latency and build-cost experiments on synthetic data.

    :config: experiment configuration, every key can be overridden with
             --KEY VALUE
    """
    configs = parse_config_or_kwargs(config, **kwargs)
    os.makedirs(configs['exp_dir'], exist_ok=True)
    logger = get_logger(configs['exp_dir'], 'ablation.log')
    logger.info("<== Passed Arguments ==>")
    for line in pformat(configs).split('\n'):
        logger.info(line)

    seed = resolve_seed(configs.get('seed'))
    set_seed(seed)
    spec = GeneratorSpec(seed=seed, **configs['data'])
    dataset = generate_synthetic(spec)
    queries = generate_queries(spec, configs['n_queries'], seed + 1)
    if configs.get('query_tokens'):
        queries = truncate_tokens(queries, configs['query_tokens'])
    logger.info('{} objects / {} tokens, {} queries'.format(
        len(dataset), dataset.num_tokens, len(queries)))

    if configs.get('gamma_sweep', True):
        run_gamma_sweep(logger, configs, dataset, queries, seed)
    if configs.get('accel', True):
        run_accel(logger, configs, dataset, seed)
    if configs.get('scaling', False):
        run_scaling(logger, configs, seed)
    if configs.get('k_sweep', False):
        run_k_sweep(logger, configs, dataset, queries, seed)
    if configs.get('dim_sweep', False):
        run_dim_sweep(logger, configs, seed)


if __name__ == '__main__':
    fire.Fire(ablation)
