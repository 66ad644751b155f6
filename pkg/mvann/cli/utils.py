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

import argparse

METRICS = ['maxsim', 'chamfer', 'agg-gnn']


def on_off(value):
    value = value.lower()
    if value not in ('on', 'off'):
        raise argparse.ArgumentTypeError(
            "expected 'on' or 'off', got {!r}".format(value))
    return value == 'on'


def int_list(value):
    try:
        out = [int(x) for x in value.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected a comma separated list of integers, got {!r}'.format(
                value))
    if not out:
        raise argparse.ArgumentTypeError('empty list')
    return out


def _add_metric_args(parser):
    parser.add_argument('--metric',
                        choices=METRICS,
                        default='maxsim',
                        help='similarity instantiation')
    parser.add_argument('--gamma',
                        type=int,
                        default=1,
                        help='nearest tokens averaged per query token, '
                        'agg-gnn only')
    parser.add_argument('--distance',
                        choices=['ip', 'neg_euclidean'],
                        default='ip',
                        help='token distance')


def _add_common_args(parser):
    parser.add_argument('--seed',
                        type=int,
                        default=None,
                        help='random seed, falls back to $MVANN_SEED, then 42')
    parser.add_argument('-v',
                        '--verbose',
                        action='store_true',
                        help='debug logging and progress bars')


def get_parser():
    parser = argparse.ArgumentParser(
        prog='mvann',
        description='graph-based multi-vector similarity search')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('generate', help='write a synthetic dataset')
    p.add_argument('--n', type=int, default=1000, help='number of objects')
    p.add_argument('--dim', type=int, default=32, help='token dimension')
    p.add_argument('--c-min', type=int, default=8, help='min tokens/object')
    p.add_argument('--c-max', type=int, default=32, help='max tokens/object')
    p.add_argument('--clusters', type=int, default=20, help='topic count')
    p.add_argument('--sigma', type=float, default=0.15, help='token noise')
    p.add_argument('--out', required=True, help='output .mvd file')
    p.add_argument('--queries',
                   type=int,
                   default=0,
                   help='also write this many queries over the same topics')
    p.add_argument('--queries-out', help='output .mvd file for queries')
    p.add_argument('--query-seed',
                   type=int,
                   default=None,
                   help='seed of the query stream, default seed + 1')
    _add_common_args(p)

    p = sub.add_parser('import', help='convert a Kaldi scp archive')
    p.add_argument('--scp', required=True, help='kaldi scp file')
    p.add_argument('--normalize',
                   action='store_true',
                   help='L2-normalize every token vector')
    p.add_argument('--out', required=True, help='output .mvd file')
    _add_common_args(p)

    p = sub.add_parser('build', help='build the graph, token graph and table')
    p.add_argument('--data', required=True, help='input .mvd file')
    p.add_argument('--M', type=int, default=16, help='max degree')
    p.add_argument('--ef-construction',
                   type=int,
                   default=100,
                   help='construction beam width')
    p.add_argument('--ml',
                   type=float,
                   default=None,
                   help='layer normalization factor, default 1/ln(M)')
    p.add_argument('--accel-build',
                   type=on_off,
                   default=True,
                   help='clustered kernel for construction scores of large '
                   'objects, on|off')
    p.add_argument('--approx-min-tokens',
                   type=int,
                   default=16,
                   help='token count from which construction uses the '
                   'clustered kernel')
    p.add_argument('--token-M', type=int, default=32, help='token graph degree')
    p.add_argument('--token-ef',
                   type=int,
                   default=40,
                   help='token graph construction beam width')
    p.add_argument('--no-ant',
                   action='store_true',
                   help='skip the token graph and navigation table')
    p.add_argument('--threads', type=int, default=1, help='worker threads')
    p.add_argument('--out', required=True, help='output .mvix file')
    _add_metric_args(p)
    _add_common_args(p)

    p = sub.add_parser('ground-truth', help='exact top-k by linear scan')
    p.add_argument('--data', required=True, help='input .mvd file')
    p.add_argument('--queries', required=True, help='query .mvd file')
    p.add_argument('--k', type=int, default=10, help='neighbors per query')
    p.add_argument('--threads', type=int, default=1, help='worker threads')
    p.add_argument('--out', required=True, help='output .mvgt file')
    _add_metric_args(p)
    _add_common_args(p)

    for name, text in (('search', 'k-NN search'),
                       ('bench', 'recall / latency sweep')):
        p = sub.add_parser(name, help=text)
        p.add_argument('--index', required=True, help='.mvix file')
        p.add_argument('--data',
                       default=None,
                       help='.mvd file, default the one the index was built '
                       'from')
        p.add_argument('--queries', required=True, help='query .mvd file')
        p.add_argument('--k', type=int, default=10, help='neighbors per query')
        p.add_argument('--augmented',
                       type=on_off,
                       default=True,
                       help='navigation table expansion, on|off')
        p.add_argument('--approx',
                       type=on_off,
                       default=False,
                       help='score candidates with the clustered kernel, '
                       'on|off')
        p.add_argument('--exact-rerank',
                       type=on_off,
                       default=False,
                       help='re-score final candidates exactly, on|off')
        p.add_argument('--query-tokens',
                       type=int,
                       default=None,
                       help='keep only the first N tokens of every query')
        _add_common_args(p)
        if name == 'search':
            p.add_argument('--ef-search', type=int, default=128,
                           help='beam width')
            p.add_argument('--out', default=None,
                           help='JSON lines output, default stdout')
        else:
            p.add_argument('--ground-truth', required=True,
                           help='.mvgt file')
            p.add_argument('--ef-sweep',
                           type=int_list,
                           default=[32, 64, 128, 256],
                           help='comma separated beam widths')
            p.add_argument('--out', required=True, help='output CSV file')

    p = sub.add_parser('audit', help='structural checks of an index file')
    p.add_argument('--index', required=True, help='.mvix file')
    p.add_argument('--data',
                   default=None,
                   help='.mvd file, default the one the index was built from')
    _add_common_args(p)
    return parser


def get_args(argv=None):
    parser = get_parser()
    return parser, parser.parse_args(argv)
