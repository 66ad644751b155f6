import csv
import json

import kaldiio
import numpy as np
import pytest

from mvann.cli.mvann import BENCH_COLUMNS, main
from mvann.dataset.dataset import Dataset
from mvann.index.mv_index import IndexParams, build_index
from mvann.similarity.usim import metric_preset
from mvann.utils.file_utils import (load_index, read_mvd, read_mvgt,
                                    save_index, write_mvd)


@pytest.fixture(scope='module')
def workdir(tmp_path_factory):
    """A small generated dataset with queries and a built index."""
    root = tmp_path_factory.mktemp('cli')
    data, queries = str(root / 'data.mvd'), str(root / 'queries.mvd')
    index = str(root / 'index.mvix')
    assert main(['generate', '--n', '60', '--dim', '8', '--c-min', '2',
                 '--c-max', '6', '--clusters', '4', '--out', data,
                 '--queries', '5', '--queries-out', queries,
                 '--seed', '3']) == 0
    assert main(['build', '--data', data, '--M', '4', '--ef-construction',
                 '16', '--token-M', '8', '--token-ef', '16', '--out',
                 index, '--seed', '3']) == 0
    return root


def test_generate_is_reproducible(tmp_path):
    a, b = str(tmp_path / 'a.mvd'), str(tmp_path / 'b.mvd')
    for path in (a, b):
        assert main(['generate', '--n', '20', '--dim', '4', '--c-min', '2',
                     '--c-max', '3', '--out', path, '--seed', '5']) == 0
    assert open(a, 'rb').read() == open(b, 'rb').read()
    dataset = read_mvd(a)
    assert len(dataset) == 20 and dataset.dim == 4


def test_seed_falls_back_to_the_environment(tmp_path, monkeypatch):
    a, b = str(tmp_path / 'a.mvd'), str(tmp_path / 'b.mvd')
    monkeypatch.setenv('MVANN_SEED', '7')
    assert main(['generate', '--n', '10', '--dim', '4', '--out', a]) == 0
    monkeypatch.delenv('MVANN_SEED')
    assert main(['generate', '--n', '10', '--dim', '4', '--out', b,
                 '--seed', '7']) == 0
    assert open(a, 'rb').read() == open(b, 'rb').read()


def test_usage_errors_exit_with_two(tmp_path, capsys):
    out = str(tmp_path / 'x.mvd')
    with pytest.raises(SystemExit) as e:
        main(['generate', '--c-min', '9', '--c-max', '3', '--out', out])
    assert e.value.code == 2
    assert '--c-min' in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(['search', '--index', 'i', '--queries', 'q', '--k', '20',
              '--ef-search', '10'])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(['search', '--index', 'i', '--queries', 'q', '--augmented',
              'maybe'])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(['frobnicate'])
    assert e.value.code == 2


def test_runtime_errors_exit_with_one(tmp_path):
    missing = str(tmp_path / 'missing.mvd')
    assert main(['build', '--data', missing, '--out',
                 str(tmp_path / 'i.mvix')]) == 1
    data = str(tmp_path / 'd.mvd')
    assert main(['generate', '--n', '5', '--out', data]) == 0
    empty = tmp_path / 'empty.mvix'
    empty.write_bytes(b'')
    assert main(['audit', '--index', str(empty), '--data', data]) == 1
    assert main(['generate', '--n', '5', '--out', str(tmp_path / 'g.mvd'),
                 '--queries', '3']) == 1
    assert main(['build', '--data', missing, '--metric', 'agg-gnn',
                 '--gamma', '1', '--out', str(tmp_path / 'i.mvix')]) == 1


def test_build_reports_statistics(workdir, capsys):
    out = str(workdir / 'again.mvix')
    assert main(['build', '--data', str(workdir / 'data.mvd'), '--M', '4',
                 '--ef-construction', '16', '--no-ant', '--out', out,
                 '--seed', '3']) == 0
    printed = capsys.readouterr().out
    assert 'build time' in printed
    assert 'index size' in printed
    assert 'layer 0: 60 nodes' in printed


def test_construction_and_query_kernels_are_separate_switches(workdir,
                                                              capsys):
    data, queries = str(workdir / 'data.mvd'), str(workdir / 'queries.mvd')
    exact = str(workdir / 'exact.mvix')
    assert main(['build', '--data', data, '--M', '4', '--ef-construction',
                 '16', '--no-ant', '--accel-build', 'off',
                 '--approx-min-tokens', '4', '--out', exact,
                 '--seed', '3']) == 0
    params = load_index(exact)[0].params
    assert not params.accel_build
    assert params.approx_min_tokens == 4
    assert not params.sim.approx
    accel = str(workdir / 'accel.mvix')
    assert main(['build', '--data', data, '--M', '4', '--ef-construction',
                 '16', '--no-ant', '--approx-min-tokens', '4', '--out',
                 accel, '--seed', '3']) == 0
    params = load_index(accel)[0].params
    assert params.accel_build and not params.sim.approx
    capsys.readouterr()
    assert main(['search', '--index', accel, '--queries', queries, '--k',
                 '3', '--ef-search', '8', '--augmented', 'off', '--approx',
                 'on']) == 0
    lines = [json.loads(x)
             for x in capsys.readouterr().out.strip().split('\n')]
    assert len(lines) == 5 and all(len(x['ids']) == 3 for x in lines)
    with pytest.raises(SystemExit) as e:
        main(['build', '--data', data, '--out', accel, '--accel-build',
              'maybe'])
    assert e.value.code == 2


def test_audit_passes_on_a_fresh_index(workdir, capsys):
    assert main(['audit', '--index', str(workdir / 'index.mvix')]) == 0
    assert 'audit passed' in capsys.readouterr().out


def test_ground_truth_search_and_bench(workdir, capsys):
    data, queries = str(workdir / 'data.mvd'), str(workdir / 'queries.mvd')
    index, gt = str(workdir / 'index.mvix'), str(workdir / 'gt.mvgt')
    assert main(['ground-truth', '--data', data, '--queries', queries,
                 '--k', '5', '--out', gt]) == 0
    first = open(gt, 'rb').read()
    assert main(['ground-truth', '--data', data, '--queries', queries,
                 '--k', '5', '--threads', '2', '--out', gt]) == 0
    assert open(gt, 'rb').read() == first
    truth = read_mvgt(gt)
    assert truth.k == 5 and len(truth) == 5

    results = str(workdir / 'results.jsonl')
    assert main(['search', '--index', index, '--queries', queries, '--k',
                 '5', '--ef-search', '16', '--out', results]) == 0
    lines = [json.loads(x) for x in open(results)]
    assert [x['query'] for x in lines] == list(range(5))
    for x in lines:
        assert len(x['ids']) == 5
        assert all(0 <= i < 60 for i in x['ids'])
        assert x['scores'] == sorted(x['scores'], reverse=True)
        assert x['latency_ms'] >= 0

    capsys.readouterr()
    assert main(['search', '--index', index, '--data', data, '--queries',
                 queries, '--k', '3', '--ef-search', '8', '--augmented',
                 'off']) == 0
    stdout = capsys.readouterr().out.strip().split('\n')
    assert len(stdout) == 5

    report = str(workdir / 'bench.csv')
    assert main(['bench', '--index', index, '--queries', queries,
                 '--ground-truth', gt, '--k', '5', '--ef-sweep', '8,16,32',
                 '--out', report]) == 0
    rows = list(csv.reader(open(report)))
    assert rows[0] == BENCH_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [8, 16, 32]
    for r in rows[1:]:
        assert 0.0 <= float(r[2]) <= 1.0
        assert int(r[6]) == 5
    assert main(['bench', '--index', index, '--queries', queries,
                 '--ground-truth', gt, '--k', '10', '--out', report]) == 1


def test_ground_truth_of_the_three_objects(tmp_path, three_objects):
    dataset, Q = three_objects
    data, queries = str(tmp_path / 'd.mvd'), str(tmp_path / 'q.mvd')
    write_mvd(data, dataset)
    write_mvd(queries, Dataset.from_multivectors([Q]))
    gt = str(tmp_path / 'gt.mvgt')
    assert main(['ground-truth', '--data', data, '--queries', queries,
                 '--k', '2', '--out', gt]) == 0
    truth = read_mvgt(gt)
    assert truth.ids.tolist() == [[0, 1]]
    np.testing.assert_allclose(truth.scores[0], [1.856, 1.697], atol=1e-3)


def test_audit_reports_a_damaged_index(tmp_path, three_objects, caplog):
    dataset, _ = three_objects
    data = str(tmp_path / 'd.mvd')
    write_mvd(data, dataset)
    index = build_index(dataset, IndexParams(M=2, ef_construction=4,
                                             sim=metric_preset('maxsim')))
    index.layers[0][0][1] = 0.123
    path = str(tmp_path / 'bad.mvix')
    save_index(path, index, data_path=data)
    assert main(['audit', '--index', path]) == 1
    assert any('not symmetric' in r.getMessage() for r in caplog.records)


def test_import_command(tmp_path):
    ark, scp = str(tmp_path / 'f.ark'), str(tmp_path / 'f.scp')
    with kaldiio.WriteHelper('ark,scp:{},{}'.format(ark, scp)) as writer:
        writer('a', np.ones((2, 3), dtype=np.float32))
    out = str(tmp_path / 'imported.mvd')
    assert main(['import', '--scp', scp, '--normalize', '--out', out]) == 0
    dataset = read_mvd(out)
    assert dataset.normalized and dataset.num_tokens == 2
