import numpy as np
import pytest

from mvann.dataset.dataset import Dataset, MultiVector
from mvann.index.ant import AntTable
from mvann.index.mv_index import (IndexParams, MvIndex, QueryScorer,
                                  build_index, search_layer_plain)
from mvann.index.search import (SearchParams, augmented_search_layer,
                                contrib, expand_candidates, knn_search,
                                token_contribs, weight_softmax)
from mvann.similarity.usim import (EvalCounter, ScoredMatch, SimilarityConfig,
                                   usim_exact)
from mvann.utils.oracle import ground_truth, recall

from conftest import unit_rows

MAXSIM = SimilarityConfig(gamma=1, use_weights=False)


def one_token_dataset(n, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset.from_multivectors(
        [MultiVector.create(i, unit_rows(rng, 1, dim)) for i in range(n)])


def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(k=0)
    with pytest.raises(ValueError):
        SearchParams(k=10, ef_search=5)


def test_contributions_of_the_weighted_pair(weighted_pair):
    Q, V = weighted_pair
    sim = SimilarityConfig(gamma=1)
    score, matches = usim_exact(Q, V, sim)
    assert contrib(0, Q, matches, sim) == pytest.approx(0.8, abs=1e-6)
    assert contrib(1, Q, matches, sim) == 0.0
    assert contrib(2, Q, matches, sim) == pytest.approx(1.0, abs=1e-6)
    parts = token_contribs(3, np.array([1.0, 0.0, 1.0]), matches)
    assert parts.sum() == pytest.approx(score, abs=1e-12)


def test_unmatched_token_contributes_nothing():
    Q = MultiVector.create(0, [[1, 0]])
    V = MultiVector.create(1, [[1, 0], [0, 1]])
    _, matches = usim_exact(Q, V, MAXSIM)
    assert contrib(1, Q, matches) == 0.0


def test_softmax():
    np.testing.assert_allclose(weight_softmax([0.3, 0.3, 0.3]), [1 / 3] * 3)
    e = np.exp([0.8, 0.0, 1.0])
    np.testing.assert_allclose(weight_softmax([0.8, 0.0, 1.0]), e / e.sum())
    np.testing.assert_allclose(weight_softmax([0.8, 0.0, 1.0]),
                               [0.3744, 0.1682, 0.4573], atol=1e-4)
    assert weight_softmax([2.5]).tolist() == [1.0]
    assert weight_softmax(np.random.default_rng(0).normal(size=9)).sum() == \
        pytest.approx(1.0)
    with pytest.raises(ValueError):
        weight_softmax([])


def handmade_table(dataset, lists):
    """AntTable from {gid: [(target, score), ...]}."""
    offsets = np.zeros(dataset.num_tokens + 1, dtype=np.int64)
    targets, scores = [], []
    for gid in range(dataset.num_tokens):
        entries = lists.get(gid, [])
        targets.extend(t for t, _ in entries)
        scores.extend(s for _, s in entries)
        offsets[gid + 1] = len(targets)
    return AntTable(dataset.offsets, offsets, targets, scores, M=4, gamma=1)


def test_single_token_node_takes_its_list_prefix():
    dataset = one_token_dataset(5)
    ant = handmade_table(dataset, {0: [(3, 0.9), (1, 0.8), (2, 0.1)]})
    Q = MultiVector.create(0, [[1, 0, 0, 0]])
    matches = ScoredMatch(np.array([[0]]), np.array([[0.5]]))
    assert expand_candidates(0, Q, matches, ant, 2) == [3, 1]
    assert expand_candidates(0, Q, matches, ant, 2, visited={3}) == [1, 2]
    assert expand_candidates(0, Q, matches, ant, 2, exclude={1}) == [3, 2]
    assert expand_candidates(0, Q, matches, ant, 5) == [3, 1, 2]
    assert expand_candidates(1, Q, matches, ant, 2) == []


def merged_oracle(node, weights, ant, M, skip):
    first = int(ant.token_offsets[node])
    best = {}
    for slot, w in enumerate(weights):
        targets, scores = ant.entries(first + slot)
        for t, s in zip(targets.tolist(), scores.tolist()):
            best[t] = max(best.get(t, -np.inf), w * s)
    ranked = sorted(best.items(), key=lambda x: (-x[1], x[0]))
    return [t for t, _ in ranked if t not in skip and t != node][:M]


def test_lazy_merge_matches_the_eager_oracle(built, clustered,
                                             clustered_queries):
    index, _, ant = built
    rng = np.random.default_rng(41)
    for trial in range(100):
        Q = clustered_queries[trial % len(clustered_queries)]
        node = int(rng.integers(len(clustered)))
        scorer = QueryScorer(clustered, Q, MAXSIM, keep_matches=True)
        scorer([node])
        matches = scorer.matches[node]
        visited = set(rng.choice(len(clustered), 30).tolist())
        exclude = set(index.layers[0][node])
        weights = weight_softmax(
            token_contribs(clustered.cardinality(node),
                           np.ones(len(Q)), matches))
        expected = merged_oracle(node, weights, ant, 8, visited | exclude)
        got = expand_candidates(node, Q, matches, ant, 8, visited, exclude,
                                MAXSIM)
        assert got == expected


def test_uniform_weights_take_the_global_top():
    dataset = Dataset.from_multivectors(
        [MultiVector.create(0, [[1, 0], [0, 1]])] +
        [MultiVector.create(i, [[0.6, 0.8]]) for i in range(1, 6)])
    ant = handmade_table(dataset, {
        0: [(1, 0.9), (2, 0.5), (3, 0.4)],
        1: [(4, 0.7), (1, 0.6), (5, 0.3)],
    })
    Q = MultiVector.create(0, [[1, 0], [0, 1]])
    matches = ScoredMatch(np.array([[0], [1]]), np.array([[0.7], [0.7]]))
    assert expand_candidates(0, Q, matches, ant, 3) == [1, 4, 2]


def test_empty_table_reduces_to_plain_search(built, clustered_queries):
    index, _, _ = built
    empty = AntTable.empty(index.dataset, M=8)
    for Q in clustered_queries:
        augmented = augmented_search_layer(index, empty, Q, 0,
                                           [index.entry_point], 24)
        plain = search_layer_plain(index, Q, 0, [index.entry_point], 24)
        assert augmented == plain
        a = knn_search(index, empty, Q, SearchParams(k=5, ef_search=24))
        b = knn_search(index, None, Q, SearchParams(k=5, ef_search=24))
        assert a == b


def test_table_reaches_a_disconnected_object():
    rng = np.random.default_rng(42)
    mvs = [MultiVector.create(i, unit_rows(rng, 2, 6)) for i in range(6)]
    dataset = Dataset.from_multivectors(mvs)
    index = MvIndex(dataset, IndexParams(M=4, ef_construction=4, sim=MAXSIM))
    chain = {0: {1: 0.5}, 1: {0: 0.5, 2: 0.5}, 2: {1: 0.5, 3: 0.5},
             3: {2: 0.5, 4: 0.5}, 4: {3: 0.5}, 5: {}}
    index.layers = [chain]
    index.node_layer = {i: 0 for i in range(6)}
    index.entry_point = 0
    ant = handmade_table(dataset, {2: [(5, 0.9)], 3: [(5, 0.9)]})
    Q = MultiVector.create(0, dataset[5].tokens)
    plain = knn_search(index, ant, Q, SearchParams(k=1, ef_search=6,
                                                   augmented=False))
    augmented = knn_search(index, ant, Q, SearchParams(k=1, ef_search=6))
    assert plain[0][0] != 5
    assert augmented[0][0] == 5
    assert augmented[0][1] == pytest.approx(2.0, abs=1e-5)


def test_tiny_index_returns_everything_exactly(three_objects):
    dataset, Q = three_objects
    index = build_index(dataset, IndexParams(M=2, ef_construction=4,
                                             sim=MAXSIM))
    result = knn_search(index, None, Q, SearchParams(k=3, ef_search=3,
                                                     augmented=False))
    assert [i for i, _ in result] == [0, 1, 2]
    for i, s in result:
        assert s == pytest.approx(usim_exact(Q, dataset[i], MAXSIM)[0],
                                  abs=1e-12)
    top2 = knn_search(index, None, Q, SearchParams(k=2, ef_search=3))
    assert {i for i, _ in top2} == {0, 1}


def test_indexed_object_finds_itself(built, clustered):
    index, _, ant = built
    for node in (3, 77, 150):
        Q = clustered[node]
        result = knn_search(index, ant, Q, SearchParams(k=5, ef_search=32))
        assert result[0][0] == node
        assert result[0][1] == pytest.approx(len(Q), abs=1e-5)


def test_empty_index_cannot_be_searched(three_objects):
    dataset, Q = three_objects
    index = MvIndex(dataset, IndexParams(M=2, ef_construction=4))
    with pytest.raises(RuntimeError):
        knn_search(index, None, Q, SearchParams(k=1, ef_search=1))


def test_search_is_deterministic_and_counted(built, clustered_queries):
    index, _, ant = built
    Q = clustered_queries[2]
    params = SearchParams(k=10, ef_search=32)
    counter = EvalCounter()
    first = knn_search(index, ant, Q, params, counter)
    assert counter.count > 0
    assert knn_search(index, ant, Q, params) == first
    scores = [s for _, s in first]
    assert scores == sorted(scores, reverse=True)
    assert len({i for i, _ in first}) == 10


def test_exact_rerank_reports_exact_scores(built, clustered_queries):
    index, _, ant = built
    sim = SimilarityConfig(gamma=1, use_weights=False, approx=True,
                           exact_rerank=True)
    for Q in list(clustered_queries)[:5]:
        result = knn_search(index, ant, Q,
                            SearchParams(k=5, ef_search=32, sim=sim))
        for i, s in result:
            assert s == pytest.approx(
                usim_exact(Q, index.dataset[i], MAXSIM)[0], abs=1e-12)


def test_augmentation_keeps_recall(built, clustered, clustered_queries):
    index, _, ant = built
    gt = ground_truth(clustered, clustered_queries, 10, MAXSIM)
    scores = {}
    for augmented in (False, True):
        params = SearchParams(k=10, ef_search=32, augmented=augmented)
        scores[augmented] = np.mean([
            recall([i for i, _ in knn_search(index, ant, Q, params)],
                   gt.ids[q]) for q, Q in enumerate(clustered_queries)
        ])
    assert scores[True] >= scores[False] - 0.02
    assert scores[True] >= 0.8
