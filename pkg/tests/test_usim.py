import numpy as np
import pytest

from mvann.dataset.dataset import MultiVector
from mvann.similarity.usim import (NEG_EUCLIDEAN, EvalCounter,
                                   SimilarityConfig, dis, gamma_nn_exact,
                                   metric_preset, usim_exact)

from conftest import SQ3, unit_rows


def test_dis_inner_product_and_negative_euclidean():
    assert dis([1, 0], [0, 1]) == 0.0
    assert dis([0.8, 0.6], [0.6, 0.8]) == pytest.approx(0.96)
    cfg = SimilarityConfig(distance=NEG_EUCLIDEAN)
    assert dis([1, 0], [0, 1], cfg) == pytest.approx(-np.sqrt(2.0))
    assert dis([0.3, 0.4], [0.3, 0.4], cfg) == 0.0


def test_dis_dimension_mismatch():
    with pytest.raises(ValueError):
        dis([1, 0], [1, 0, 0])


def test_similarity_config_validation():
    with pytest.raises(ValueError):
        SimilarityConfig(gamma=0)
    with pytest.raises(ValueError):
        SimilarityConfig(gamma=1.5)
    with pytest.raises(ValueError):
        SimilarityConfig(distance='cosine')


def test_gamma_nn_of_single_token(three_objects):
    dataset, _ = three_objects
    result = gamma_nn_exact([1, 0, 0], dataset[0], 1)
    assert len(result) == 1
    assert result[0][0] == 0
    assert result[0][1] == pytest.approx(SQ3 / 2, abs=1e-6)


def test_gamma_nn_gamma_at_least_cardinality_sorts_everything():
    V = np.array([[0.1, 0.9], [0.9, 0.1], [0.5, 0.5]])
    result = gamma_nn_exact([1, 0], V, 10)
    assert [i for i, _ in result] == [1, 2, 0]
    assert [d for _, d in result] == sorted([d for _, d in result],
                                           reverse=True)


def test_gamma_nn_ties_prefer_smaller_index():
    V = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    assert [i for i, _ in gamma_nn_exact([1, 0], V, 2)] == [1, 2]
    assert [i for i, _ in gamma_nn_exact([1, 0], V, 1)] == [1]


@pytest.mark.parametrize('c,gamma', [(1, 1), (5, 1), (10, 3), (64, 8),
                                     (7, 7)])
def test_gamma_nn_matches_brute_force(c, gamma):
    rng = np.random.default_rng(c * 31 + gamma)
    V = unit_rows(rng, c, 8)
    q = unit_rows(rng, 1, 8)[0]
    d = V @ q
    order = np.lexsort((np.arange(c), -d))[:min(gamma, c)]
    result = gamma_nn_exact(q, V, gamma)
    assert [i for i, _ in result] == order.tolist()
    np.testing.assert_allclose([s for _, s in result], d[order], atol=1e-12)


def test_weighted_chamfer_example(weighted_pair):
    Q, V = weighted_pair
    score, match = usim_exact(Q, V, SimilarityConfig(gamma=1))
    assert score == pytest.approx(1.8, abs=1e-6)
    assert match.rows()[0][0][0] == 0
    assert match.rows()[2][0][0] == 2


def test_maxsim_ignores_weights(weighted_pair):
    Q, V = weighted_pair
    score, _ = usim_exact(Q, V, metric_preset('maxsim'))
    assert score == pytest.approx(0.8 + 0.8 + 1.0, abs=1e-6)


def test_three_object_scores(three_objects):
    dataset, Q = three_objects
    cfg = SimilarityConfig(gamma=1)
    scores = [usim_exact(Q, mv, cfg)[0] for mv in dataset]
    np.testing.assert_allclose(scores, [1.856, 1.697, 1.307], atol=1e-3)


def test_self_similarity_equals_cardinality():
    rng = np.random.default_rng(0)
    Q = MultiVector.create(0, unit_rows(rng, 12, 16))
    score, _ = usim_exact(Q, Q, SimilarityConfig(gamma=1))
    assert score == pytest.approx(12.0, abs=1e-5)


def test_divisor_is_capped_by_cardinality():
    Q = MultiVector.create(0, [[1, 0]])
    V = MultiVector.create(1, [[1, 0], [0, 1]])
    score, match = usim_exact(Q, V, SimilarityConfig(gamma=5))
    assert score == pytest.approx(0.5)
    assert match.indices.shape == (1, 2)


def test_aggregate_gamma_nn_averages_gamma_best():
    Q = MultiVector.create(0, [[1, 0], [0, 1]])
    V = MultiVector.create(1, [[1, 0], [0.6, 0.8], [0, 1]])
    score, _ = usim_exact(Q, V, metric_preset('aggregate-gnn', 2))
    assert score == pytest.approx((1.0 + 0.6) / 2 + (1.0 + 0.8) / 2)


def test_empty_multivector_rejected(weighted_pair):
    Q, _ = weighted_pair
    empty = MultiVector(3, np.zeros((0, 2), np.float32),
                        np.zeros(0, np.float32))
    with pytest.raises(ValueError):
        usim_exact(Q, empty, SimilarityConfig())
    with pytest.raises(ValueError):
        usim_exact(empty, Q, SimilarityConfig())


def test_score_is_bounded_and_permutation_invariant():
    rng = np.random.default_rng(5)
    cfg = SimilarityConfig(gamma=2)
    for _ in range(20):
        Q = MultiVector.create(0, unit_rows(rng, 6, 8),
                               rng.uniform(0, 1, 6))
        V = MultiVector.create(1, unit_rows(rng, 9, 8))
        score, _ = usim_exact(Q, V, cfg)
        assert -Q.weights.sum() - 1e-9 <= score <= Q.weights.sum() + 1e-9
        perm = rng.permutation(len(V))
        shuffled = MultiVector.create(1, V.tokens[perm])
        assert usim_exact(Q, shuffled, cfg)[0] == pytest.approx(score,
                                                                abs=1e-12)


def test_adding_a_data_token_never_lowers_maxsim():
    rng = np.random.default_rng(6)
    cfg = metric_preset('maxsim')
    for _ in range(20):
        Q = MultiVector.create(0, unit_rows(rng, 5, 8))
        V = unit_rows(rng, 4, 8)
        grown = np.vstack([V, unit_rows(rng, 1, 8)])
        before = usim_exact(Q, MultiVector.create(1, V), cfg)[0]
        after = usim_exact(Q, MultiVector.create(1, grown), cfg)[0]
        assert after >= before - 1e-12


def test_counter_counts_table_cells(weighted_pair):
    Q, V = weighted_pair
    counter = EvalCounter()
    usim_exact(Q, V, SimilarityConfig(), counter)
    assert counter.count == 9


def test_metric_presets():
    assert metric_preset('maxsim') == SimilarityConfig(gamma=1,
                                                       use_weights=False)
    assert metric_preset('chamfer') == SimilarityConfig(gamma=1)
    assert metric_preset('agg-gnn', 4).gamma == 4
    with pytest.raises(ValueError):
        metric_preset('aggregate-gnn', 1)
    with pytest.raises(ValueError):
        metric_preset('aggregate-gnn')
    with pytest.raises(ValueError):
        metric_preset('colbert')


def test_unit_weights_make_chamfer_equal_maxsim():
    rng = np.random.default_rng(9)
    Q = MultiVector.create(0, unit_rows(rng, 7, 8))
    V = MultiVector.create(1, unit_rows(rng, 5, 8))
    a = usim_exact(Q, V, metric_preset('maxsim'))[0]
    b = usim_exact(Q, V, metric_preset('weighted-chamfer'))[0]
    assert a == b
