import numpy as np
import pytest

from seqstage import autodiff as ad
from seqstage.autodiff import Tensor
from seqstage.attention import AttentionParams, attention_pool, init_attention_params

from oracles import reference_attention


def test_single_step_gets_all_the_weight():
    rng = np.random.default_rng(0)
    p = init_attention_params(4, 3, rng)
    v = rng.normal(size=4)
    pooled, weights = attention_pool([v], p)
    assert np.allclose(weights.data, [1.0], atol=1e-15)
    assert np.allclose(pooled.data, v, atol=1e-15)


def test_identical_vectors_share_weight_equally():
    rng = np.random.default_rng(1)
    p = init_attention_params(4, 3, rng)
    v = rng.normal(size=4)
    pooled, weights = attention_pool([v] * 5, p)
    assert np.allclose(weights.data, 0.2, atol=1e-12)
    assert np.allclose(pooled.data, v, atol=1e-12)


def test_hand_scores_one_two_three():
    # single-vector scorer on scalar features makes the scores explicit
    p = AttentionParams(projection=None, reducer=Tensor(np.array([[1.0]])))
    vectors = [np.array([1.0]), np.array([2.0]), np.array([3.0])]
    pooled, weights = attention_pool(vectors, p)
    expected = np.exp([1.0, 2.0, 3.0])
    expected /= expected.sum()
    assert np.allclose(weights.data, expected, atol=1e-12)
    assert np.allclose(weights.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    assert pooled.data[0] == pytest.approx(float(expected @ [1.0, 2.0, 3.0]), abs=1e-12)


def test_matches_reference_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = init_attention_params(5, 3, rng)
        vectors = [rng.normal(size=5) for _ in range(6)]
        pooled, weights = attention_pool(vectors, p)
        ref_pooled, ref_weights = reference_attention(vectors, p.projection.data, p.reducer.data)
        assert np.allclose(weights.data, ref_weights, atol=1e-12)
        assert np.allclose(pooled.data, ref_pooled, atol=1e-12)


def test_weights_sum_to_one_and_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = init_attention_params(4, 2, rng)
        vectors = [rng.normal(0, 3, size=4) for _ in range(7)]
        _, weights = attention_pool(vectors, p)
        assert abs(weights.data.sum() - 1.0) < 1e-12
        assert np.all(weights.data >= 0.0)


def test_score_shift_invariance():
    # shifting every score by the same constant leaves the weights unchanged
    rng = np.random.default_rng(4)
    p = AttentionParams(projection=None, reducer=Tensor(np.array([[1.0], [0.0]])))
    vectors = [rng.normal(size=2) for _ in range(5)]
    _, base = attention_pool(vectors, p)
    shifted = [v + np.array([3.7, 0.0]) for v in vectors]
    _, moved = attention_pool(shifted, p)
    assert np.all(np.abs(base.data - moved.data) < 1e-12)


def test_pooled_vector_is_convex_combination():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = init_attention_params(3, 2, rng)
        vectors = [rng.normal(size=3) for _ in range(6)]
        pooled, _ = attention_pool(vectors, p)
        stacked = np.stack(vectors)
        assert np.all(pooled.data >= stacked.min(axis=0) - 1e-12)
        assert np.all(pooled.data <= stacked.max(axis=0) + 1e-12)


def test_batched_matches_per_row():
    rng = np.random.default_rng(6)
    p = init_attention_params(4, 3, rng)
    batch = [rng.normal(size=(3, 4)) for _ in range(5)]
    pooled, weights = attention_pool(batch, p)
    for b in range(3):
        row_pooled, row_weights = attention_pool([v[b] for v in batch], p)
        assert np.allclose(pooled.data[b], row_pooled.data, atol=1e-12)
        assert np.allclose(weights.data[b], row_weights.data, atol=1e-12)


def test_empty_sequence_raises():
    p = init_attention_params(4, 3, np.random.default_rng(7))
    with pytest.raises(ValueError, match="empty"):
        attention_pool([], p)


def test_single_vector_scorer_config():
    rng = np.random.default_rng(8)
    p = init_attention_params(4, 3, rng, two_stage=False)
    assert p.projection is None
    assert p.reducer.shape == (4, 1)
    pooled, weights = attention_pool([rng.normal(size=4) for _ in range(3)], p)
    assert abs(weights.data.sum() - 1.0) < 1e-12


def test_gradients_through_pooling():
    rng = np.random.default_rng(9)
    p = init_attention_params(4, 3, rng)
    steps = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(5)]

    def f():
        pooled, _ = attention_pool(steps, p)
        return ad.mean(pooled)

    err = ad.grad_check(f, [p.projection, p.reducer] + steps, eps=1e-5)
    assert err < 1e-6
