import numpy as np
import pytest

from seqstage import autodiff as ad
from seqstage.autodiff import (AdamState, NumericalError, ParameterStore, ShapeError, Tape,
                               Tensor, adam_step, grad_check, load_checkpoint, save_checkpoint)

from oracles import naive_matmul


def test_softmax_equal_logits_is_uniform():
    out = ad.softmax(np.zeros(5)).data
    assert np.allclose(out, 0.2, atol=1e-15)


def test_sigmoid_at_zero():
    assert ad.sigmoid(np.zeros(1)).data[0] == pytest.approx(0.5, abs=1e-15)


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3, 4))
    out = ad.matmul(a, b)
    assert out.shape == (2, 4)
    assert np.allclose(out.data, naive_matmul(a, b), atol=1e-12)


def test_matmul_transpose_flags():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(4, 3))
    assert np.allclose(ad.matmul(a, b, transpose_a=True, transpose_b=True).data,
                       naive_matmul(a.T, b.T), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_backward_sum_of_squares_gives_two_theta():
    theta = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_of_squares(theta)
    tape.backward(loss)
    assert np.allclose(theta.grad, 2.0 * theta.data, atol=1e-15)


def test_backward_mean_sigmoid_scalar_zero():
    theta = Tensor(np.zeros(()), requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(ad.sigmoid(theta))
    tape.backward(loss)
    assert float(theta.grad) == pytest.approx(0.25, abs=1e-15)


def test_backward_requires_scalar_loss():
    theta = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = ad.sigmoid(theta)
    with pytest.raises(ShapeError, match="scalar"):
        tape.backward(out)


def test_backward_fan_out_accumulates():
    theta = Tensor(np.array(1.5), requires_grad=True)
    with Tape() as tape:
        # loss = theta*theta + theta  -> dloss = 2*theta + 1
        loss = ad.add(ad.elementwise_mul(theta, theta), theta)
    tape.backward(loss)
    assert float(theta.grad) == pytest.approx(2 * 1.5 + 1, abs=1e-12)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(11)
    for _ in range(200):
        x = rng.normal(0, 5, size=(4, 7))
        p = ad.softmax(x).data
        assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)
        shifted = ad.softmax(x + rng.normal() * np.ones_like(x)).data
        assert np.all(np.abs(p - shifted) < 1e-12)


def test_log_floor_clamps():
    x = np.array([1.0, 0.0, 1e-15])
    out = ad.log(x, floor=1e-12).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(np.log(1e-12))
    assert out[2] == pytest.approx(np.log(1e-12))
    with pytest.raises(NumericalError):
        ad.log(np.array([0.0]))


def test_concat_slice_reshape_transpose_gradients():
    rng = np.random.default_rng(12)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)

    def f():
        joined = ad.concat([a, b], axis=1)
        sliced = joined[:, 1:4]
        return ad.mean(ad.tanh(ad.transpose(ad.reshape(sliced, (3, 2)))))

    assert grad_check(f, [a, b], eps=1e-5) < 1e-9


def test_grad_check_quadratic_is_exact():
    theta = Tensor(np.array([1.0, -2.0, 0.3]), requires_grad=True)
    err = grad_check(lambda: ad.sum_of_squares(theta), [theta], eps=1e-5)
    assert err < 1e-9


def test_grad_check_rejects_bad_eps():
    theta = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: ad.sum_of_squares(theta), [theta], eps=1e-2)


def test_adam_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=1e-4)
    adam_step([p], [np.zeros(2)], state)
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_single_step_hand_value():
    # From m=v=0 and g=1: m_hat=1, v_hat=1, delta = -lr/(1+eps).
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=1e-4)
    adam_step([p], [np.ones(1)], state)
    assert float(p.data[0]) == pytest.approx(-1e-4 / (1.0 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_update_magnitude_approaches_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=1e-4)
    prev = float(p.data[0])
    for _ in range(500):
        prev = float(p.data[0])
        adam_step([p], [np.full(1, 3.7)], state)
    assert abs(prev - float(p.data[0])) == pytest.approx(1e-4, rel=1e-3)


def test_adam_nonfinite_gradient_raises():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=1e-4)
    with pytest.raises(NumericalError):
        adam_step([p], [np.array([np.nan])], state)


def test_dropout_eval_and_zero_rate_are_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert ad.dropout(x, 0.25, "eval").data is x.data
    rng = np.random.Generator(np.random.Philox(0))
    assert ad.dropout(x, 0.0, "train", rng).data is x.data


def test_dropout_monte_carlo_rate_and_mean():
    rng = np.random.Generator(np.random.Philox(5))
    x = Tensor(np.ones(1_000_000))
    out = ad.dropout(x, 0.25, "train", rng).data
    zero_fraction = float((out == 0).mean())
    assert abs(zero_fraction - 0.25) < 0.01
    assert abs(out.mean() - 1.0) < 0.01


def test_dropout_rejects_bad_arguments():
    with pytest.raises(ValueError):
        ad.dropout(np.ones(3), 1.0, "train", np.random.default_rng(0))
    with pytest.raises(ValueError):
        ad.dropout(np.ones(3), 0.5, "predict")


def test_parameter_store_order_and_decay_flags():
    store = ParameterStore()
    w = store.add("layer/W", np.ones((2, 2)))
    b = store.add("layer/b", np.zeros(2), weight_decay=False)
    assert store.names() == ["layer/W", "layer/b"]
    assert store.decayed_tensors() == [w]
    assert store.n_coords() == 6
    with pytest.raises(ValueError):
        store.add("layer/W", np.ones(1))
    store.zero_grads()
    assert b.grad is None


def test_checkpoint_round_trip_and_errors(tmp_path):
    store = ParameterStore()
    rng = np.random.default_rng(9)
    store.add("a/W", rng.normal(size=(3, 4)))
    store.add("b/v", rng.normal(size=7))
    config = {"seq_len": 10, "seed": 1}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store, config)
    arrays, loaded_config = load_checkpoint(path)
    assert loaded_config == config
    assert list(arrays) == ["a/W", "b/v"]
    for name, tensor in store.items():
        assert np.array_equal(arrays[name], tensor.data)

    data = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(bad)
    short = tmp_path / "short.ckpt"
    short.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(short)


def test_checkpoint_bytes_deterministic(tmp_path):
    def build():
        store = ParameterStore()
        store.add("w", np.linspace(0, 1, 10).reshape(2, 5))
        return store

    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_checkpoint(p1, build(), {"seed": 3})
    save_checkpoint(p2, build(), {"seed": 3})
    assert p1.read_bytes() == p2.read_bytes()
