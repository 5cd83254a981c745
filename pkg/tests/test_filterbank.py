import numpy as np
import pytest

from seqstage import autodiff as ad
from seqstage.autodiff import ShapeError, Tape
from seqstage.filterbank import (apply_filterbank, build_triangular_matrix, filter_and_concat,
                                 make_filterbank_layer)

from oracles import naive_matmul, scalar_sigmoid


def test_minimal_triangle_f3_m1():
    tri = build_triangular_matrix(3, 1)
    assert np.array_equal(tri, np.array([[0.0], [1.0], [0.0]]))


def test_paper_scale_shape_and_coverage():
    tri = build_triangular_matrix(129, 32)
    assert tri.shape == (129, 32)
    covered = (tri > 0).any(axis=1)
    assert covered[1:128].all()


def test_every_column_peaks_at_one():
    for n_bins, n_filters in ((129, 32), (9, 4), (7, 3), (40, 11)):
        tri = build_triangular_matrix(n_bins, n_filters)
        assert np.allclose(tri.max(axis=0), 1.0)
        assert np.all(tri >= 0.0)


def test_columns_are_unimodal_with_contiguous_support():
    tri = build_triangular_matrix(57, 13)
    for m in range(13):
        col = tri[:, m]
        support = np.flatnonzero(col > 0)
        assert np.array_equal(support, np.arange(support[0], support[-1] + 1))
        peak = int(col.argmax())
        assert np.all(np.diff(col[support[0]:peak + 1]) >= 0)
        assert np.all(np.diff(col[peak:support[-1] + 1]) <= 0)


def test_support_centers_strictly_increase():
    tri = build_triangular_matrix(129, 32)
    centers = [float(np.flatnonzero(tri[:, m] > 0).mean()) for m in range(32)]
    assert np.all(np.diff(centers) > 0)


def test_narrow_filters_get_their_center_bin():
    # More filters than interior bins forces degenerate columns.
    tri = build_triangular_matrix(8, 7)
    assert np.all(tri.max(axis=0) == 1.0)


def test_invalid_filter_count_raises():
    with pytest.raises(ValueError):
        build_triangular_matrix(4, 4)
    with pytest.raises(ValueError):
        build_triangular_matrix(4, 0)


def test_saturated_weights_recover_pure_triangles():
    layer = make_filterbank_layer(9, 4)
    layer.raw_weights.data = np.full((9, 4), 30.0)
    spec = np.random.default_rng(0).normal(size=(9, 5))
    out = apply_filterbank(spec, layer)
    assert np.allclose(out.data, layer.shape.T @ spec, atol=1e-9)


def test_zero_weights_halve_the_triangles():
    layer = make_filterbank_layer(9, 4)
    spec = np.random.default_rng(1).normal(size=(9, 5))
    out = apply_filterbank(spec, layer)
    assert np.allclose(out.data, (0.5 * layer.shape).T @ spec, atol=1e-15)


def test_random_instance_against_triple_loop_oracle():
    rng = np.random.default_rng(2)
    layer = make_filterbank_layer(6, 3)
    layer.raw_weights.data = rng.normal(size=(6, 3))
    spec = rng.normal(size=(6, 3))
    eff = np.vectorize(scalar_sigmoid)(layer.raw_weights.data) * layer.shape
    assert np.allclose(apply_filterbank(spec, layer).data, naive_matmul(eff.T, spec), atol=1e-12)


def test_apply_shape_mismatch():
    layer = make_filterbank_layer(6, 3)
    with pytest.raises(ShapeError):
        apply_filterbank(np.zeros((5, 3)), layer)


def test_filter_and_concat_paper_scale():
    rng = np.random.default_rng(3)
    layers = [make_filterbank_layer(129, 32, c) for c in range(3)]
    image = rng.normal(size=(129, 29, 3))
    out = filter_and_concat(image, layers)
    assert out.shape == (96, 29)


def test_filter_and_concat_single_channel_matches_apply():
    rng = np.random.default_rng(4)
    layer = make_filterbank_layer(9, 4)
    image = rng.normal(size=(9, 5, 1))
    assert np.array_equal(filter_and_concat(image, [layer]).data,
                          apply_filterbank(image[:, :, 0], layer).data)


def test_permuting_channels_permutes_row_blocks():
    rng = np.random.default_rng(5)
    layers = [make_filterbank_layer(9, 4, c) for c in range(2)]
    for layer in layers:
        layer.raw_weights.data = rng.normal(size=(9, 4))
    image = rng.normal(size=(9, 5, 2))
    out = filter_and_concat(image, layers).data
    swapped = filter_and_concat(image[:, :, ::-1], layers[::-1]).data
    assert np.array_equal(out[:4], swapped[4:])
    assert np.array_equal(out[4:], swapped[:4])


def test_layer_count_mismatch():
    layers = [make_filterbank_layer(9, 4, c) for c in range(2)]
    with pytest.raises(ShapeError, match="channels"):
        filter_and_concat(np.zeros((9, 5, 3)), layers)


def test_effective_weights_respect_constraints_after_updates():
    rng = np.random.default_rng(6)
    layer = make_filterbank_layer(17, 5)
    layer.raw_weights.data = rng.normal(0, 10, size=(17, 5))  # any weights at all
    eff = layer.effective_weights().data
    assert np.all(eff >= 0.0)
    assert np.all(eff[layer.shape == 0.0] == 0.0)
    assert np.all(eff <= layer.shape)


def test_gradient_through_filterbank():
    rng = np.random.default_rng(7)
    layer = make_filterbank_layer(7, 3)
    layer.raw_weights.data = rng.normal(size=(7, 3))
    spec = rng.normal(size=(7, 4))
    err = ad.grad_check(lambda: ad.mean(apply_filterbank(spec, layer)),
                        [layer.raw_weights], eps=1e-5)
    assert err < 1e-6


def test_differentiable_under_tape():
    layer = make_filterbank_layer(9, 4)
    spec = np.random.default_rng(8).normal(size=(9, 5))
    with Tape() as tape:
        loss = ad.mean(apply_filterbank(spec, layer))
    tape.backward(loss)
    assert layer.raw_weights.grad is not None
    assert layer.raw_weights.grad.shape == (9, 4)
