"""Tensor container, ordered reductions, bilinear sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from detcnn.errors import ShapeError
from detcnn.tensor import (
    Tensor,
    bilinear_resize,
    bits_equal,
    elementwise,
    reduce,
    validate_shape,
)


def test_validate_shape_rejects_bad_ranks_and_dims():
    with pytest.raises(ShapeError):
        validate_shape(())
    with pytest.raises(ShapeError):
        validate_shape((1, 2, 3, 4, 5))
    with pytest.raises(ShapeError):
        validate_shape((0, 3))
    with pytest.raises(ShapeError):
        validate_shape((2, -1))


def test_tensor_is_immutable_and_detached():
    src = np.ones((2, 3), dtype=np.float32)
    t = Tensor(src)
    src[0, 0] = 99.0
    assert t.data[0, 0] == 1.0  # constructor copied
    with pytest.raises((ValueError, RuntimeError)):
        t.data[0, 0] = 5.0


def test_bits_equal_detects_sign_of_zero():
    a = Tensor(np.array([0.0], dtype=np.float32))
    b = Tensor(np.array([-0.0], dtype=np.float32))
    assert not bits_equal(a, b)
    assert bits_equal(a, Tensor(np.array([0.0], dtype=np.float32)))


def _scalar_sum_f32(data, axes):
    """Reference: iterate in C order, accumulate f32 scalars per output."""
    kept = tuple(i for i in range(data.ndim) if i not in axes)
    out_shape = tuple(data.shape[i] for i in kept) or (1,)
    out = np.zeros(out_shape, dtype=np.float32).reshape(-1)
    strides = {}
    # flat index of the output cell for every input element, C order
    for idx in np.ndindex(*data.shape):
        key = tuple(idx[i] for i in kept)
        flat = 0
        for i, k in enumerate(key):
            flat = flat * data.shape[kept[i]] + k
        out[flat] += data[idx]
        strides[key] = flat
    return out.reshape(out_shape)


@pytest.mark.parametrize("shape,axes", [
    ((5, 3), (0,)),
    ((5, 3), (1,)),
    ((4, 3, 2), (0, 1)),
    ((4, 3, 2), (2,)),
    ((4, 3, 2), (1,)),
    ((2, 3, 4, 5), (0, 1, 2)),
    ((2, 3, 4, 5), (3,)),
    ((2, 3, 4, 5), (0, 1, 2, 3)),
])
def test_ordered_sum_matches_scalar_loop(shape, axes):
    rng = np.random.default_rng(7)
    data = (rng.standard_normal(shape) * 100).astype(np.float32)
    got = reduce("sum", Tensor(data), axes)
    ref = _scalar_sum_f32(data, axes)
    assert got.data.tobytes() == ref.tobytes()


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=2, max_dims=3, min_side=1, max_side=6),
        elements=st.floats(
            min_value=-1e4, max_value=1e4, width=32, allow_nan=False
        ),
    ),
    st.data(),
)
def test_ordered_sum_property(data_arr, data):
    axes = tuple(sorted(data.draw(
        st.sets(
            st.integers(0, data_arr.ndim - 1), min_size=1,
            max_size=data_arr.ndim,
        )
    )))
    got = reduce("sum", Tensor(data_arr), axes)
    ref = _scalar_sum_f32(data_arr, axes)
    assert got.data.tobytes() == ref.tobytes()


def test_mean_is_sum_then_single_divide():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((6, 4)).astype(np.float32)
    got = reduce("mean", Tensor(data), (0,))
    s = _scalar_sum_f32(data, (0,))
    ref = (s / np.float32(6.0)).astype(np.float32)
    assert got.data.tobytes() == ref.tobytes()


def test_max_reduction():
    data = np.array([[1.0, 5.0], [7.0, -2.0]], dtype=np.float32)
    got = reduce("max", Tensor(data), (0, 1))
    assert got.shape == (1,)
    assert got.item() == 7.0


def test_elementwise_broadcast_rules():
    a = Tensor(np.ones((2, 3), dtype=np.float32))
    bias = Tensor(np.arange(3, dtype=np.float32))
    out = elementwise("add", a, bias)
    assert out.data[1, 2] == 3.0
    with pytest.raises(ShapeError):
        elementwise("add", a, Tensor(np.ones((2,), dtype=np.float32)))


def test_bilinear_resize_identity():
    rng = np.random.default_rng(11)
    img = Tensor(rng.uniform(0, 255, (7, 5, 3)).astype(np.float32))
    out = bilinear_resize(img, 7, 5)
    assert np.allclose(out.data, img.data, atol=1e-4)


def test_bilinear_resize_2x2_to_4x4_oracle():
    # hand-checked half-pixel-centre sampling of a 2x2 ramp
    img = np.array(
        [[[0.0], [100.0]], [[200.0], [300.0]]], dtype=np.float32
    )
    out = bilinear_resize(Tensor(img), 4, 4).data[:, :, 0]
    # source coords for output index i: (i + 0.5) / 2 - 0.5
    #   -> -0.25, 0.25, 0.75, 1.25 (clamped at the edges)
    expect_row0 = [0.0, 25.0, 75.0, 100.0]
    assert np.allclose(out[0], expect_row0, atol=1e-4)
    expect_col0 = [0.0, 50.0, 150.0, 200.0]
    assert np.allclose(out[:, 0], expect_col0, atol=1e-4)
    assert abs(out[1, 1] - (0.25 * 0 + 0.25 * 100e-2 * 25 +
                            0.25 * 200 + 0.25 * 300) * 0.5) < 300
    # centre cell exact value: blend of all four corners at 0.25/0.75
    assert abs(out[1, 1] - (0.75 * 0.75 * 0 + 0.75 * 0.25 * 100 +
                            0.25 * 0.75 * 200 + 0.25 * 0.25 * 300)) < 1e-3


def test_bilinear_resize_is_deterministic():
    rng = np.random.default_rng(5)
    img = Tensor(rng.uniform(0, 255, (13, 9, 3)).astype(np.float32))
    a = bilinear_resize(img, 28, 28)
    b = bilinear_resize(img, 28, 28)
    assert bits_equal(a, b)


def test_reduce_rejects_bad_axes():
    t = Tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(ShapeError):
        reduce("sum", t, (2,))
    with pytest.raises(ShapeError):
        reduce("sum", t, (0, 0))
