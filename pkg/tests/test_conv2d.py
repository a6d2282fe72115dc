"""Convolution and transposed convolution against independent loop-nest oracles.

Forward comparisons are bitwise: the reference in oracles.py accumulates taps
in the same (channel, kh, kw) order the compiled kernels document, so float32
results must agree to the last bit. Gradient kernels use a different (but
fixed) reduction shape internally, so those are checked in float64 against
the transpose identities instead; full finite-difference coverage lives in
test_gradcheck.py.
"""

import numpy as np
import pytest

from gpunet import ops
from gpunet.dtypes import dtype_context
from gpunet.errors import ShapeError
from gpunet.specs import ConvSpec, TConvSpec

from oracles import conv2d_ref, tconv2d_ref


def _randn(rng, shape, dtype=np.float32):
    return rng.standard_normal(shape).astype(dtype)


CASES = [
    # (name, spec, input shape)
    ("k3_pad1", ConvSpec(3, 4, kernel=3, padding=1), (1, 3, 8, 8)),
    ("k1_nobias", ConvSpec(6, 5, kernel=1, bias=False), (2, 6, 7, 9)),
    ("k1_many_chan", ConvSpec(19, 4, kernel=1, bias=False), (1, 19, 6, 6)),
    ("k3_stride2", ConvSpec(4, 6, kernel=3, stride=2, padding=1), (2, 4, 9, 9)),
    ("k5_dil2", ConvSpec(2, 3, kernel=5, dilation=2, padding=4), (1, 2, 12, 10)),
    ("depthwise", ConvSpec(6, 6, kernel=3, padding=1, groups=6, bias=False), (2, 6, 8, 8)),
    ("grouped", ConvSpec(6, 4, kernel=3, padding=1, groups=2), (1, 6, 8, 8)),
    ("dilated_dw", ConvSpec(6, 6, kernel=3, dilation=6, padding=6, groups=6, bias=False), (2, 6, 16, 16)),
]


@pytest.mark.parametrize("name,spec,shape", CASES, ids=[c[0] for c in CASES])
def test_forward_bitwise_matches_loop_nest(name, spec, shape, rng):
    x = _randn(rng, shape)
    w = _randn(rng, spec.weight_shape)
    b = _randn(rng, (spec.out_channels,)) if spec.bias else None
    got = ops.conv2d_forward(x, w, b, spec)
    want = conv2d_ref(x, w, b, spec)
    assert got.dtype == np.float32
    assert got.shape == want.shape
    assert np.array_equal(got, want)


def test_forward_bitwise_matches_loop_nest_float64(rng):
    spec = ConvSpec(3, 4, kernel=3, padding=1, dilation=2)
    with dtype_context("float64"):
        x = _randn(rng, (2, 3, 9, 9), np.float64)
        w = _randn(rng, spec.weight_shape, np.float64)
        b = _randn(rng, (4,), np.float64)
        got = ops.conv2d_forward(x, w, b, spec)
    assert got.dtype == np.float64
    assert np.array_equal(got, conv2d_ref(x, w, b, spec))


def test_all_ones_5x5_gives_nines():
    spec = ConvSpec(1, 1, kernel=3, bias=False)
    x = np.ones((1, 1, 5, 5), dtype=np.float32)
    w = np.ones(spec.weight_shape, dtype=np.float32)
    y = ops.conv2d_forward(x, w, None, spec)
    assert y.shape == (1, 1, 3, 3)
    assert np.array_equal(y, np.full((1, 1, 3, 3), 9.0, dtype=np.float32))


def test_output_shape_k3_pad1_preserves_hw(rng):
    spec = ConvSpec(3, 4, kernel=3, padding=1)
    y = ops.conv2d_forward(
        _randn(rng, (1, 3, 8, 8)), _randn(rng, spec.weight_shape), _randn(rng, (4,)), spec
    )
    assert y.shape == (1, 4, 8, 8)


def test_dilated_depthwise_interior_is_nine_spaced_taps(rng):
    # dilation 6 with pad 6 keeps 16x16; an interior output pixel must equal
    # the sum of the nine taps spaced 6 apart in its own channel
    spec = ConvSpec(6, 6, kernel=3, dilation=6, padding=6, groups=6, bias=False)
    x = _randn(rng, (2, 6, 16, 16), np.float64)
    w = _randn(rng, spec.weight_shape, np.float64)
    with dtype_context("float64"):
        y = ops.conv2d_forward(x, w, None, spec)
    assert y.shape == (2, 6, 16, 16)
    bi, ci, oi, oj = 1, 4, 8, 7  # interior: all taps land inside the image
    acc = 0.0
    for kh in range(3):
        for kw in range(3):
            acc += w[ci, 0, kh, kw] * x[bi, ci, oi + 6 * (kh - 1), oj + 6 * (kw - 1)]
    assert np.isclose(y[bi, ci, oi, oj], acc, rtol=1e-12)


def test_1x1_conv_is_channel_mixing_matmul(rng):
    spec = ConvSpec(5, 3, kernel=1, bias=False)
    x = _randn(rng, (2, 5, 6, 6), np.float64)
    w = _randn(rng, spec.weight_shape, np.float64)
    with dtype_context("float64"):
        y = ops.conv2d_forward(x, w, None, spec)
    want = np.einsum("nc,bchw->bnhw", w[:, :, 0, 0], x)
    assert np.allclose(y, want, rtol=1e-12, atol=0)


def test_zero_adjoint_gives_zero_grads(rng):
    spec = ConvSpec(3, 4, kernel=3, padding=1)
    x = _randn(rng, (1, 3, 8, 8))
    w = _randn(rng, spec.weight_shape)
    gy = np.zeros((1, 4, 8, 8), dtype=np.float32)
    dx, dw, db = ops.conv2d_backward(gy, x, w, spec)
    assert not dx.any() and not dw.any() and not db.any()
    assert dx.shape == x.shape and dw.shape == w.shape and db.shape == (4,)


def test_backward_matches_transpose_identity(rng):
    # y = conv(x; w) is linear in x at fixed w and linear in w at fixed x, so
    # <gy, y> must equal both <dx, x> and <dw, w> (bias off)
    for spec, shape in [
        (ConvSpec(3, 4, kernel=3, padding=1, bias=False), (2, 3, 8, 8)),
        (ConvSpec(4, 4, kernel=3, padding=2, dilation=2, groups=4, bias=False), (1, 4, 7, 7)),
        (ConvSpec(4, 6, kernel=3, stride=2, padding=1, bias=False), (2, 4, 9, 9)),
    ]:
        with dtype_context("float64"):
            x = _randn(rng, shape, np.float64)
            w = _randn(rng, spec.weight_shape, np.float64)
            y = ops.conv2d_forward(x, w, None, spec)
            gy = _randn(rng, y.shape, np.float64)
            dx, dw, db = ops.conv2d_backward(gy, x, w, spec)
            lhs = float((gy * y).sum())
        assert db is None
        assert np.isclose(lhs, float((dx * x).sum()), rtol=1e-9)
        assert np.isclose(lhs, float((dw * w).sum()), rtol=1e-9)


def test_1x1_dx_is_transpose_mix(rng):
    spec = ConvSpec(5, 3, kernel=1, bias=False)
    x = _randn(rng, (1, 5, 4, 4), np.float64)
    w = _randn(rng, spec.weight_shape, np.float64)
    gy = _randn(rng, (1, 3, 4, 4), np.float64)
    with dtype_context("float64"):
        dx, _, _ = ops.conv2d_backward(gy, x, w, spec)
    want = np.einsum("nc,bnhw->bchw", w[:, :, 0, 0], gy)
    assert np.allclose(dx, want, rtol=1e-12, atol=1e-14)


def test_depthwise_grads_stay_in_channel(rng):
    spec = ConvSpec(4, 4, kernel=3, padding=1, groups=4, bias=False)
    x = _randn(rng, (1, 4, 6, 6))
    w = _randn(rng, spec.weight_shape)
    gy = np.zeros((1, 4, 6, 6), dtype=np.float32)
    gy[0, 2] = 1.0  # poke only channel 2
    dx, dw, _ = ops.conv2d_backward(gy, x, w, spec)
    for c in range(4):
        if c == 2:
            assert dx[0, c].any() and dw[c].any()
        else:
            assert not dx[0, c].any() and not dw[c].any()


def test_conv_empty_output_raises():
    spec = ConvSpec(1, 1, kernel=5)
    with pytest.raises(ShapeError):
        ops.conv2d_forward(np.ones((1, 1, 3, 3), np.float32), np.ones(spec.weight_shape, np.float32), None, spec)


# ---------------------------------------------------------------- transposed


def test_tconv_forward_bitwise_matches_gather_oracle(rng):
    spec = TConvSpec(3, 2, kernel=3, stride=2, padding=1, output_padding=1)
    x = _randn(rng, (2, 3, 5, 6))
    w = _randn(rng, spec.weight_shape)
    b = _randn(rng, (2,))
    got = ops.transposed_conv2d_forward(x, w, b, spec)
    assert got.shape == (2, 2, 10, 12)
    assert np.array_equal(got, tconv2d_ref(x, w, b, spec))


def test_tconv_shape_doubles_with_decoder_settings(rng):
    spec = TConvSpec(8, 4, kernel=3, stride=2, padding=1, output_padding=1)
    y = ops.transposed_conv2d_forward(
        _randn(rng, (1, 8, 4, 4)), _randn(rng, spec.weight_shape), _randn(rng, (4,)), spec
    )
    assert y.shape == (1, 4, 8, 8)


def test_tconv_zero_weights_zero_output(rng):
    spec = TConvSpec(3, 4, kernel=2, stride=2, bias=False)
    x = _randn(rng, (1, 3, 4, 4))
    y = ops.transposed_conv2d_forward(x, np.zeros(spec.weight_shape, np.float32), None, spec)
    assert not y.any()


def test_tconv_is_adjoint_of_conv(rng):
    # a stride-2 transposed conv is the adjoint of the matching strided conv:
    # <gy, tconv(x)> == <conv_dx_style_gather(gy), x>; verify via its own backward
    spec = TConvSpec(3, 2, kernel=3, stride=2, padding=1, output_padding=1, bias=False)
    with dtype_context("float64"):
        x = _randn(rng, (1, 3, 5, 5), np.float64)
        w = _randn(rng, spec.weight_shape, np.float64)
        y = ops.transposed_conv2d_forward(x, w, None, spec)
        gy = _randn(rng, y.shape, np.float64)
        dx, dw, db = ops.transposed_conv2d_backward(gy, x, w, spec)
        lhs = float((gy * y).sum())
        rhs = float((dx * x).sum())
        # y is linear in x at fixed w, so <gy, y(x)> == <dx, x>
    assert np.isclose(lhs, rhs, rtol=1e-9)
    assert db is None
    # and linear in w at fixed x
    with dtype_context("float64"):
        rhs_w = float((dw * w).sum())
    assert np.isclose(lhs, rhs_w, rtol=1e-9)
