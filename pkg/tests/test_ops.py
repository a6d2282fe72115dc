"""Pooling, batch norm, activations, concat and BCE against small oracles."""

import numpy as np
import pytest

from gpunet import ops
from gpunet.dtypes import dtype_context
from gpunet.errors import NonFiniteError, ShapeError
from gpunet.specs import PoolSpec

from oracles import maxpool_ref


# ------------------------------------------------------------------ maxpool


def test_maxpool_2x2_picks_maximum():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    y, idx = ops.maxpool2d_forward(x)
    assert y.shape == (1, 1, 1, 1)
    assert y[0, 0, 0, 0] == 4.0


def test_maxpool_matches_bruteforce(rng):
    x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    y, _ = ops.maxpool2d_forward(x)
    assert np.array_equal(y, maxpool_ref(x))


def test_maxpool_overlapping_windows(rng):
    spec = PoolSpec(kernel=3, stride=1)
    x = rng.standard_normal((1, 2, 7, 7)).astype(np.float32)
    y, _ = ops.maxpool2d_forward(x, spec)
    assert np.array_equal(y, maxpool_ref(x, spec))


def test_maxpool_tie_break_sends_grad_to_first_element():
    # constant input: every window ties, so the full incoming gradient must
    # land on each window's first element in row-major order
    x = np.ones((1, 1, 4, 4), dtype=np.float32)
    y, idx = ops.maxpool2d_forward(x)
    gy = np.ones_like(y)
    dx = ops.maxpool2d_backward(gy, idx, x.shape)
    want = np.zeros_like(x)
    want[0, 0, 0::2, 0::2] = 1.0
    assert np.array_equal(dx, want)


def test_maxpool_backward_routes_to_argmax(rng):
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    y, idx = ops.maxpool2d_forward(x)
    gy = np.arange(1, 5, dtype=np.float32).reshape(1, 1, 2, 2)
    dx = ops.maxpool2d_backward(gy, idx, x.shape)
    assert dx.sum() == gy.sum()
    for oi in range(2):
        for oj in range(2):
            win = x[0, 0, 2 * oi : 2 * oi + 2, 2 * oj : 2 * oj + 2]
            dwin = dx[0, 0, 2 * oi : 2 * oi + 2, 2 * oj : 2 * oj + 2]
            flat = np.argmax(win)
            assert dwin.flat[flat] == gy[0, 0, oi, oj]
            assert np.count_nonzero(dwin) == 1


def test_maxpool_overlapping_backward_accumulates():
    # stride 1 windows overlap; a shared maximum must receive every window's grad
    spec = PoolSpec(kernel=2, stride=1)
    x = np.zeros((1, 1, 3, 3), dtype=np.float32)
    x[0, 0, 1, 1] = 5.0  # the global max sits in all four windows
    y, idx = ops.maxpool2d_forward(x, spec)
    dx = ops.maxpool2d_backward(np.ones_like(y), idx, x.shape, spec)
    assert dx[0, 0, 1, 1] == 4.0
    assert dx.sum() == 4.0


def test_maxpool_window_too_large_raises():
    with pytest.raises(ShapeError):
        ops.maxpool2d_forward(np.ones((1, 1, 1, 1), np.float32))


# ----------------------------------------------------------------- batchnorm


def _bn_params(c, dtype=np.float32):
    return (
        np.ones(c, dtype),
        np.zeros(c, dtype),
        np.zeros(c, dtype),
        np.ones(c, dtype),
    )


def test_batchnorm_constant_input_is_zero():
    gamma, beta, rm, rv = _bn_params(3)
    x = np.full((2, 3, 4, 4), 7.0, dtype=np.float32)
    y, _ = ops.batchnorm2d_forward(x, gamma, beta, rm, rv, train=True)
    assert np.allclose(y, 0.0, atol=1e-4)  # eps keeps the zero-variance case finite


def test_batchnorm_beta_shifts_means():
    gamma, beta, rm, rv = _bn_params(3)
    beta = beta + 5.0
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
    y, _ = ops.batchnorm2d_forward(x, gamma, beta, rm, rv, train=True)
    means = y.mean(axis=(0, 2, 3))
    assert np.allclose(means, 5.0, atol=1e-5)
    stds = y.std(axis=(0, 2, 3))
    assert np.allclose(stds, 1.0, atol=1e-3)


def test_batchnorm_normalizes_per_channel(rng):
    gamma, beta, rm, rv = _bn_params(2)
    x = rng.standard_normal((3, 2, 5, 5)).astype(np.float32) * 4.0 + 2.0
    y, _ = ops.batchnorm2d_forward(x, gamma, beta, rm, rv, train=True)
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_running_stats_update_and_eval_uses_them(rng):
    gamma, beta, rm, rv = _bn_params(2)
    x = (rng.standard_normal((4, 2, 6, 6)) * 3.0 + 1.0).astype(np.float32)
    ops.batchnorm2d_forward(x, gamma, beta, rm, rv, train=True, momentum=1.0)
    assert np.allclose(rm, x.mean(axis=(0, 2, 3)), atol=1e-5)
    # eval mode must use the stored statistics, not the batch's
    x2 = np.zeros_like(x)
    y2, _ = ops.batchnorm2d_forward(x2, gamma, beta, rm, rv, train=False)
    want = (0.0 - rm) / np.sqrt(rv + 1e-5)
    assert np.allclose(y2[0, :, 0, 0], want, atol=1e-5)


def test_batchnorm_eval_does_not_touch_stats(rng):
    gamma, beta, rm, rv = _bn_params(2)
    rm0, rv0 = rm.copy(), rv.copy()
    x = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
    ops.batchnorm2d_forward(x, gamma, beta, rm, rv, train=False)
    assert np.array_equal(rm, rm0) and np.array_equal(rv, rv0)


def test_batchnorm_rejects_single_pixel_batch():
    gamma, beta, rm, rv = _bn_params(2)
    with pytest.raises(ShapeError):
        ops.batchnorm2d_forward(
            np.ones((1, 2, 1, 1), np.float32), gamma, beta, rm, rv, train=True
        )


def test_batchnorm_backward_zero_mean_grad(rng):
    # dx of batch norm is orthogonal to constants: its per-channel sum is ~0
    gamma, beta, rm, rv = _bn_params(3)
    with dtype_context("float64"):
        x = rng.standard_normal((2, 3, 5, 5))
        y, cache = ops.batchnorm2d_forward(x, *_bn_params(3, np.float64), train=True)
        gy = rng.standard_normal(y.shape)
        dx, dgamma, dbeta = ops.batchnorm2d_backward(gy, cache)
    assert np.allclose(dx.sum(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(dbeta, gy.sum(axis=(0, 2, 3)), rtol=1e-12)
    assert np.allclose(dgamma, (gy * y).sum(axis=(0, 2, 3)), rtol=1e-10)


# --------------------------------------------------------------- activations


def test_relu_clamps_negatives():
    x = np.array([[-2.0, 0.0, 3.0]], dtype=np.float32).reshape(1, 1, 1, 3)
    assert np.array_equal(ops.relu_forward(x).ravel(), [0.0, 0.0, 3.0])


def test_relu_backward_masks_nonpositive():
    x = np.array([-1.0, 0.0, 2.0], dtype=np.float32).reshape(1, 1, 1, 3)
    gy = np.ones_like(x)
    assert np.array_equal(ops.relu_backward(gy, x).ravel(), [0.0, 0.0, 1.0])


def test_sigmoid_range_and_symmetry(rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32) * 10
    y = ops.sigmoid_forward(x)
    assert (y > 0).all() and (y < 1).all()
    assert np.allclose(ops.sigmoid_forward(-x), 1.0 - y, atol=1e-6)
    assert ops.sigmoid_forward(np.zeros((1, 1, 1, 1), np.float32))[0, 0, 0, 0] == 0.5


def test_sigmoid_extreme_inputs_stay_finite():
    x = np.array([-500.0, 500.0], dtype=np.float32).reshape(1, 1, 1, 2)
    y = ops.sigmoid_forward(x)
    assert np.isfinite(y).all()
    assert y[0, 0, 0, 0] < 1e-30 and y[0, 0, 0, 1] == 1.0


def test_sigmoid_backward_is_y_times_1my(rng):
    x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
    y = ops.sigmoid_forward(x)
    gy = np.ones_like(y)
    assert np.allclose(ops.sigmoid_backward(gy, y), y * (1 - y), atol=1e-7)


# -------------------------------------------------------------------- concat


def test_concat_shapes_and_content(rng):
    a = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
    b = rng.standard_normal((1, 5, 4, 4)).astype(np.float32)
    y = ops.concat_channels_forward(a, b)
    assert y.shape == (1, 8, 4, 4)
    assert np.array_equal(y[:, :3], a) and np.array_equal(y[:, 3:], b)


def test_concat_backward_splits(rng):
    a = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    b = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
    gy = rng.standard_normal((2, 5, 4, 4)).astype(np.float32)
    da, db = ops.concat_channels_backward(gy, 3)
    assert np.array_equal(da, gy[:, :3]) and np.array_equal(db, gy[:, 3:])


def test_concat_spatial_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        ops.concat_channels_forward(
            np.ones((1, 1, 4, 4), np.float32), np.ones((1, 1, 5, 4), np.float32)
        )


# ----------------------------------------------------------------------- BCE


def test_bce_perfect_prediction_is_near_zero():
    t = np.array([0.0, 1.0, 1.0, 0.0], dtype=np.float32).reshape(1, 1, 1, 4)
    loss, _ = ops.bce_forward(t.copy(), t)
    assert 0 <= loss < 1e-5


def test_bce_uniform_half_is_ln2():
    p = np.full((2, 1, 3, 3), 0.5, dtype=np.float32)
    t = (np.arange(18).reshape(2, 1, 3, 3) % 2).astype(np.float32)
    loss, _ = ops.bce_forward(p, t)
    assert np.isclose(loss, np.log(2.0), rtol=1e-6)


def test_bce_matches_formula(rng):
    p = rng.uniform(0.05, 0.95, (1, 1, 4, 4)).astype(np.float32)
    t = (rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(np.float32)
    loss, _ = ops.bce_forward(p, t)
    want = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
    assert np.isclose(loss, want, rtol=1e-6)


def test_bce_rejects_nonbinary_targets():
    p = np.full((1, 1, 2, 2), 0.5, dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.bce_forward(p, np.full((1, 1, 2, 2), 0.3, dtype=np.float32))


def test_bce_backward_matches_closed_form(rng):
    with dtype_context("float64"):
        p = rng.uniform(0.1, 0.9, (1, 1, 3, 3))
        t = (rng.uniform(size=(1, 1, 3, 3)) > 0.5).astype(np.float64)
        loss, cache = ops.bce_forward(p, t)
        dp = ops.bce_backward(cache)
    want = (p - t) / (p * (1 - p)) / p.size
    assert np.allclose(dp, want, rtol=1e-10)


def test_check_finite_raises_on_nan():
    with pytest.raises(NonFiniteError):
        ops.check_finite(np.array([1.0, np.nan]), "probe")
