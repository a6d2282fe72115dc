"""Functional forward/backward primitives on NCHW numpy arrays.

Each forward raises ShapeError on malformed inputs and NonFiniteError if it
would emit NaN/Inf; backwards mirror the forwards. Everything computes in the
engine dtype (see dtypes). These functions are pure apart from batchnorm's
explicit running-stat updates; layers own caching and gradient accumulation.
"""

import numpy as np

from . import kernels
from .dtypes import asdtype, dtype
from .errors import NonFiniteError, ShapeError
from .specs import ConvSpec, PoolSpec, TConvSpec


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


def _require4(x: np.ndarray, what: str) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (NCHW), got shape {x.shape}")
    return x


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _run_conv_kernel(xp: np.ndarray, w: np.ndarray, y: np.ndarray, stride: int, dilation: int):
    k = w.shape[2]
    if stride == 1 and k == 3:
        kernels.conv2d_fwd_k3s1(xp, w, y, dilation)
    elif stride == 1 and k == 1:
        kernels.conv2d_fwd_k1s1(xp, w, y)
    else:
        kernels.conv2d_fwd_generic(xp, w, y, stride, dilation)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias, spec: ConvSpec) -> np.ndarray:
    """y[b,n,oh,ow] = sum over (c, kh, kw) of w*x, plus bias last."""
    _require4(x, "conv2d input")
    b, c, h, w_ = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d input has {c} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight shape {weight.shape} != spec {spec.weight_shape}")
    if spec.bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ShapeError("conv2d bias missing or wrong length")
    elif bias is not None:
        raise ShapeError("conv2d spec declares no bias but one was given")
    oh, ow = spec.out_hw(h, w_)
    xp = _pad_hw(asdtype(x), spec.padding)
    y = np.zeros((b, spec.out_channels, oh, ow), dtype=dtype())
    _run_conv_kernel(xp, asdtype(weight), y, spec.stride, spec.dilation)
    if spec.bias:
        y += asdtype(bias)[None, :, None, None]
    return check_finite(y, "conv2d output")


def _flip_weight_for_dx(weight: np.ndarray, groups: int) -> np.ndarray:
    """Rearrange (n, c/g, k, k) into (c, n/g, k, k) with both kernel axes flipped."""
    n, cg, k, _ = weight.shape
    npg = n // groups
    wt = weight.reshape(groups, npg, cg, k, k)
    wt = wt.transpose(0, 2, 1, 3, 4)[:, :, :, ::-1, ::-1]
    return np.ascontiguousarray(wt.reshape(groups * cg, npg, k, k))


def conv2d_backward(grad_y: np.ndarray, x: np.ndarray, weight: np.ndarray, spec: ConvSpec):
    """Return (grad_x, grad_w, grad_b); grad_b is None for bias-free specs."""
    _require4(grad_y, "conv2d grad")
    b, c, h, w_ = x.shape
    oh, ow = spec.out_hw(h, w_)
    if grad_y.shape != (b, spec.out_channels, oh, ow):
        raise ShapeError(
            f"conv2d grad shape {grad_y.shape} != forward output {(b, spec.out_channels, oh, ow)}"
        )
    grad_y = asdtype(grad_y)
    weight = asdtype(weight)
    xp = _pad_hw(asdtype(x), spec.padding)
    k, p, s, d = spec.kernel, spec.padding, spec.stride, spec.dilation

    grad_w = np.zeros_like(weight)
    if s == 1 and k == 3:
        kernels.conv2d_dw_k3s1(xp, grad_y, grad_w, d)
    else:
        kernels.conv2d_dw_generic(xp, grad_y, grad_w, s, d)

    if s == 1 and d * (k - 1) >= p:
        # dx is a convolution of grad_y with the flipped, channel-transposed
        # weights; the padded-gradient trick keeps it on the fast kernels.
        wt = _flip_weight_for_dx(weight, spec.groups)
        gp = _pad_hw(grad_y, d * (k - 1) - p)
        grad_x = np.zeros(x.shape, dtype=dtype())
        _run_conv_kernel(gp, wt, grad_x, 1, d)
    else:
        dxp = np.zeros((b, c, h + 2 * p, w_ + 2 * p), dtype=dtype())
        kernels.conv2d_dx_strided(grad_y, weight, dxp, s, d)
        grad_x = np.ascontiguousarray(dxp[:, :, p : p + h, p : p + w_])

    grad_b = grad_y.sum(axis=(0, 2, 3)) if spec.bias else None
    check_finite(grad_x, "conv2d grad_x")
    check_finite(grad_w, "conv2d grad_w")
    return grad_x, grad_w, grad_b


def transposed_conv2d_forward(x: np.ndarray, weight: np.ndarray, bias, spec: TConvSpec) -> np.ndarray:
    _require4(x, "transposed conv input")
    b, c, h, w_ = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"transposed conv input has {c} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"transposed conv weight {weight.shape} != spec {spec.weight_shape}")
    if spec.bias and (bias is None or bias.shape != (spec.out_channels,)):
        raise ShapeError("transposed conv bias missing or wrong length")
    oh, ow = spec.out_hw(h, w_)
    y = np.zeros((b, spec.out_channels, oh, ow), dtype=dtype())
    kernels.tconv2d_fwd(asdtype(x), asdtype(weight), y, spec.stride, spec.padding)
    if spec.bias:
        y += asdtype(bias)[None, :, None, None]
    return check_finite(y, "transposed conv output")


def transposed_conv2d_backward(grad_y: np.ndarray, x: np.ndarray, weight: np.ndarray, spec: TConvSpec):
    b, c, h, w_ = x.shape
    oh, ow = spec.out_hw(h, w_)
    if grad_y.shape != (b, spec.out_channels, oh, ow):
        raise ShapeError(
            f"transposed conv grad shape {grad_y.shape} != output {(b, spec.out_channels, oh, ow)}"
        )
    grad_y = asdtype(grad_y)
    x = asdtype(x)
    weight = asdtype(weight)
    grad_x = np.zeros_like(x)
    kernels.tconv2d_dx(grad_y, weight, grad_x, spec.stride, spec.padding)
    grad_w = np.zeros_like(weight)
    kernels.tconv2d_dw(x, grad_y, grad_w, spec.stride, spec.padding)
    grad_b = grad_y.sum(axis=(0, 2, 3)) if spec.bias else None
    check_finite(grad_x, "transposed conv grad_x")
    check_finite(grad_w, "transposed conv grad_w")
    return grad_x, grad_w, grad_b


def maxpool2d_forward(x: np.ndarray, spec: PoolSpec = PoolSpec()):
    """Return (pooled, argmax) where argmax stores flat h*w positions."""
    _require4(x, "maxpool input")
    b, c, h, w_ = x.shape
    if spec.kernel == spec.stride and (h % spec.kernel or w_ % spec.kernel):
        raise ShapeError(f"maxpool window {spec.kernel} needs divisible spatial dims, got {h}x{w_}")
    oh, ow = spec.out_hw(h, w_)
    x = asdtype(x)
    y = np.empty((b, c, oh, ow), dtype=dtype())
    idx = np.empty((b, c, oh, ow), dtype=np.int64)
    kernels.maxpool_fwd(x, y, idx, spec.kernel, spec.stride)
    return check_finite(y, "maxpool output"), idx


def maxpool2d_backward(grad_y: np.ndarray, idx: np.ndarray, in_shape, spec: PoolSpec = PoolSpec()) -> np.ndarray:
    if grad_y.shape != idx.shape:
        raise ShapeError(f"maxpool grad shape {grad_y.shape} != argmax shape {idx.shape}")
    b, c, h, w_ = in_shape
    flat = np.zeros((b, c, h * w_), dtype=dtype())
    g = asdtype(grad_y).reshape(b, c, -1)
    if spec.stride >= spec.kernel:
        # Windows are disjoint, so argmax positions are unique per plane and a
        # put routes each grad in one vectorized pass.
        np.put_along_axis(flat, idx.reshape(b, c, -1), g, axis=2)
    else:
        np.add.at(flat, (np.arange(b)[:, None, None], np.arange(c)[None, :, None], idx.reshape(b, c, -1)), g)
    return check_finite(flat.reshape(in_shape), "maxpool grad_x")


def batchnorm2d_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel normalization over (batch, h, w).

    Train mode normalizes with the biased batch variance and folds the
    unbiased variance into running_var (mutated in place, as is running_mean).
    Returns (y, cache) where cache feeds batchnorm2d_backward.
    """
    _require4(x, "batchnorm input")
    c = x.shape[1]
    for name, arr in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"batchnorm {name} has shape {arr.shape}, expected ({c},)")
    x = asdtype(x)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if train:
        if n < 2:
            raise ShapeError(f"batchnorm train mode needs batch*h*w >= 2, got {n}")
        mean = x.mean(axis=(0, 2, 3))
        var = ((x - mean[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1.0))
    else:
        mean = running_mean.astype(dtype())
        var = running_var.astype(dtype())
    inv_std = 1.0 / np.sqrt(var + dtype().type(eps))
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = asdtype(gamma)[None, :, None, None] * xhat + asdtype(beta)[None, :, None, None]
    cache = (xhat, inv_std.astype(dtype()), asdtype(gamma), train, n)
    return check_finite(y, "batchnorm output"), cache


def batchnorm2d_backward(grad_y: np.ndarray, cache):
    """Return (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma, train, n = cache
    if grad_y.shape != xhat.shape:
        raise ShapeError(f"batchnorm grad shape {grad_y.shape} != input {xhat.shape}")
    grad_y = asdtype(grad_y)
    grad_gamma = (grad_y * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_y.sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None] * inv_std[None, :, None, None]
    if train:
        grad_x = g * (
            grad_y
            - grad_beta[None, :, None, None] / n
            - xhat * grad_gamma[None, :, None, None] / n
        )
    else:
        grad_x = g * grad_y
    return check_finite(grad_x, "batchnorm grad_x"), grad_gamma, grad_beta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(asdtype(x), dtype().type(0))


def relu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is 0.
    return asdtype(grad_y) * (x > 0)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    x = asdtype(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return check_finite(out, "sigmoid output")


def sigmoid_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return asdtype(grad_y) * y * (1.0 - y)


def concat_channels_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require4(a, "concat input a")
    _require4(b, "concat input b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat inputs disagree outside channels: {a.shape} vs {b.shape}")
    return np.concatenate([asdtype(a), asdtype(b)], axis=1)


def concat_channels_backward(grad_y: np.ndarray, a_channels: int):
    grad_y = asdtype(grad_y)
    return (
        np.ascontiguousarray(grad_y[:, :a_channels]),
        np.ascontiguousarray(grad_y[:, a_channels:]),
    )


BCE_EPS = 1e-7


def bce_forward(pred: np.ndarray, target: np.ndarray):
    """Mean binary cross entropy. Returns (loss, cache)."""
    if pred.shape != target.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {target.shape}")
    t = asdtype(target)
    if not np.isin(t, (0.0, 1.0)).all():
        raise ShapeError("bce target must contain only 0 and 1")
    p = asdtype(pred)
    eps = dtype().type(BCE_EPS)
    pc = np.clip(p, eps, 1.0 - eps)
    loss = float(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean())
    if not np.isfinite(loss):
        raise NonFiniteError("bce loss is not finite")
    cache = (p, pc, t, eps)
    return loss, cache


def bce_backward(cache) -> np.ndarray:
    """Gradient of the mean BCE wrt pred; zero where the clamp was active."""
    p, pc, t, eps = cache
    count = dtype().type(p.size)
    grad = (pc - t) / (pc * (1.0 - pc)) / count
    inside = (p > eps) & (p < 1.0 - eps)
    return check_finite(grad * inside, "bce grad")
