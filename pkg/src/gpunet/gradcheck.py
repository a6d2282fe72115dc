"""Finite-difference verification of every backward pass.

Scalar losses are built by projecting an op's output onto a fixed random
direction; the analytic gradient comes from the op's backward with that
projection as the incoming gradient and runs in the requested engine dtype.

The numeric reference is always computed in float64 at the same evaluation
point (float32 values are exactly representable), with central differences and
per-element step h = cbrt(eps64) * max(1, |x|). The tiny float64 step keeps
piecewise-linear ops (relu, maxpool) inside one linear region during the
probe, which a float32-sized step cannot guarantee once activations pass
through batchnorm; the float32 tolerance then measures exactly what it
should — rounding error of the 32-bit forward/backward, not probe artifacts.

The reported error per tensor is max|analytic - numeric| / max(1, max|numeric|)
and a check's rel_err is the worst over its input and parameter tensors.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import Bottleneck, GhostModule
from .dtypes import dtype, dtype_context
from .layers import load_state, state_dict
from .models import ModelConfig, UNet, build_model
from .specs import GP_BANK, BneckSpec, ConvSpec, GhostSpec, PoolSpec, TConvSpec, ghost_bank

TOL_32 = 1e-3
TOL_64 = 1e-6
TOL_MODEL = 1e-2

_FD_BASE = float(np.cbrt(np.finfo(np.float64).eps))


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err < self.tol


def fd_gradient(f, x: np.ndarray) -> np.ndarray:
    """Central-difference gradient of scalar f() with respect to float64 x
    (perturbed in place element by element, restored after)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = _FD_BASE * max(1.0, abs(float(orig)))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic.astype(np.float64) - numeric).max(initial=0.0)) / scale


def _tol() -> float:
    return TOL_64 if dtype() == np.float64 else TOL_32


def _rand(rng, shape):
    return rng.standard_normal(shape).astype(dtype())


def _compare(name: str, forward64, inputs64: dict, analytic: dict, tol: float) -> CheckResult:
    """FD each float64 input against its analytic gradient; worst error wins.

    Must be called inside a float64 dtype context.
    """
    worst = 0.0
    for key, x in inputs64.items():
        numeric = fd_gradient(forward64, x)
        worst = max(worst, rel_error(analytic[key], numeric))
    return CheckResult(name, worst, tol)


def _check_conv(name: str, spec: ConvSpec, in_hw=(6, 7), batch=2, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    x = _rand(rng, (batch, spec.in_channels, *in_hw))
    w = _rand(rng, spec.weight_shape) * np.asarray(0.5, dtype=dtype())
    b = _rand(rng, (spec.out_channels,)) if spec.bias else None
    proj = _rand(rng, (batch, spec.out_channels, *spec.out_hw(*in_hw)))

    dx, dw, db = ops.conv2d_backward(proj, x, w, spec)
    analytic = {"x": dx, "w": dw}
    if spec.bias:
        analytic["b"] = db

    with dtype_context("float64"):
        x64, w64, proj64 = (a.astype(np.float64) for a in (x, w, proj))
        b64 = b.astype(np.float64) if spec.bias else None

        def forward():
            return float((ops.conv2d_forward(x64, w64, b64, spec) * proj64).sum())

        inputs = {"x": x64, "w": w64}
        if spec.bias:
            inputs["b"] = b64
        return _compare(name, forward, inputs, analytic, tol)


def _check_tconv(seed=0) -> CheckResult:
    spec = TConvSpec(3, 2, 3, stride=2, padding=1, output_padding=1)
    rng = np.random.default_rng(seed)
    tol = _tol()
    x = _rand(rng, (2, 3, 4, 5))
    w = _rand(rng, spec.weight_shape) * np.asarray(0.5, dtype=dtype())
    b = _rand(rng, (2,))
    proj = _rand(rng, (2, 2, *spec.out_hw(4, 5)))

    dx, dw, db = ops.transposed_conv2d_backward(proj, x, w, spec)

    with dtype_context("float64"):
        x64, w64, b64, proj64 = (a.astype(np.float64) for a in (x, w, b, proj))

        def forward():
            return float((ops.transposed_conv2d_forward(x64, w64, b64, spec) * proj64).sum())

        return _compare(
            "transposed_conv2d", forward,
            {"x": x64, "w": w64, "b": b64}, {"x": dx, "w": dw, "b": db}, tol,
        )


def _check_maxpool(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    # Well-separated values keep the argmax identical in both dtypes.
    vals = rng.permutation(np.arange(2 * 3 * 6 * 6)).astype(dtype()) * np.asarray(0.05, dtype=dtype())
    x = vals.reshape(2, 3, 6, 6).copy()
    spec = PoolSpec(2, 2)
    proj = _rand(rng, (2, 3, 3, 3))

    _, idx = ops.maxpool2d_forward(x, spec)
    dx = ops.maxpool2d_backward(proj, idx, x.shape, spec)

    with dtype_context("float64"):
        x64, proj64 = x.astype(np.float64), proj.astype(np.float64)

        def forward():
            y, _ = ops.maxpool2d_forward(x64, spec)
            return float((y * proj64).sum())

        return _compare("maxpool2d", forward, {"x": x64}, {"x": dx}, tol)


def _check_batchnorm(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    c = 4
    x = _rand(rng, (2, c, 5, 5))
    gamma = (1.0 + 0.3 * rng.standard_normal((c,))).astype(dtype())
    beta = (0.2 * rng.standard_normal((c,))).astype(dtype())
    proj = _rand(rng, x.shape)

    _, cache = ops.batchnorm2d_forward(
        x, gamma, beta, np.zeros(c, dtype=dtype()), np.ones(c, dtype=dtype()), train=True
    )
    dx, dg, db = ops.batchnorm2d_backward(proj, cache)

    with dtype_context("float64"):
        x64, g64, b64, proj64 = (a.astype(np.float64) for a in (x, gamma, beta, proj))

        def forward():
            y, _ = ops.batchnorm2d_forward(
                x64, g64, b64, np.zeros(c, dtype=np.float64), np.ones(c, dtype=np.float64),
                train=True,
            )
            return float((y * proj64).sum())

        return _compare(
            "batchnorm2d", forward,
            {"x": x64, "gamma": g64, "beta": b64}, {"x": dx, "gamma": dg, "beta": db}, tol,
        )


def _check_relu(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    x = _rand(rng, (2, 3, 5, 5))
    x += (np.sign(x) * 0.1).astype(dtype())  # keep away from the kink at 0
    proj = _rand(rng, x.shape)

    dx = ops.relu_backward(proj, x)

    with dtype_context("float64"):
        x64, proj64 = x.astype(np.float64), proj.astype(np.float64)

        def forward():
            return float((ops.relu_forward(x64) * proj64).sum())

        return _compare("relu", forward, {"x": x64}, {"x": dx}, tol)


def _check_sigmoid(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    x = _rand(rng, (2, 3, 5, 5))
    proj = _rand(rng, x.shape)

    y = ops.sigmoid_forward(x)
    dx = ops.sigmoid_backward(proj, y)

    with dtype_context("float64"):
        x64, proj64 = x.astype(np.float64), proj.astype(np.float64)

        def forward():
            return float((ops.sigmoid_forward(x64) * proj64).sum())

        return _compare("sigmoid", forward, {"x": x64}, {"x": dx}, tol)


def _check_concat(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    a = _rand(rng, (2, 3, 4, 4))
    b = _rand(rng, (2, 5, 4, 4))
    proj = _rand(rng, (2, 8, 4, 4))

    da, db = ops.concat_channels_backward(proj, 3)

    with dtype_context("float64"):
        a64, b64, proj64 = (t.astype(np.float64) for t in (a, b, proj))

        def forward():
            return float((ops.concat_channels_forward(a64, b64) * proj64).sum())

        return _compare("concat_channels", forward, {"a": a64, "b": b64}, {"a": da, "b": db}, tol)


def _check_bce(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = _tol()
    # Probabilities well inside the clamp band so both dtypes see the same branch.
    p = (0.05 + 0.9 * rng.random((2, 1, 5, 5))).astype(dtype())
    t = (rng.random((2, 1, 5, 5)) > 0.5).astype(dtype())

    _, cache = ops.bce_forward(p, t)
    dp = ops.bce_backward(cache)

    with dtype_context("float64"):
        p64, t64 = p.astype(np.float64), t.astype(np.float64)

        def forward():
            loss, _ = ops.bce_forward(p64, t64)
            return loss

        return _compare("bce_loss", forward, {"p": p64}, {"p": dp}, tol)


def _make_module(kind: str):
    if kind == "ghost_module":
        return GhostModule(GhostSpec(3, 6, ratio=2, kernel=1, bank=ghost_bank(2))), (2, 3, 6, 6)
    if kind == "gp_module":
        return GhostModule(GhostSpec(3, 12, ratio=6, kernel=1, bank=GP_BANK)), (2, 3, 8, 8)
    if kind == "gp_bottleneck_projection":
        spec = BneckSpec(
            3, 6,
            GhostSpec(3, 6, ratio=2, kernel=1, bank=ghost_bank(2)),
            GhostSpec(6, 6, ratio=2, kernel=1, bank=ghost_bank(2)),
        )
        return Bottleneck(spec), (1, 3, 8, 8)
    if kind == "gp_bottleneck_identity":
        spec = BneckSpec(
            4, 4,
            GhostSpec(4, 4, ratio=2, kernel=1, bank=ghost_bank(2)),
            GhostSpec(4, 4, ratio=2, kernel=1, bank=ghost_bank(2)),
        )
        return Bottleneck(spec), (1, 4, 8, 8)
    raise ValueError(kind)


def _module_check(kind: str, seed=0, tol=None) -> CheckResult:
    """FD-check a module's input gradient and every parameter gradient."""
    if tol is None:
        tol = _tol()
    rng = np.random.default_rng(seed)
    module, in_shape = _make_module(kind)
    x = _rand(rng, in_shape)
    for _, p in module.params():
        p.value[...] = (0.5 * rng.standard_normal(p.value.shape)).astype(dtype())
    out = module.forward(x, train=True)
    proj = _rand(rng, out.shape)

    module.zero_grad()
    module.forward(x, train=True)
    dx = module.backward(proj)
    analytic = {"x": dx}
    for pname, p in module.params():
        analytic[pname] = p.grad.copy()

    with dtype_context("float64"):
        mod64, _ = _make_module(kind)
        load_state(mod64, state_dict(module))
        x64 = x.astype(np.float64)
        proj64 = proj.astype(np.float64)

        def forward():
            return float((mod64.forward(x64, train=True) * proj64).sum())

        inputs = {"x": x64}
        for pname, p in mod64.params():
            inputs[pname] = p.value
        return _compare(kind, forward, inputs, analytic, tol)


def run_primitive_checks(seed: int = 0) -> list[CheckResult]:
    return [
        _check_conv("conv2d_3x3_pad1", ConvSpec(3, 4, 3, padding=1), seed=seed),
        _check_conv("conv2d_1x1", ConvSpec(5, 3, 1, bias=False), seed=seed + 1),
        _check_conv("conv2d_depthwise", ConvSpec(4, 4, 3, padding=1, groups=4, bias=False), seed=seed + 2),
        _check_conv("conv2d_dilated", ConvSpec(2, 3, 3, padding=2, dilation=2), seed=seed + 3),
        _check_conv("conv2d_strided", ConvSpec(3, 4, 3, stride=2, padding=1), seed=seed + 4),
        _check_tconv(seed=seed + 5),
        _check_maxpool(seed=seed + 6),
        _check_batchnorm(seed=seed + 7),
        _check_relu(seed=seed + 8),
        _check_sigmoid(seed=seed + 9),
        _check_concat(seed=seed + 10),
        _check_bce(seed=seed + 11),
    ]


def run_block_checks(seed: int = 0) -> list[CheckResult]:
    return [
        _module_check("ghost_module", seed=seed),
        _module_check("gp_module", seed=seed + 1),
        _module_check("gp_bottleneck_projection", seed=seed + 2),
        _module_check("gp_bottleneck_identity", seed=seed + 3),
    ]


def run_model_check(seed: int = 0, n_weights: int = 100) -> CheckResult:
    """End-to-end: FD on a sampled weight subset against the full backward."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(kind="gp", widths=(8, 16, 32, 64, 128), in_channels=1)
    model = build_model(cfg, seed=seed)
    x = _rand(rng, (1, 1, 32, 32))
    t = (rng.random((1, 1, 32, 32)) > 0.5).astype(dtype())

    model.zero_grad()
    y = model.forward(x, train=True)
    loss, cache = ops.bce_forward(y, t)
    model.backward(ops.bce_backward(cache))
    analytic = {name: p.grad.copy() for name, p in model.params()}

    with dtype_context("float64"):
        model64 = UNet(cfg)
        load_state(model64, state_dict(model))
        x64 = x.astype(np.float64)
        t64 = t.astype(np.float64)

        def forward():
            y64 = model64.forward(x64, train=True)
            loss64, _ = ops.bce_forward(y64, t64)
            return loss64

        named = list(model64.params())
        sizes = np.array([p.value.size for _, p in named])
        bounds = np.cumsum(sizes)
        picks = rng.choice(int(sizes.sum()), size=min(n_weights, int(sizes.sum())), replace=False)

        worst = 0.0
        for flat_idx in sorted(int(i) for i in picks):
            pi = int(np.searchsorted(bounds, flat_idx, side="right"))
            offset = flat_idx - (bounds[pi - 1] if pi else 0)
            name, p = named[pi]
            vflat = p.value.reshape(-1)
            orig = vflat[offset]
            h = _FD_BASE * max(1.0, abs(float(orig)))
            vflat[offset] = orig + h
            fp = forward()
            vflat[offset] = orig - h
            fm = forward()
            vflat[offset] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[offset])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return CheckResult("model_end_to_end", worst, TOL_MODEL)


def run_suite(scope: str, dtype_name: str = "float32", seed: int = 0) -> list[CheckResult]:
    """Run a named scope ('primitives' | 'blocks' | 'model') under a dtype."""
    with dtype_context(dtype_name):
        if scope == "primitives":
            return run_primitive_checks(seed)
        if scope == "blocks":
            return run_block_checks(seed)
        if scope == "model":
            return [run_model_check(seed)]
        raise ValueError(f"unknown gradcheck scope {scope!r}")
