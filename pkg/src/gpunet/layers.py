"""Stateful layer objects over the functional ops.

A Module tracks its Params, registered buffers and child modules in insertion
order, which fixes parameter iteration order (and therefore init draws,
optimizer walks and checkpoint layout) once and for all. Layers cache what
their backward needs during forward; backward accumulates into Param.grad and
returns the input gradient.
"""

import numpy as np

from . import ops
from .dtypes import dtype, ones, zeros
from .errors import ShapeError
from .specs import ConvSpec, PoolSpec, TConvSpec


class Param:
    """A learnable tensor paired with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        """Track a non-learnable state tensor (updated in place only)."""
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def params(self, prefix: str = ""):
        """Yield (dotted_name, Param) in registration order, depth-first."""
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.params(prefix + name + ".")

    def buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.buffers(prefix + name + ".")

    def state_items(self):
        """All named state: parameters first, then buffers, fixed order."""
        yield from self.params()
        yield from self.buffers()

    def zero_grad(self):
        for _, p in self.params():
            p.zero_grad()

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._list)), module)
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Conv2d(Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.weight = Param(zeros(spec.weight_shape))
        if spec.bias:
            self.bias = Param(zeros(spec.out_channels))
        else:
            self.bias = None

    def forward(self, x, train: bool = False):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return ops.conv2d_forward(x, self.weight.value, b, self.spec)

    def backward(self, grad):
        dx, dw, db = ops.conv2d_backward(grad, self._x, self.weight.value, self.spec)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class ConvTranspose2d(Module):
    def __init__(self, spec: TConvSpec):
        super().__init__()
        self.spec = spec
        self.weight = Param(zeros(spec.weight_shape))
        if spec.bias:
            self.bias = Param(zeros(spec.out_channels))
        else:
            self.bias = None

    def forward(self, x, train: bool = False):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return ops.transposed_conv2d_forward(x, self.weight.value, b, self.spec)

    def backward(self, grad):
        dx, dw, db = ops.transposed_conv2d_backward(grad, self._x, self.weight.value, self.spec)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class MaxPool2d(Module):
    def __init__(self, spec: PoolSpec = PoolSpec()):
        super().__init__()
        self.spec = spec

    def forward(self, x, train: bool = False):
        y, idx = ops.maxpool2d_forward(x, self.spec)
        self._idx = idx
        self._in_shape = x.shape
        return y

    def backward(self, grad):
        return ops.maxpool2d_backward(grad, self._idx, self._in_shape, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(ones(channels))
        self.beta = Param(zeros(channels))
        self.register_buffer("running_mean", zeros(channels))
        self.register_buffer("running_var", ones(channels))

    def forward(self, x, train: bool = False):
        y, cache = ops.batchnorm2d_forward(
            x,
            self.gamma.value,
            self.beta.value,
            self.running_mean,
            self.running_var,
            train=train,
            momentum=self.momentum,
            eps=self.eps,
        )
        self._cache = cache
        return y

    def backward(self, grad):
        dx, dg, db = ops.batchnorm2d_backward(grad, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        return dx


class ReLU(Module):
    def forward(self, x, train: bool = False):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._x)


class Sigmoid(Module):
    def forward(self, x, train: bool = False):
        y = ops.sigmoid_forward(x)
        self._y = y
        return y

    def backward(self, grad):
        return ops.sigmoid_backward(grad, self._y)


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """He-uniform draw with bound sqrt(6 / fan_in), cast to the engine dtype."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype())


def init_module(module: Module, seed: int) -> Module:
    """Initialize all parameters in registration order from one seeded stream.

    Conv and transposed-conv kernels get Kaiming-uniform fan-in draws, biases
    zero, batchnorm gamma 1 / beta 0, running stats 0 / 1. Iteration order is
    the module tree order, so a (module tree, seed) pair pins every value.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    _init_walk(module, rng)
    return module


def _init_walk(module: Module, rng: np.random.Generator):
    if isinstance(module, (Conv2d, ConvTranspose2d)):
        w = module.weight.value
        k = module.spec.kernel
        fan_in = w.shape[1] * k * k
        module.weight.value[...] = kaiming_uniform(w.shape, fan_in, rng)
        if module.bias is not None:
            module.bias.value[...] = 0
    elif isinstance(module, BatchNorm2d):
        module.gamma.value[...] = 1
        module.beta.value[...] = 0
        module.running_mean[...] = 0
        module.running_var[...] = 1
    for child in module._children.values():
        _init_walk(child, rng)


def state_dict(module: Module) -> dict[str, np.ndarray]:
    """Named state as plain arrays (params then buffers), fixed order."""
    return {
        name: (t.value if isinstance(t, Param) else t) for name, t in module.state_items()
    }


def load_state(module: Module, tensors: dict[str, np.ndarray]):
    """Copy named tensors into the module's params and buffers, in place."""
    own = dict(module.state_items())
    missing = sorted(set(own) - set(tensors))
    extra = sorted(set(tensors) - set(own))
    if missing or extra:
        raise ShapeError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, arr in tensors.items():
        target = own[name].value if isinstance(own[name], Param) else own[name]
        if target.shape != arr.shape:
            raise ShapeError(f"state tensor {name} has shape {arr.shape}, expected {target.shape}")
        target[...] = arr.astype(target.dtype)
