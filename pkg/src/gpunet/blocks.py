"""Ghost module, GP-module and the residual GP-bottleneck.

A ghost module runs one primary convolution producing m intrinsic maps, then
derives ratio-1 ghost maps per intrinsic map through cheap depth-wise ops.
Output channels are grouped by intrinsic map, the identity slot last in each
group, and the tail is truncated when out_channels is not a multiple of the
ratio. The GP-module is the same machine with a per-slot dilation bank; both
are covered by GhostModule, whose behavior is entirely determined by the
spec's bank.
"""

import numpy as np

from . import ops
from .errors import ShapeError, SpecError
from .layers import BatchNorm2d, Conv2d, Module, ModuleList, ReLU
from .specs import BneckSpec, ConvSpec, GhostSpec


class GhostModule(Module):
    def __init__(self, spec: GhostSpec):
        super().__init__()
        self.spec = spec
        self.primary = Conv2d(spec.primary_spec())
        self.cheap = ModuleList(Conv2d(spec.cheap_spec(j)) for j in range(spec.ratio - 1))

    def forward(self, x, train: bool = False):
        spec = self.spec
        if x.shape[1] != spec.in_channels:
            raise ShapeError(f"ghost module input has {x.shape[1]} channels, expected {spec.in_channels}")
        intrinsic = self.primary(x, train)
        m, s, n = spec.intrinsic_channels, spec.ratio, spec.out_channels
        if s == 1:
            self._shape = intrinsic.shape
            return intrinsic
        # Stack slot outputs as (b, m, s, h, w): cheap slots 0..s-2, identity
        # last, then flatten groups and truncate to n channels.
        slots = [op(intrinsic, train) for op in self.cheap]
        slots.append(intrinsic)
        b, _, h, w = intrinsic.shape
        stacked = np.stack(slots, axis=2)
        self._shape = intrinsic.shape
        return np.ascontiguousarray(stacked.reshape(b, m * s, h, w)[:, :n])

    def backward(self, grad):
        spec = self.spec
        m, s, n = spec.intrinsic_channels, spec.ratio, spec.out_channels
        if s == 1:
            return self.primary.backward(grad)
        b, _, h, w = self._shape
        full = np.zeros((b, m * s, h, w), dtype=grad.dtype)
        full[:, :n] = grad
        per_slot = full.reshape(b, m, s, h, w)
        d_intrinsic = np.ascontiguousarray(per_slot[:, :, s - 1])
        for j, op in enumerate(self.cheap):
            d_intrinsic = d_intrinsic + op.backward(np.ascontiguousarray(per_slot[:, :, j]))
        return self.primary.backward(d_intrinsic)


def ghost_module(spec: GhostSpec) -> GhostModule:
    """Ghost-flavored module: requires a uniform cheap-op bank."""
    if len(set(spec.bank)) > 1:
        raise SpecError(f"ghost module needs a uniform cheap-op bank, got {spec.bank}")
    return GhostModule(spec)


def gp_module(spec: GhostSpec) -> GhostModule:
    """GP-flavored module: the bank may assign a distinct op to each slot."""
    return GhostModule(spec)


class Bottleneck(Module):
    """Residual block: shortcut(x) + BN(M2(ReLU(BN(M1(x))))).

    No activation follows the addition. The shortcut is the identity when
    channel counts match, otherwise a 1x1 projection conv (no bias) + BN.
    """

    def __init__(self, spec: BneckSpec):
        super().__init__()
        self.spec = spec
        self.m1 = GhostModule(spec.module1)
        self.bn1 = BatchNorm2d(spec.out_channels)
        self.relu = ReLU()
        self.m2 = GhostModule(spec.module2)
        self.bn2 = BatchNorm2d(spec.out_channels)
        if spec.shortcut_kind == "projection":
            self.sc_conv = Conv2d(
                ConvSpec(spec.in_channels, spec.out_channels, kernel=1, bias=False)
            )
            self.sc_bn = BatchNorm2d(spec.out_channels)
        else:
            self.sc_conv = None
            self.sc_bn = None

    def forward(self, x, train: bool = False):
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"bottleneck input has {x.shape[1]} channels, expected {self.spec.in_channels}")
        h = self.relu(self.bn1(self.m1(x, train), train), train)
        h = self.bn2(self.m2(h, train), train)
        if self.sc_conv is not None:
            shortcut = self.sc_bn(self.sc_conv(x, train), train)
        else:
            shortcut = x
        return ops.check_finite(h + shortcut, "bottleneck output")

    def backward(self, grad):
        if self.sc_conv is not None:
            dx_short = self.sc_conv.backward(self.sc_bn.backward(grad))
        else:
            dx_short = grad
        d = self.bn2.backward(grad)
        d = self.m2.backward(d)
        d = self.relu.backward(d)
        d = self.bn1.backward(d)
        d = self.m1.backward(d)
        return d + dx_short


class DoubleConv(Module):
    """Two size-preserving 3x3 conv + BN + ReLU stages (the ordinary block)."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = Conv2d(ConvSpec(in_channels, out_channels, kernel=3, padding=1))
        self.bn1 = BatchNorm2d(out_channels)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(ConvSpec(out_channels, out_channels, kernel=3, padding=1))
        self.bn2 = BatchNorm2d(out_channels)
        self.relu2 = ReLU()

    def forward(self, x, train: bool = False):
        h = self.relu1(self.bn1(self.conv1(x, train), train), train)
        return self.relu2(self.bn2(self.conv2(h, train), train), train)

    def backward(self, grad):
        d = self.relu2.backward(grad)
        d = self.bn2.backward(d)
        d = self.conv2.backward(d)
        d = self.relu1.backward(d)
        d = self.bn1.backward(d)
        return self.conv1.backward(d)
