"""Hyperparameter records for every layer kind, with shape arithmetic.

Specs are frozen dataclasses validated at construction. They carry no weights;
they are shared between the runtime layers and the analytic cost model so both
sides agree on shapes by construction.
"""

from dataclasses import dataclass, field

from .errors import ShapeError, SpecError


def conv_out_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Output length of a convolution along one spatial axis.

    out = floor((size + 2*padding - dilation*(kernel-1) - 1) / stride) + 1
    """
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def tconv_out_size(size: int, kernel: int, stride: int, padding: int, output_padding: int) -> int:
    """Output length of a transposed convolution along one spatial axis."""
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def pool_out_size(size: int, kernel: int, stride: int) -> int:
    """Output length of a (non-padded) pooling window along one axis."""
    return (size - kernel) // stride + 1


def _positive(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise SpecError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class ConvSpec:
    """Ordinary 2-d convolution hyperparameters.

    Weight layout is (out_channels, in_channels // groups, kernel, kernel).
    """

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        _positive("in_channels", self.in_channels)
        _positive("out_channels", self.out_channels)
        _positive("kernel", self.kernel)
        _positive("stride", self.stride)
        _positive("dilation", self.dilation)
        _positive("groups", self.groups)
        if not isinstance(self.padding, int) or self.padding < 0:
            raise SpecError(f"padding must be a non-negative integer, got {self.padding!r}")
        if self.in_channels % self.groups != 0:
            raise SpecError(
                f"in_channels ({self.in_channels}) not divisible by groups ({self.groups})"
            )
        if self.out_channels % self.groups != 0:
            raise SpecError(
                f"out_channels ({self.out_channels}) not divisible by groups ({self.groups})"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel,
            self.kernel,
        )

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = conv_out_size(h, self.kernel, self.stride, self.padding, self.dilation)
        ow = conv_out_size(w, self.kernel, self.stride, self.padding, self.dilation)
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"convolution {self.kernel}x{self.kernel} s={self.stride} p={self.padding} "
                f"d={self.dilation} on {h}x{w} input yields empty output {oh}x{ow}"
            )
        return oh, ow


@dataclass(frozen=True)
class TConvSpec:
    """Transposed 2-d convolution hyperparameters.

    Weight layout is (in_channels, out_channels, kernel, kernel).
    """

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    bias: bool = True

    def __post_init__(self):
        _positive("in_channels", self.in_channels)
        _positive("out_channels", self.out_channels)
        _positive("kernel", self.kernel)
        _positive("stride", self.stride)
        if not isinstance(self.padding, int) or self.padding < 0:
            raise SpecError(f"padding must be a non-negative integer, got {self.padding!r}")
        if not isinstance(self.output_padding, int) or not 0 <= self.output_padding < self.stride:
            raise SpecError(
                f"output_padding must satisfy 0 <= op < stride, got {self.output_padding!r}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.in_channels, self.out_channels, self.kernel, self.kernel)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = tconv_out_size(h, self.kernel, self.stride, self.padding, self.output_padding)
        ow = tconv_out_size(w, self.kernel, self.stride, self.padding, self.output_padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"transposed convolution on {h}x{w} yields empty output")
        return oh, ow


@dataclass(frozen=True)
class PoolSpec:
    """Max-pooling hyperparameters. stride defaults to the window size."""

    kernel: int = 2
    stride: int = 0  # 0 means "same as kernel"

    def __post_init__(self):
        _positive("kernel", self.kernel)
        if self.stride == 0:
            object.__setattr__(self, "stride", self.kernel)
        _positive("stride", self.stride)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        if h < self.kernel or w < self.kernel:
            raise ShapeError(f"pool window {self.kernel} larger than input {h}x{w}")
        return (
            pool_out_size(h, self.kernel, self.stride),
            pool_out_size(w, self.kernel, self.stride),
        )


def ghost_bank(ratio: int, kernel: int = 3, dilation: int = 1) -> tuple[tuple[int, int], ...]:
    """Uniform cheap-op bank: ratio-1 copies of one (kernel, dilation) pair."""
    return ((kernel, dilation),) * (ratio - 1)


# Atrous bank used by GP-modules: four 3x3 kernels at increasing dilation
# rates plus one 1x1, giving ratio 6 together with the identity slot.
GP_BANK: tuple[tuple[int, int], ...] = ((3, 1), (3, 6), (3, 12), (3, 18), (1, 1))


@dataclass(frozen=True)
class GhostSpec:
    """Ghost / GP module hyperparameters.

    A primary convolution produces m = ceil(out_channels / ratio) intrinsic
    maps; each intrinsic map then yields ratio output slots (ratio-1 cheap
    depth-wise ops from ``bank``, identity last). ``bank`` holds one
    (kernel, dilation) pair per cheap slot, in slot order. Every cheap op is
    spatial-size preserving, which pins its padding to dilation*(kernel-1)/2.
    """

    in_channels: int
    out_channels: int
    ratio: int = 2
    kernel: int = 1  # primary convolution kernel
    bank: tuple[tuple[int, int], ...] = field(default=None)  # type: ignore[assignment]
    stride: int = 1

    def __post_init__(self):
        _positive("in_channels", self.in_channels)
        _positive("out_channels", self.out_channels)
        _positive("ratio", self.ratio)
        _positive("kernel", self.kernel)
        _positive("stride", self.stride)
        if self.kernel % 2 == 0:
            raise SpecError(f"primary kernel must be odd to preserve size, got {self.kernel}")
        if self.bank is None:
            object.__setattr__(self, "bank", ghost_bank(self.ratio))
        bank = tuple((int(d), int(r)) for d, r in self.bank)
        object.__setattr__(self, "bank", bank)
        if len(bank) != self.ratio - 1:
            raise SpecError(
                f"cheap-op bank has {len(bank)} entries, ratio {self.ratio} needs {self.ratio - 1}"
            )
        for j, (d, r) in enumerate(bank):
            _positive(f"bank[{j}] kernel", d)
            _positive(f"bank[{j}] dilation", r)
            if (r * (d - 1)) % 2 != 0:
                raise SpecError(
                    f"bank[{j}]: dilation*(kernel-1) = {r}*({d}-1) is odd, "
                    "no symmetric size-preserving padding exists"
                )

    @property
    def intrinsic_channels(self) -> int:
        """m = ceil(out_channels / ratio)."""
        return -(-self.out_channels // self.ratio)

    def primary_spec(self) -> ConvSpec:
        """Spec of the primary convolution (size-preserving padding, no bias)."""
        return ConvSpec(
            self.in_channels,
            self.intrinsic_channels,
            kernel=self.kernel,
            stride=self.stride,
            padding=self.kernel // 2,
            bias=False,
        )

    def cheap_spec(self, j: int) -> ConvSpec:
        """Spec of cheap op j: depth-wise over the m intrinsic maps, no bias."""
        d, r = self.bank[j]
        m = self.intrinsic_channels
        return ConvSpec(
            m,
            m,
            kernel=d,
            stride=1,
            padding=r * (d - 1) // 2,
            dilation=r,
            groups=m,
            bias=False,
        )

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return self.primary_spec().out_hw(h, w)


@dataclass(frozen=True)
class BneckSpec:
    """Residual bottleneck built from two ghost/GP modules.

    module1 expands in_channels to out_channels, module2 maps out_channels to
    out_channels. The shortcut is the identity when in_channels equals
    out_channels and a 1x1 projection (conv + batchnorm) otherwise.
    """

    in_channels: int
    out_channels: int
    module1: GhostSpec
    module2: GhostSpec

    def __post_init__(self):
        _positive("in_channels", self.in_channels)
        _positive("out_channels", self.out_channels)
        if (self.module1.in_channels, self.module1.out_channels) != (
            self.in_channels,
            self.out_channels,
        ):
            raise SpecError("module1 must map in_channels to out_channels")
        if (self.module2.in_channels, self.module2.out_channels) != (
            self.out_channels,
            self.out_channels,
        ):
            raise SpecError("module2 must map out_channels to out_channels")
        if self.module1.stride != 1 or self.module2.stride != 1:
            raise SpecError("bottleneck modules are stride 1")

    @property
    def shortcut_kind(self) -> str:
        return "identity" if self.in_channels == self.out_channels else "projection"
