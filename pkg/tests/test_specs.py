"""Shape arithmetic and spec validation."""

import pytest

from gpunet.errors import SpecError
from gpunet.specs import (
    GP_BANK,
    BneckSpec,
    ConvSpec,
    GhostSpec,
    PoolSpec,
    TConvSpec,
    conv_out_size,
    ghost_bank,
    pool_out_size,
    tconv_out_size,
)


def _brute_out_size(size, kernel, stride, padding, dilation):
    # count the anchor positions whose dilated kernel fits inside the padded axis
    padded = size + 2 * padding
    span = dilation * (kernel - 1) + 1
    count = 0
    pos = 0
    while pos + span <= padded:
        count += 1
        pos += stride
    return count


@pytest.mark.parametrize("kernel", [1, 3, 5])
@pytest.mark.parametrize("dilation", [1, 6, 12, 18])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_out_size_matches_enumeration(kernel, dilation, stride):
    for size in (7, 16, 31, 96):
        padding = dilation * (kernel - 1) // 2
        expected = _brute_out_size(size, kernel, stride, padding, dilation)
        assert conv_out_size(size, kernel, stride, padding, dilation) == expected


def test_conv_out_size_same_padding_preserves_size():
    # the "same" padding rule p = d*(k-1)/2 keeps stride-1 outputs at input size
    for k, d in ((1, 1), (3, 1), (3, 6), (3, 12), (3, 18), (5, 2)):
        p = d * (k - 1) // 2
        assert conv_out_size(96, k, 1, p, d) == 96


def test_tconv_out_size_inverts_stride2_downsampling():
    # the decoder's 3x3/stride-2/pad-1/outpad-1 transposed conv exactly doubles
    for size in (6, 12, 32, 48):
        assert tconv_out_size(size, 3, 2, 1, 1) == 2 * size
    assert tconv_out_size(4, 2, 2, 0, 0) == 8


def test_pool_out_size_halves_even_inputs():
    assert pool_out_size(96, 2, 2) == 48
    assert pool_out_size(7, 2, 2) == 3


def test_conv_spec_validation():
    ConvSpec(3, 4, kernel=3, padding=1)  # fine
    with pytest.raises(SpecError):
        ConvSpec(3, 4, kernel=0)
    with pytest.raises(SpecError):
        ConvSpec(3, 4, stride=0)
    with pytest.raises(SpecError):
        ConvSpec(3, 4, dilation=0)
    with pytest.raises(SpecError):
        ConvSpec(3, 4, groups=2)  # 3 % 2 != 0
    with pytest.raises(SpecError):
        ConvSpec(4, 6, groups=4)  # 6 % 4 != 0
    with pytest.raises(SpecError):
        ConvSpec(0, 4)


def test_depthwise_spec_is_grouped_per_channel():
    spec = ConvSpec(8, 8, kernel=3, padding=1, groups=8, bias=False)
    assert spec.groups == spec.in_channels == spec.out_channels


def test_tconv_spec_validation():
    TConvSpec(8, 4, kernel=3, stride=2, padding=1, output_padding=1)
    with pytest.raises(SpecError):
        TConvSpec(8, 4, kernel=3, stride=2, output_padding=2)  # outpad >= stride
    with pytest.raises(SpecError):
        TConvSpec(0, 4)


def test_pool_spec_validation():
    PoolSpec(kernel=2, stride=2)
    with pytest.raises(SpecError):
        PoolSpec(kernel=0, stride=1)


def test_ghost_spec_defaults_and_validation():
    g = GhostSpec(8, 16, ratio=2)
    assert g.bank == ((3, 1),)  # s-1 = 1 plain 3x3 cheap op
    with pytest.raises(SpecError):
        GhostSpec(8, 16, ratio=0)
    with pytest.raises(SpecError):
        GhostSpec(8, 16, ratio=3, bank=((3, 1),))  # bank must have s-1 entries
    with pytest.raises(SpecError):
        GhostSpec(8, 16, ratio=2, bank=((2, 1),))  # even cheap kernel


def test_ghost_bank_shapes():
    assert ghost_bank(2) == ((3, 1),)
    assert ghost_bank(4, kernel=3, dilation=2) == ((3, 2),) * 3
    assert len(GP_BANK) == 5
    assert GP_BANK == ((3, 1), (3, 6), (3, 12), (3, 18), (1, 1))
    # every bank entry keeps "same" padding integral: r*(k-1) must be even
    for k, r in GP_BANK:
        assert (r * (k - 1)) % 2 == 0


def test_bneck_spec_validation():
    m1 = GhostSpec(8, 16, ratio=2)
    m2 = GhostSpec(16, 16, ratio=2)
    BneckSpec(8, 16, module1=m1, module2=m2)
    with pytest.raises(SpecError):
        BneckSpec(8, 16, module1=GhostSpec(4, 16, ratio=2), module2=m2)  # in mismatch
    with pytest.raises(SpecError):
        BneckSpec(8, 16, module1=m1, module2=GhostSpec(16, 8, ratio=2))  # out mismatch
