"""U-Net family: ordinary, ghost and GP block variants over one topology.

The topology is fixed: four encoder levels (block then 2x2 maxpool), a
bottleneck block, four decoder levels (3x3 stride-2 transposed conv with
output_padding 1, concat with the skip, block), then a 1x1 conv head and
sigmoid. Only the block kind changes between the three models; upsamplers and
head stay ordinary convolutions.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import Bottleneck, DoubleConv
from .costs import CostNode
from .errors import ShapeError, SpecError
from .layers import Conv2d, ConvTranspose2d, MaxPool2d, Module, Sigmoid, init_module
from .specs import GP_BANK, BneckSpec, ConvSpec, GhostSpec, TConvSpec, ghost_bank

DEFAULT_WIDTHS = (64, 128, 256, 512, 1024)
KINDS = ("ordinary", "ghost", "gp")

# CLI-facing preset names.
MODEL_NAMES = {"unet": "ordinary", "ghost-unet": "ghost", "gpu-net": "gp"}


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "ordinary"
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    in_channels: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown block kind {self.kind!r}, expected one of {KINDS}")
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) != 5:
            raise SpecError(f"width ladder needs 5 entries (4 levels + bottleneck), got {len(widths)}")
        if any(w < 1 for w in widths) or any(a >= b for a, b in zip(widths, widths[1:])):
            raise SpecError(f"width ladder must be strictly increasing positive, got {widths}")
        if self.in_channels not in (1, 3):
            raise SpecError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.out_channels != 1:
            raise SpecError(f"out_channels must be 1, got {self.out_channels}")

    def module_spec(self, cin: int, cout: int) -> GhostSpec:
        if self.kind == "ghost":
            return GhostSpec(cin, cout, ratio=2, kernel=1, bank=ghost_bank(2))
        if self.kind == "gp":
            return GhostSpec(cin, cout, ratio=6, kernel=1, bank=GP_BANK)
        raise SpecError(f"no ghost/gp module spec for kind {self.kind!r}")


def _make_block(cfg: ModelConfig, cin: int, cout: int) -> Module:
    if cfg.kind == "ordinary":
        return DoubleConv(cin, cout)
    return Bottleneck(
        BneckSpec(cin, cout, cfg.module_spec(cin, cout), cfg.module_spec(cout, cout))
    )


class UNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        self.enc1 = _make_block(cfg, cfg.in_channels, w[0])
        self.pool1 = MaxPool2d()
        self.enc2 = _make_block(cfg, w[0], w[1])
        self.pool2 = MaxPool2d()
        self.enc3 = _make_block(cfg, w[1], w[2])
        self.pool3 = MaxPool2d()
        self.enc4 = _make_block(cfg, w[2], w[3])
        self.pool4 = MaxPool2d()
        self.bottleneck = _make_block(cfg, w[3], w[4])
        self.up4 = ConvTranspose2d(TConvSpec(w[4], w[3], 3, stride=2, padding=1, output_padding=1))
        self.dec4 = _make_block(cfg, 2 * w[3], w[3])
        self.up3 = ConvTranspose2d(TConvSpec(w[3], w[2], 3, stride=2, padding=1, output_padding=1))
        self.dec3 = _make_block(cfg, 2 * w[2], w[2])
        self.up2 = ConvTranspose2d(TConvSpec(w[2], w[1], 3, stride=2, padding=1, output_padding=1))
        self.dec2 = _make_block(cfg, 2 * w[1], w[1])
        self.up1 = ConvTranspose2d(TConvSpec(w[1], w[0], 3, stride=2, padding=1, output_padding=1))
        self.dec1 = _make_block(cfg, 2 * w[0], w[0])
        self.head = Conv2d(ConvSpec(w[0], cfg.out_channels, kernel=1))
        self.out_act = Sigmoid()

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"model expects (b, {self.cfg.in_channels}, h, w) input, got {tuple(x.shape)}"
            )
        h, w = x.shape[2], x.shape[3]
        if h % 16 or w % 16:
            raise ShapeError(
                f"spatial dims must be divisible by 16 (four pooling levels), got {h}x{w}"
            )

    def forward(self, x, train: bool = False, record: dict | None = None):
        self._check_input(x)
        e1 = self.enc1(x, train)
        e2 = self.enc2(self.pool1(e1, train), train)
        e3 = self.enc3(self.pool2(e2, train), train)
        e4 = self.enc4(self.pool3(e3, train), train)
        b = self.bottleneck(self.pool4(e4, train), train)
        d4 = self.dec4(ops.concat_channels_forward(e4, self.up4(b, train)), train)
        d3 = self.dec3(ops.concat_channels_forward(e3, self.up3(d4, train)), train)
        d2 = self.dec2(ops.concat_channels_forward(e2, self.up2(d3, train)), train)
        d1 = self.dec1(ops.concat_channels_forward(e1, self.up1(d2, train)), train)
        prob = self.out_act(self.head(d1, train), train)
        if record is not None:
            record.update(
                enc1=e1, enc2=e2, enc3=e3, enc4=e4, bottleneck=b,
                dec4=d4, dec3=d3, dec2=d2, dec1=d1, prob=prob,
            )
        return prob

    def backward(self, grad):
        w = self.cfg.widths
        d = self.head.backward(self.out_act.backward(grad))
        ds1, du = ops.concat_channels_backward(self.dec1.backward(d), w[0])
        d = self.up1.backward(du)
        ds2, du = ops.concat_channels_backward(self.dec2.backward(d), w[1])
        d = self.up2.backward(du)
        ds3, du = ops.concat_channels_backward(self.dec3.backward(d), w[2])
        d = self.up3.backward(du)
        ds4, du = ops.concat_channels_backward(self.dec4.backward(d), w[3])
        d = self.bottleneck.backward(self.up4.backward(du))
        d = self.enc4.backward(self.pool4.backward(d) + ds4)
        d = self.enc3.backward(self.pool3.backward(d) + ds3)
        d = self.enc2.backward(self.pool2.backward(d) + ds2)
        return self.enc1.backward(self.pool1.backward(d) + ds1)

    def feature_maps(self, x, level: str = "first") -> list[np.ndarray]:
        """Post-activation channel maps of the first (enc1) or last (dec1) block."""
        if level not in ("first", "last"):
            raise SpecError(f"feature level must be 'first' or 'last', got {level!r}")
        record: dict = {}
        self.forward(x, train=False, record=record)
        fm = record["enc1" if level == "first" else "dec1"]
        return [np.ascontiguousarray(fm[:, i : i + 1]) for i in range(fm.shape[1])]

    def cost_nodes(self, h: int, w: int):
        """Yield CostNodes for every layer at the spatial size it runs at."""
        if h % 16 or w % 16:
            raise ShapeError(f"spatial dims must be divisible by 16, got {h}x{w}")
        sizes = [(h >> i, w >> i) for i in range(5)]
        yield from _block_nodes("enc1", self.enc1, *sizes[0])
        yield from _block_nodes("enc2", self.enc2, *sizes[1])
        yield from _block_nodes("enc3", self.enc3, *sizes[2])
        yield from _block_nodes("enc4", self.enc4, *sizes[3])
        yield from _block_nodes("bottleneck", self.bottleneck, *sizes[4])
        for lvl, (hh, ww) in zip((4, 3, 2, 1), (sizes[3], sizes[2], sizes[1], sizes[0])):
            up = getattr(self, f"up{lvl}")
            yield CostNode(f"up{lvl}", "tconv", up.spec, hh, ww)
            yield from _block_nodes(f"dec{lvl}", getattr(self, f"dec{lvl}"), hh, ww)
        yield CostNode("head", "conv", self.head.spec, h, w)


def _block_nodes(path: str, block: Module, h: int, w: int):
    if isinstance(block, DoubleConv):
        yield CostNode(f"{path}.conv1", "conv", block.conv1.spec, h, w)
        yield CostNode(f"{path}.bn1", "bn", block.bn1.channels, h, w)
        yield CostNode(f"{path}.conv2", "conv", block.conv2.spec, h, w)
        yield CostNode(f"{path}.bn2", "bn", block.bn2.channels, h, w)
    elif isinstance(block, Bottleneck):
        yield CostNode(f"{path}.m1", "ghost", block.m1.spec, h, w)
        yield CostNode(f"{path}.bn1", "bn", block.bn1.channels, h, w)
        yield CostNode(f"{path}.m2", "ghost", block.m2.spec, h, w)
        yield CostNode(f"{path}.bn2", "bn", block.bn2.channels, h, w)
        if block.sc_conv is not None:
            yield CostNode(f"{path}.sc_conv", "conv", block.sc_conv.spec, h, w)
            yield CostNode(f"{path}.sc_bn", "bn", block.sc_bn.channels, h, w)
    else:
        raise SpecError(f"unknown block type {type(block).__name__}")


def build_model(cfg: ModelConfig, seed: int = 0) -> UNet:
    """Construct and initialize a model; (cfg, seed) pins every weight."""
    return init_module(UNet(cfg), seed)


def config_for(name: str, widths=None, in_channels: int = 3) -> ModelConfig:
    """ModelConfig for a CLI preset name (unet | ghost-unet | gpu-net)."""
    if name not in MODEL_NAMES:
        raise SpecError(f"unknown model {name!r}, expected one of {sorted(MODEL_NAMES)}")
    return ModelConfig(
        kind=MODEL_NAMES[name],
        widths=tuple(widths) if widths else DEFAULT_WIDTHS,
        in_channels=in_channels,
    )
