"""Analytic parameter and FLOP accounting.

Conventions, chosen once and used everywhere:

* FLOP = MAC (one multiply-accumulate), so a convolution costs
  in_per_group * k^2 * out_channels * out_h * out_w and nothing else. Biases,
  batchnorm, activations, pooling and concatenation cost zero FLOPs.
* Transposed convolutions are billed on their *output* grid,
  c * k^2 * n * out_h * out_w — the same per-output-pixel convention as
  ordinary convolutions, applied to the upsampled size.
* Parameter counts include biases where layers carry them and the two affine
  scalars per batchnorm channel. Ghost/GP modules are bias-free throughout.
* Ghost/GP counting has an exact mode (sums each cheap op's actual kernel)
  and a uniform mode (every cheap kernel treated as d x d, the closed-form
  approximation); exact is the default.
"""

from dataclasses import dataclass
from fractions import Fraction

from .specs import ConvSpec, GhostSpec, TConvSpec


@dataclass(frozen=True)
class CostNode:
    """One layer occurrence: kind is conv | tconv | ghost | bn, spec is the
    layer spec (channel count for bn), out_h/out_w the grid it produces."""

    path: str
    kind: str
    spec: object
    out_h: int
    out_w: int


def params_conv(spec: ConvSpec) -> int:
    n = spec.out_channels
    count = (spec.in_channels // spec.groups) * spec.kernel * spec.kernel * n
    return count + (n if spec.bias else 0)


def flops_conv(spec: ConvSpec, out_h: int, out_w: int) -> int:
    n = spec.out_channels
    return (spec.in_channels // spec.groups) * spec.kernel * spec.kernel * n * out_h * out_w


def params_tconv(spec: TConvSpec) -> int:
    count = spec.in_channels * spec.kernel * spec.kernel * spec.out_channels
    return count + (spec.out_channels if spec.bias else 0)


def flops_tconv(spec: TConvSpec, out_h: int, out_w: int) -> int:
    return spec.in_channels * spec.kernel * spec.kernel * spec.out_channels * out_h * out_w


def _uniform_cheap_kernel(spec: GhostSpec) -> int:
    return spec.bank[0][0] if spec.bank else 1


def params_gp(spec: GhostSpec, mode: str = "exact") -> int:
    """Ghost/GP module parameters (primary kernel + cheap kernels, no bias)."""
    m = spec.intrinsic_channels
    primary = spec.in_channels * spec.kernel * spec.kernel * m
    if mode == "exact":
        cheap = m * sum(d * d for d, _ in spec.bank)
    elif mode == "uniform":
        d = _uniform_cheap_kernel(spec)
        cheap = (spec.ratio - 1) * d * d * m
    else:
        raise ValueError(f"unknown cost mode {mode!r}")
    return primary + cheap


def flops_gp(spec: GhostSpec, out_h: int, out_w: int, mode: str = "exact") -> int:
    area = out_h * out_w
    m = spec.intrinsic_channels
    primary = spec.in_channels * spec.kernel * spec.kernel * m * area
    if mode == "exact":
        cheap = m * sum(d * d for d, _ in spec.bank) * area
    elif mode == "uniform":
        d = _uniform_cheap_kernel(spec)
        cheap = (spec.ratio - 1) * d * d * m * area
    else:
        raise ValueError(f"unknown cost mode {mode!r}")
    return primary + cheap


def ratio_params(c: int, k: int, d: int, s: int) -> Fraction:
    """Parameter compression ratio of a ghost module vs an ordinary conv.

    Exact rational value of (c*s*k^2) / (c*k^2 + (s-1)*d^2): the ordinary and
    ghost parameter counts at n = m*s with the bias-free convention, m
    cancelling. Approaches s as c grows.
    """
    ordinary = c * k * k * s  # n = s, m = 1
    ghost = c * k * k + (s - 1) * d * d
    return Fraction(ordinary, ghost)


def ratio_flops(c: int, k: int, d: int, s: int) -> Fraction:
    """FLOP acceleration ratio; the output grid cancels, equalling ratio_params."""
    area = 7 * 13  # arbitrary fixed grid, cancels in the Fraction
    ordinary = c * k * k * s * area
    ghost = (c * k * k + (s - 1) * d * d) * area
    return Fraction(ordinary, ghost)


def node_params(node: CostNode) -> int:
    if node.kind == "conv":
        return params_conv(node.spec)
    if node.kind == "tconv":
        return params_tconv(node.spec)
    if node.kind == "ghost":
        return params_gp(node.spec)
    if node.kind == "bn":
        return 2 * node.spec
    raise ValueError(f"unknown cost node kind {node.kind!r}")


def node_flops(node: CostNode) -> int:
    if node.kind == "conv":
        return flops_conv(node.spec, node.out_h, node.out_w)
    if node.kind == "tconv":
        return flops_tconv(node.spec, node.out_h, node.out_w)
    if node.kind == "ghost":
        return flops_gp(node.spec, node.out_h, node.out_w)
    if node.kind == "bn":
        return 0
    raise ValueError(f"unknown cost node kind {node.kind!r}")


@dataclass(frozen=True)
class CostRow:
    name: str
    params: int
    flops: int


@dataclass(frozen=True)
class CostReport:
    rows: tuple[CostRow, ...]
    input_h: int
    input_w: int

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def compare(self, other: "CostReport") -> dict[str, Fraction]:
        """Ratios of this report's totals over the other's, exact."""
        return {
            "params": Fraction(self.total_params, other.total_params),
            "flops": Fraction(self.total_flops, other.total_flops),
        }

    def as_dict(self) -> dict:
        return {
            "input": [self.input_h, self.input_w],
            "rows": [{"name": r.name, "params": r.params, "flops": r.flops} for r in self.rows],
            "total_params": self.total_params,
            "total_flops": self.total_flops,
        }

    def table(self) -> str:
        width = max(len(r.name) for r in self.rows) if self.rows else 4
        width = max(width, len("total"))
        lines = [f"{'name':<{width}}  {'params':>12}  {'flops':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>12}  {r.flops:>16}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12}  {self.total_flops:>16}")
        lines.append(
            f"totals: {self.total_params / 1e6:.2f} M params, "
            f"{self.total_flops / 1e9:.2f} G FLOPs at {self.input_h}x{self.input_w}"
        )
        return "\n".join(lines)


def model_cost(model, input_h: int, input_w: int) -> CostReport:
    """Walk a model's cost nodes and total them for the given input size."""
    rows = tuple(
        CostRow(n.path, node_params(n), node_flops(n)) for n in model.cost_nodes(input_h, input_w)
    )
    return CostReport(rows, input_h, input_w)
