"""
Residual blocks, stems and downsampling shortcuts for the three
architectures.

2D and 1D convolutions are degenerate 3D convolutions: in-plane kernels are
(1, k, k) and slice kernels (k, 1, 1), so every layer works on volumes of
shape (N, C, D, H, W) where D is the slice axis.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

from spatiospatial.layers.modules import BatchNorm3d, Conv3d, Module, ReLU, Sequential
from spatiospatial.tensor import ops
from spatiospatial.tensor.core import DEFAULT_DTYPE
from spatiospatial.utils.errors import ContractError

logger = logging.getLogger(__name__)


class ConvMode(str, enum.Enum):
    FULL_3D = "full3d"
    IN_PLANE_2D = "inplane2d"
    SLICE_WISE_1D = "slicewise1d"
    FACTORED_2PLUS1D = "factored2plus1d"


class StemKind(str, enum.Enum):
    STEM_3D = "stem3d"
    STEM_2PLUS1D = "stem2plus1d"


@dataclass(frozen=True)
class BlockSpec:
    mode: ConvMode
    in_channels: int
    out_channels: int
    downsample: bool = False


@dataclass(frozen=True)
class StemSpec:
    kind: StemKind
    in_channels: int = 1


STEM_WIDTH = 64
STEM_2PLUS1D_HIDDEN = 45
BLOCK_MODES = (ConvMode.FULL_3D, ConvMode.IN_PLANE_2D, ConvMode.FACTORED_2PLUS1D)


def midplanes(in_channels, out_channels):
    """
    Hidden width of a factored convolution, chosen so the (1,3,3) + (3,1,1)
    pair costs no more parameters than one (3,3,3) convolution.
    Returns:
        int: floor(in*out*27 / (in*9 + 3*out)).
    """
    if in_channels < 1 or out_channels < 1:
        raise ContractError(f"channel counts must be positive, got {in_channels}, {out_channels}")
    return (in_channels * out_channels * 3 * 3 * 3) // (in_channels * 3 * 3 + 3 * out_channels)


def downsample_stride(mode):
    """Stride of a downsampling block's first convolution and shortcut."""
    if mode == ConvMode.IN_PLANE_2D:
        return (1, 2, 2)
    if mode == ConvMode.SLICE_WISE_1D:
        return (2, 1, 1)
    return (2, 2, 2)


def build_conv(mode, in_channels, out_channels, stride=(1, 1, 1), hidden=None, rng=None, dtype=DEFAULT_DTYPE):
    """
    One "convolution" of a residual block in the given mode, kernel size 3.
    Padding always matches the kernel, so stride-1 convolutions keep extents.
    Args:
        mode (ConvMode): Convolution flavour.
        in_channels, out_channels (int): Channel counts.
        stride (tuple): (sd, sh, sw).
        hidden (int): Hidden width for Factored2Plus1D.
    Returns:
        Module
    """
    sd, sh, sw = stride
    if mode == ConvMode.FULL_3D:
        return Conv3d(in_channels, out_channels, (3, 3, 3), stride, (1, 1, 1), rng=rng, dtype=dtype)
    if mode == ConvMode.IN_PLANE_2D:
        return Conv3d(in_channels, out_channels, (1, 3, 3), (1, sh, sw), (0, 1, 1), rng=rng, dtype=dtype)
    if mode == ConvMode.SLICE_WISE_1D:
        return Conv3d(in_channels, out_channels, (3, 1, 1), (sd, 1, 1), (1, 0, 0), rng=rng, dtype=dtype)
    if mode == ConvMode.FACTORED_2PLUS1D:
        if hidden is None:
            hidden = midplanes(in_channels, out_channels)
        return Sequential(
            inplane=build_conv(ConvMode.IN_PLANE_2D, in_channels, hidden, (1, sh, sw), rng=rng, dtype=dtype),
            bn=BatchNorm3d(hidden, dtype=dtype),
            relu=ReLU(),
            slice=build_conv(ConvMode.SLICE_WISE_1D, hidden, out_channels, (sd, 1, 1), rng=rng, dtype=dtype),
        )
    raise ContractError(f"unknown convolution mode {mode!r}")


def build_downsample_shortcut(in_channels, out_channels, stride, rng=None, dtype=DEFAULT_DTYPE):
    """
    1x1x1 strided convolution followed by batch norm.
    Args:
        stride (int or tuple): 1 or 2 per axis.
    """
    stride = stride if isinstance(stride, tuple) else (int(stride),) * 3
    if any(s not in (1, 2) for s in stride):
        raise ContractError(f"shortcut stride must be 1 or 2 per axis, got {stride}")
    return Sequential(
        conv=Conv3d(in_channels, out_channels, (1, 1, 1), stride, 0, rng=rng, dtype=dtype),
        bn=BatchNorm3d(out_channels, dtype=dtype),
    )


class ResidualBlock(Module):
    """
    conv -> BN -> ReLU -> conv -> BN, plus the shortcut, then ReLU.
    The shortcut is a projection when downsampling or changing width.
    """

    def __init__(self, spec, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        stride = downsample_stride(spec.mode) if spec.downsample else (1, 1, 1)
        # one hidden width per block, shared by both factored convolutions
        hidden = midplanes(spec.in_channels, spec.out_channels) \
            if spec.mode == ConvMode.FACTORED_2PLUS1D else None
        self.conv1 = build_conv(spec.mode, spec.in_channels, spec.out_channels, stride, hidden, rng, dtype)
        self.bn1 = BatchNorm3d(spec.out_channels, dtype=dtype)
        self.conv2 = build_conv(spec.mode, spec.out_channels, spec.out_channels, (1, 1, 1), hidden, rng, dtype)
        self.bn2 = BatchNorm3d(spec.out_channels, dtype=dtype)
        self.downsample = None
        if spec.downsample or spec.in_channels != spec.out_channels:
            self.downsample = build_downsample_shortcut(spec.in_channels, spec.out_channels, stride, rng, dtype)

    def forward(self, x):
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.downsample is None else self.downsample(x)
        return ops.relu(ops.add(out, identity))


def build_block(spec, rng=None, dtype=DEFAULT_DTYPE):
    """
    Residual block for a BlockSpec.
    Raises:
        ContractError: on an invalid spec.
    """
    if not isinstance(spec, BlockSpec):
        raise ContractError(f"expected a BlockSpec, got {type(spec).__name__}")
    try:
        mode = ConvMode(spec.mode)
    except ValueError as exc:
        raise ContractError(f"unknown convolution mode {spec.mode!r}") from exc
    if mode not in BLOCK_MODES:
        raise ContractError(f"{mode.value} is only usable as a factor, not as a residual block mode")
    if spec.in_channels < 1 or spec.out_channels < 1:
        raise ContractError(f"channel counts must be positive, got {spec.in_channels}->{spec.out_channels}")
    return ResidualBlock(BlockSpec(mode, spec.in_channels, spec.out_channels, spec.downsample), rng, dtype)


def build_stem(spec, rng=None, dtype=DEFAULT_DTYPE):
    """
    Stem3D: conv (3,7,7) stride (1,2,2) padding (1,3,3) -> 64, BN, ReLU.
    Stem2Plus1D: conv (1,7,7) stride (1,2,2) padding (0,3,3) -> 45, BN, ReLU,
    then conv (3,1,1) padding (1,0,0) -> 64, BN, ReLU.
    """
    kind = StemKind(spec.kind)
    if spec.in_channels < 1:
        raise ContractError(f"stem needs at least one input channel, got {spec.in_channels}")
    if kind == StemKind.STEM_3D:
        return Sequential(
            conv=Conv3d(spec.in_channels, STEM_WIDTH, (3, 7, 7), (1, 2, 2), (1, 3, 3), rng=rng, dtype=dtype),
            bn=BatchNorm3d(STEM_WIDTH, dtype=dtype),
            relu=ReLU(),
        )
    return Sequential(
        conv1=Conv3d(spec.in_channels, STEM_2PLUS1D_HIDDEN, (1, 7, 7), (1, 2, 2), (0, 3, 3), rng=rng, dtype=dtype),
        bn1=BatchNorm3d(STEM_2PLUS1D_HIDDEN, dtype=dtype),
        relu1=ReLU(),
        conv2=Conv3d(STEM_2PLUS1D_HIDDEN, STEM_WIDTH, (3, 1, 1), (1, 1, 1), (1, 0, 0), rng=rng, dtype=dtype),
        bn2=BatchNorm3d(STEM_WIDTH, dtype=dtype),
        relu2=ReLU(),
    )


# closed-form parameter counts -------------------------------------------------

def _conv_count(cin, cout, kernel):
    return cin * cout * int(np.prod(kernel))


def conv_parameter_count(mode, in_channels, out_channels, hidden=None):
    if mode == ConvMode.FULL_3D:
        return _conv_count(in_channels, out_channels, (3, 3, 3))
    if mode == ConvMode.IN_PLANE_2D:
        return _conv_count(in_channels, out_channels, (1, 3, 3))
    if mode == ConvMode.SLICE_WISE_1D:
        return _conv_count(in_channels, out_channels, (3, 1, 1))
    hidden = midplanes(in_channels, out_channels) if hidden is None else hidden
    return in_channels * hidden * 9 + 2 * hidden + hidden * out_channels * 3


def block_parameter_count(spec):
    """Closed-form parameter count of a residual block (conv weights + BN affine)."""
    mode = ConvMode(spec.mode)
    cin, cout = spec.in_channels, spec.out_channels
    hidden = midplanes(cin, cout) if mode == ConvMode.FACTORED_2PLUS1D else None
    total = conv_parameter_count(mode, cin, cout, hidden) + 2 * cout
    total += conv_parameter_count(mode, cout, cout, hidden) + 2 * cout
    if spec.downsample or cin != cout:
        total += cin * cout + 2 * cout
    return total


def stem_parameter_count(spec):
    kind = StemKind(spec.kind)
    if kind == StemKind.STEM_3D:
        return spec.in_channels * STEM_WIDTH * 3 * 7 * 7 + 2 * STEM_WIDTH
    hidden = STEM_2PLUS1D_HIDDEN
    return spec.in_channels * hidden * 49 + 2 * hidden + hidden * STEM_WIDTH * 3 + 2 * STEM_WIDTH
