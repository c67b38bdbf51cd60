"""
ResNet3D, ResNet(2+1)D and ResNet Mixed Convolution, 18-layer configuration.

Every architecture is a stem, four stages of two residual blocks with widths
64, 128, 256, 512 (stages 2-4 downsample), and a head of adaptive average
pooling, dropout and a fully connected layer.
"""
import enum
import logging

import numpy as np

from spatiospatial.config import ModelConfig
from spatiospatial.layers.blocks import (
    BlockSpec,
    ConvMode,
    StemKind,
    StemSpec,
    block_parameter_count,
    build_block,
    build_stem,
    stem_parameter_count,
)
from spatiospatial.layers.modules import AdaptiveAvgPoolUnit, Dropout, Linear, Module, Sequential
from spatiospatial.layers.modules import count_parameters as _count
from spatiospatial.tensor import ops
from spatiospatial.tensor.core import DEFAULT_DTYPE
from spatiospatial.utils.errors import ConfigError, InvalidGeometryError, ShapeError
from spatiospatial.utils.seeding import child_rng, make_rng

logger = logging.getLogger(__name__)


class ArchitectureKind(str, enum.Enum):
    RESNET_3D = "resnet3d"
    RESNET_2PLUS1D = "resnet2plus1d"
    RESNET_MIXED_CONV = "mixedconv"


STAGE_WIDTHS = (64, 128, 256, 512)
BLOCKS_PER_STAGE = 2
# smallest (D, H, W) that survives the stem and three downsampling stages
MIN_INPUT_EXTENTS = (8, 16, 16)

# Trainable parameter counts reported for in_channels=1, num_classes=3.
PUBLISHED_PARAMETER_COUNTS = {
    ArchitectureKind.RESNET_3D: 33_150_522,
    ArchitectureKind.RESNET_2PLUS1D: 31_297_254,
    ArchitectureKind.RESNET_MIXED_CONV: 11_472_963,
}

ALIASES = {
    "resnet3d": ArchitectureKind.RESNET_3D,
    "r3d": ArchitectureKind.RESNET_3D,
    "resnet2plus1d": ArchitectureKind.RESNET_2PLUS1D,
    "resnet(2+1)d": ArchitectureKind.RESNET_2PLUS1D,
    "r2plus1d": ArchitectureKind.RESNET_2PLUS1D,
    "mixedconv": ArchitectureKind.RESNET_MIXED_CONV,
    "resnetmixedconv": ArchitectureKind.RESNET_MIXED_CONV,
    "mc3": ArchitectureKind.RESNET_MIXED_CONV,
}


def parse_architecture(name):
    """
    Resolve an architecture name or alias.
    Raises:
        ConfigError: listing the valid names.
    """
    if isinstance(name, ArchitectureKind):
        return name
    key = str(name).strip().lower()
    if key not in ALIASES:
        valid = ", ".join(k.value for k in ArchitectureKind)
        raise ConfigError(f"unknown architecture {name!r}; valid names: {valid}")
    return ALIASES[key]


def stage_modes(kind):
    kind = parse_architecture(kind)
    if kind == ArchitectureKind.RESNET_3D:
        return (ConvMode.FULL_3D,) * 4
    if kind == ArchitectureKind.RESNET_2PLUS1D:
        return (ConvMode.FACTORED_2PLUS1D,) * 4
    return (ConvMode.FULL_3D,) + (ConvMode.IN_PLANE_2D,) * 3


def stem_kind(kind):
    if parse_architecture(kind) == ArchitectureKind.RESNET_2PLUS1D:
        return StemKind.STEM_2PLUS1D
    return StemKind.STEM_3D


def stage_specs(kind):
    """BlockSpecs per stage: ((spec, spec), ...) for the four stages."""
    specs = []
    in_ch = STAGE_WIDTHS[0]
    for index, (mode, width) in enumerate(zip(stage_modes(kind), STAGE_WIDTHS)):
        first = BlockSpec(mode, in_ch, width, downsample=index > 0)
        specs.append((first,) + (BlockSpec(mode, width, width),) * (BLOCKS_PER_STAGE - 1))
        in_ch = width
    return tuple(specs)


class Model(Module):
    """
    Named layout: ``stem``, ``stage1`` .. ``stage4`` (each ``block1``,
    ``block2``), ``pool``, ``dropout``, ``fc``.
    """

    def __init__(self, kind, config, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.kind = parse_architecture(kind)
        self.config = config
        self.stem = build_stem(StemSpec(stem_kind(self.kind), config.in_channels), rng, dtype)
        for index, specs in enumerate(stage_specs(self.kind), start=1):
            blocks = {f"block{j}": build_block(spec, rng, dtype) for j, spec in enumerate(specs, start=1)}
            setattr(self, f"stage{index}", Sequential(**blocks))
        self.pool = AdaptiveAvgPoolUnit()
        self.dropout = Dropout(config.dropout_p, rng=child_rng(rng))
        self.fc = Linear(STAGE_WIDTHS[-1], config.num_classes, rng=rng, dtype=dtype)

    def check_input(self, x):
        if x.ndim != 5:
            raise ShapeError(f"model input must be (N, C, D, H, W), got {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"model expects {self.config.in_channels} input channels, got {x.shape[1]}")
        spatial = x.shape[2:]
        if any(n < m for n, m in zip(spatial, MIN_INPUT_EXTENTS)):
            raise InvalidGeometryError(
                f"input extents {tuple(spatial)} too small for {self.kind.value}; "
                f"need at least {MIN_INPUT_EXTENTS} (D, H, W) to survive downsampling")

    def features(self, x):
        self.check_input(x)
        x = self.stem(x)
        for index in range(1, len(STAGE_WIDTHS) + 1):
            x = getattr(self, f"stage{index}")(x)
        return ops.flatten(self.pool(x))

    def forward(self, x):
        return self.fc(self.dropout(self.features(x)))

    def parameter_breakdown(self):
        """Trainable parameter count per top-level module (stem, stages, fc)."""
        return {name: _count(child) for name, child in self.named_children() if _count(child) > 0}


def build_model(kind, config=None, rng=0, dtype=DEFAULT_DTYPE):
    """
    Assemble one of the three architectures.
    Args:
        kind (ArchitectureKind or str): Architecture.
        config (ModelConfig): Classes, input channels, dropout; defaults apply
            when omitted.
        rng (int or np.random.Generator): Initialisation seed/source.
        dtype: float32 (training default) or float64.
    Returns:
        Model
    """
    config = config if config is not None else ModelConfig()
    model = Model(kind, config, make_rng(rng), np.dtype(dtype))
    logger.debug("built %s with %d parameters", model.kind.value, count_parameters(model))
    return model


def count_parameters(model):
    """Sum of element counts over all trainable parameters."""
    return _count(model)


def closed_form_parameter_count(kind, config=None):
    """Parameter count from the architecture definition alone, without building it."""
    return sum(closed_form_breakdown(kind, config).values())


def closed_form_breakdown(kind, config=None):
    """Per-module counts matching ``Model.parameter_breakdown`` without building."""
    config = config if config is not None else ModelConfig()
    breakdown = {"stem": stem_parameter_count(StemSpec(stem_kind(kind), config.in_channels))}
    for index, specs in enumerate(stage_specs(kind), start=1):
        breakdown[f"stage{index}"] = sum(block_parameter_count(spec) for spec in specs)
    breakdown["fc"] = STAGE_WIDTHS[-1] * config.num_classes + config.num_classes
    return breakdown
