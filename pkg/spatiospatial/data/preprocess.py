"""
Intensity normalisation and isotropic resampling.
"""
import logging
import math

import numpy as np
import scipy.ndimage as nd

from spatiospatial.utils.errors import ContractError, DegenerateIntensityError, InvalidGeometryError
from spatiospatial.utils.grid import resample_coordinates_1d
from spatiospatial.utils.numerics import clip_rescale

logger = logging.getLogger(__name__)

DEFAULT_LOW_PERCENTILE = 0.5
DEFAULT_HIGH_PERCENTILE = 99.5
DEFAULT_TARGET_SPACING = 2.0


def percentile_normalize(volume, lo=DEFAULT_LOW_PERCENTILE, hi=DEFAULT_HIGH_PERCENTILE):
    """
    Clip to the [lo, hi] percentiles, then map that interval onto [0, 1].
    Args:
        volume (Volume): Input.
        lo, hi (float): Percentiles in [0, 100], lo < hi.
    Returns:
        Volume
    Raises:
        DegenerateIntensityError: if the two percentiles coincide.
    """
    if not 0.0 <= lo < hi <= 100.0:
        raise ContractError(f"percentiles must satisfy 0 <= lo < hi <= 100, got {lo}, {hi}")
    p_lo, p_hi = volume.percentiles(lo, hi)
    if p_hi <= p_lo:
        raise DegenerateIntensityError(
            f"intensity percentiles coincide (p{lo} = p{hi} = {p_lo}); volume is constant")
    data = clip_rescale(volume.data.astype(np.float64), p_lo, p_hi).astype(np.float32)
    return volume.with_data(data)


def resampled_extent(extent, spacing, target):
    """round(extent * spacing / target), half-up."""
    new = int(math.floor(extent * spacing / target + 0.5))
    if new < 1:
        raise InvalidGeometryError(
            f"resampling extent {extent} at {spacing} mm to {target} mm leaves {new} voxels")
    return new


def resample_isotropic(volume, target_spacing=DEFAULT_TARGET_SPACING):
    """
    Trilinear resampling onto an isotropic grid with centre-aligned fields of view.
    Args:
        volume (Volume): Input with spacing metadata.
        target_spacing (float): Output voxel size in mm.
    Returns:
        Volume: New extents, spacing ``target_spacing`` on every axis.
    Raises:
        InvalidGeometryError: if an output extent would be below one.
    """
    if target_spacing <= 0:
        raise ContractError(f"target spacing must be positive, got {target_spacing}")
    new_extents = tuple(resampled_extent(n, s, target_spacing)
                        for n, s in zip(volume.extents, volume.spacing))
    axes = [resample_coordinates_1d(n, s, m, target_spacing)
            for n, s, m in zip(volume.extents, volume.spacing, new_extents)]
    coords = np.meshgrid(*axes, indexing="ij")
    data = nd.map_coordinates(volume.data.astype(np.float64), coords, order=1, mode="nearest")
    logger.debug("resampled %s @ %s mm -> %s @ %s mm", volume.extents, volume.spacing,
                 new_extents, target_spacing)
    return volume.with_data(data.astype(np.float32), spacing=(float(target_spacing),) * 3)


def preprocess_volume(volume, lo=DEFAULT_LOW_PERCENTILE, hi=DEFAULT_HIGH_PERCENTILE,
                      target_spacing=DEFAULT_TARGET_SPACING):
    """Percentile normalisation followed by isotropic resampling."""
    return resample_isotropic(percentile_normalize(volume, lo, hi), target_spacing)
