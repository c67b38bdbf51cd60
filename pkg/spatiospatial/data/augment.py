"""
On-the-fly training augmentation: random affine (isotropic scale plus three
rotations about the volume centre) followed by a random left-right flip.

Each applied transform is appended to ``Volume.transforms`` so a draw can be
audited and replayed with :func:`apply_affine`.
"""
import logging

import numpy as np
import scipy.ndimage as nd

from spatiospatial.utils.errors import ParameterError
from spatiospatial.utils.grid import volume_center

logger = logging.getLogger(__name__)

LR_AXIS = 2


def rotation_matrix(angles_deg):
    """
    Rz . Ry . Rx for rotations about the D, H and W index axes.
    Args:
        angles_deg (tuple): (about D, about H, about W) in degrees.
    Returns:
        np.ndarray: 3x3 rotation acting on (d, h, w) coordinates.
    """
    az, ay, ax = np.deg2rad(angles_deg)
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    # about D: mixes (h, w); about H: mixes (d, w); about W: mixes (d, h)
    rz = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]])
    return rz @ ry @ rx


def apply_affine(volume, scale, angles_deg):
    """
    Resample ``volume`` under x -> c + R s (x - c), trilinear, zero fill.
    A scale above one magnifies the content.
    """
    forward = rotation_matrix(angles_deg) * float(scale)
    inverse = np.linalg.inv(forward)
    center = volume_center(volume.extents)
    offset = center - inverse @ center
    data = nd.affine_transform(volume.data.astype(np.float64), inverse, offset=offset,
                               order=1, mode="constant", cval=0.0)
    record = ("affine", float(scale), tuple(float(a) for a in angles_deg))
    return volume.with_data(data.astype(np.float32), transform=record)


def random_affine(volume, config, rng):
    """
    Draw one scale from ``config.scale_range`` and three angles from
    [-max_rotation_deg, max_rotation_deg], then apply them.
    Args:
        volume (Volume): Input; extents are preserved.
        config (AugmentConfig): Ranges.
        rng (np.random.Generator): Draw source.
    Returns:
        Volume
    """
    lo, hi = config.scale_range
    scale = rng.uniform(lo, hi) if hi > lo else lo
    bound = config.max_rotation_deg
    angles = rng.uniform(-bound, bound, size=3) if bound > 0 else np.zeros(3)
    return apply_affine(volume, scale, tuple(angles))


def flip_lr(volume):
    return volume.with_data(np.flip(volume.data, axis=LR_AXIS).copy(), transform=("flip_lr",))


def random_flip_lr(volume, p, rng):
    """
    Reverse the left-right (W) axis with probability ``p``.
    Raises:
        ParameterError: p outside [0, 1].
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"flip probability must lie in [0, 1], got {p}")
    if rng.random() < p:
        return flip_lr(volume)
    return volume


def augment(volume, config, rng):
    """Affine first, then flip; identity when augmentation is disabled."""
    if not config.enabled:
        return volume
    volume = random_affine(volume, config, rng)
    return random_flip_lr(volume, config.flip_probability, rng)
