from dataclasses import dataclass, field, replace

import numpy as np

from spatiospatial.utils.errors import ContractError


@dataclass(frozen=True)
class Volume:
    """
    Scalar volume of shape (D, H, W), D the slice axis, W left-right.
    Args:
        data (np.ndarray): float32 voxels, row-major.
        spacing (tuple): Voxel size in mm per axis (sd, sh, sw), all positive.
        transforms (tuple): Augmentation records applied to produce this volume.
    """
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    transforms: tuple = ()
    _stats: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ContractError(f"volume data must be 3D (D, H, W), got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0 or not np.all(np.isfinite(spacing)):
            raise ContractError(f"voxel spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "transforms", tuple(self.transforms))

    @property
    def extents(self):
        return self.data.shape

    def percentiles(self, lo, hi):
        """Cached (p_lo, p_hi) with linear interpolation between order statistics."""
        key = (float(lo), float(hi))
        if key not in self._stats:
            p_lo, p_hi = np.percentile(self.data, [lo, hi], method="linear")
            self._stats[key] = (float(p_lo), float(p_hi))
        return self._stats[key]

    def with_data(self, data, spacing=None, transform=None):
        """New volume sharing metadata; ``transform`` is appended to the record."""
        transforms = self.transforms + ((transform,) if transform is not None else ())
        return replace(self, data=data, spacing=spacing if spacing is not None else self.spacing,
                       transforms=transforms, _stats={})

    def as_batch(self):
        """(1, 1, D, H, W) float32 array for model input."""
        return self.data[np.newaxis, np.newaxis]
