import numpy as np


def voxel_centers_1d(num_points, spacing):
    """
    Physical positions (mm) of voxel centres along one axis.
    Args:
        num_points (int): Number of voxels.
        spacing (float): Voxel size in mm.
    Returns:
        x (np.ndarray): Centre positions, measured from the volume edge.
    """
    if num_points < 1:
        raise ValueError("num_points must be at least 1.")
    if spacing <= 0:
        raise ValueError("spacing must be positive.")
    return np.linspace(0.5 * spacing, (num_points - 0.5) * spacing, num_points)


def resample_coordinates_1d(old_extent, old_spacing, new_extent, new_spacing):
    """
    Continuous source indices for every target voxel along one axis.

    Both grids are centre-aligned: the middle of the old field of view and the
    middle of the new one coincide. A target grid identical to the source grid
    maps onto integer indices exactly.
    Args:
        old_extent, new_extent (int): Voxel counts.
        old_spacing, new_spacing (float): Voxel sizes in mm.
    Returns:
        idx (np.ndarray): Source index coordinate per target voxel.
    """
    if new_extent == old_extent and new_spacing == old_spacing:
        return np.arange(old_extent, dtype=np.float64)
    shift = 0.5 * (old_extent * old_spacing - new_extent * new_spacing)
    centers = voxel_centers_1d(new_extent, new_spacing) + shift
    return centers / old_spacing - 0.5


def create_3d_grid(shape):
    """
    Index-space meshgrid of a volume.
    Args:
        shape (tuple): (D, H, W).
    Returns:
        Z, Y, X (np.ndarray): 3D arrays of voxel indices (indexing='ij').
    """
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError("shape must hold three positive extents.")
    axes = [np.arange(n, dtype=np.float64) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def volume_center(shape):
    """Index coordinate of the geometric centre of a volume."""
    return np.array([(n - 1) / 2.0 for n in shape], dtype=np.float64)
