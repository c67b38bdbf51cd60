"""
Seeded synthetic volumes with class-dependent geometry, for desk-scale runs.

Class ``c`` holds ``c + 1`` bright ellipsoids of mean radius ``3 + c`` voxels
over Gaussian noise, so both the count and the size of the bright structures
separate the classes.
"""
import logging
from pathlib import Path

import numpy as np

from spatiospatial.data.nifti import write_nifti
from spatiospatial.data.splits import DatasetManifest, ManifestEntry
from spatiospatial.data.volume import Volume
from spatiospatial.utils.errors import ContractError
from spatiospatial.utils.grid import create_3d_grid
from spatiospatial.utils.numerics import evaluate_field
from spatiospatial.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

MIN_EXTENT = 16
NOISE_SIGMA = 0.1
SYNTHETIC_SPACING = (2.0, 2.0, 2.0)
ELLIPSOID = "((Z - cz) / az)**2 + ((Y - cy) / ay)**2 + ((X - cx) / ax)**2 <= 1"


def _extents(extent):
    extents = (int(extent),) * 3 if np.isscalar(extent) else tuple(int(e) for e in extent)
    if len(extents) != 3 or min(extents) < MIN_EXTENT:
        raise ContractError(f"synthetic extents must be at least {MIN_EXTENT} per axis, got {extent}")
    return extents


def synthetic_volume(label, extents, rng):
    """
    One phantom for class ``label``.
    Args:
        label (int): Class index.
        extents (tuple): (D, H, W).
        rng (np.random.Generator): Draw source.
    Returns:
        Volume
    """
    Z, Y, X = create_3d_grid(extents)
    field = np.zeros(extents, dtype=np.float32)
    radius = min(3.0 + label, min(extents) / 4.0)
    for _ in range(label + 1):
        axes = radius * rng.uniform(0.8, 1.2, size=3)
        center = [rng.uniform(a + 1.0, n - a - 2.0) for a, n in zip(axes, extents)]
        mask = evaluate_field(ELLIPSOID, Z, Y, X, {"cz": center[0], "cy": center[1], "cx": center[2],
                                                   "az": axes[0], "ay": axes[1], "ax": axes[2]})
        field[mask] = 1.0
    noise = rng.normal(0.0, NOISE_SIGMA, size=extents).astype(np.float32)
    return Volume(data=field + noise, spacing=SYNTHETIC_SPACING)


def generate_synthetic(classes=3, per_class=10, extent=32, seed=0, out_dir=None):
    """
    Build ``classes * per_class`` phantoms.

    Volume ``i`` of class ``c`` draws from a generator keyed on (seed, c, i),
    so every file is reproducible on its own.
    Args:
        classes (int): Number of classes.
        per_class (int): Volumes per class.
        extent (int or tuple): Edge length (or (D, H, W)), at least 16.
        seed (int): Run seed.
        out_dir (str or Path): When given, write NIfTI files under
            ``out_dir/volumes`` and ``out_dir/manifest.csv``.
    Returns:
        (DatasetManifest, list[Volume])
    """
    if classes < 1 or per_class < 1:
        raise ContractError(f"need at least one class and one volume per class, got {classes}x{per_class}")
    extents = _extents(extent)
    out_dir = Path(out_dir) if out_dir is not None else None
    entries, volumes = [], []
    for c in range(classes):
        for i in range(per_class):
            volume = synthetic_volume(c, extents, derive_rng(seed, c, i))
            rel = Path("volumes") / f"class{c}_{i:03d}.nii"
            if out_dir is not None:
                write_nifti(volume, out_dir / rel)
            entries.append(ManifestEntry(rel, str(c), f"syn{c}_{i:03d}"))
            volumes.append(volume)
    manifest = DatasetManifest(entries, class_names=[str(c) for c in range(classes)],
                               root=out_dir if out_dir is not None else Path("."))
    if out_dir is not None:
        manifest.to_csv(out_dir / "manifest.csv")
        logger.info("wrote %d synthetic volumes to %s", len(volumes), out_dir)
    return manifest, volumes


def nearest_centroid_accuracy(train_volumes, train_labels, test_volumes, test_labels):
    """
    Accuracy of a nearest-class-mean classifier on raw voxels (L2 distance).
    """
    train = np.stack([v.data.reshape(-1) for v in train_volumes]).astype(np.float64)
    test = np.stack([v.data.reshape(-1) for v in test_volumes]).astype(np.float64)
    train_labels = np.asarray(train_labels)
    classes = np.unique(train_labels)
    centroids = np.stack([train[train_labels == c].mean(axis=0) for c in classes])
    distances = ((test[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = classes[distances.argmin(axis=1)]
    return float((predicted == np.asarray(test_labels)).mean())
