"""
Sample access and batching for training and evaluation.

Augmentation seeds are derived from (run seed, epoch, sample index), never
from iteration order, so shuffling or prefetching cannot change a draw.
"""
import logging
from dataclasses import dataclass

import numpy as np

from spatiospatial.data.augment import augment
from spatiospatial.data.nifti import read_nifti
from spatiospatial.data.volume import Volume
from spatiospatial.utils.errors import ContractError, DataError, ShapeError
from spatiospatial.utils.seeding import AUGMENT_STREAM, derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    subject_id: str
    target: int
    source: object  # Volume or path


class VolumeDataset:
    """
    Ordered collection of labelled volumes. File-backed samples are read on
    first access and cached.
    """

    def __init__(self, samples, class_names):
        self.samples = list(samples)
        self.class_names = list(class_names)
        self._cache = {}

    @classmethod
    def from_manifest(cls, manifest, subject_ids=None):
        if subject_ids is not None:
            manifest = manifest.subset(subject_ids)
        samples = [Sample(e.subject_id, manifest.label_index(e.label), manifest.resolve(e))
                   for e in manifest.entries]
        return cls(samples, manifest.class_names)

    @classmethod
    def from_volumes(cls, volumes, targets, subject_ids=None, class_names=None):
        if len(volumes) != len(targets):
            raise ContractError(f"{len(volumes)} volumes but {len(targets)} targets")
        subject_ids = subject_ids or [f"sample{i}" for i in range(len(volumes))]
        class_names = class_names or [str(c) for c in range(int(max(targets)) + 1)]
        return cls([Sample(s, int(t), v) for s, t, v in zip(subject_ids, targets, volumes)], class_names)

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self):
        return len(self.class_names)

    def targets(self):
        return [s.target for s in self.samples]

    def counts(self):
        return tuple(int(n) for n in np.bincount(self.targets(), minlength=self.num_classes))

    def subset(self, subject_ids):
        wanted = set(subject_ids)
        subset = VolumeDataset([s for s in self.samples if s.subject_id in wanted], self.class_names)
        if len({s.subject_id for s in subset.samples}) != len(wanted):
            missing = sorted(wanted - {s.subject_id for s in subset.samples})
            raise DataError(f"subjects not in dataset: {missing}")
        return subset

    def volume(self, index):
        sample = self.samples[index]
        if isinstance(sample.source, Volume):
            return sample.source
        if index not in self._cache:
            try:
                self._cache[index] = read_nifti(sample.source)
            except DataError as exc:
                raise type(exc)(f"sample {sample.subject_id}: {exc}") from exc
        return self._cache[index]

    def item(self, index, epoch=0, augment_config=None, seed=0):
        """Volume of sample ``index``, augmented when a config is given."""
        volume = self.volume(index)
        if augment_config is not None and augment_config.enabled:
            volume = augment(volume, augment_config, derive_rng(seed, AUGMENT_STREAM, epoch, index))
        return volume

    def batches(self, order, batch_size=1, epoch=0, augment_config=None, seed=0):
        """
        Yield (x, targets, subject_ids) with x of shape (N, 1, D, H, W).
        Raises:
            ShapeError: volumes of different extents in one batch.
        """
        order = list(order)
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            volumes = [self.item(i, epoch, augment_config, seed) for i in chunk]
            extents = {v.extents for v in volumes}
            if len(extents) > 1:
                raise ShapeError(f"cannot batch volumes of different extents {sorted(extents)}")
            x = np.stack([v.data for v in volumes])[:, np.newaxis]
            yield x, np.array([self.samples[i].target for i in chunk]), [self.samples[i].subject_id for i in chunk]
