"""
Dataset manifests and stratified train/test splits.

A manifest is a UTF-8 CSV with header ``path,label,subject_id`` plus a JSON
sidecar (``<name>.json``) recording the class order, the class counts and the
left-right axis of the stored arrays. Relative paths resolve against the
manifest's directory. Split files are JSON documents with the fold index,
seed and the two subject-id lists.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from spatiospatial.data.augment import LR_AXIS
from spatiospatial.utils.errors import DataError, FormatError, SplitError
from spatiospatial.utils.logs import write_json
from spatiospatial.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ("path", "label", "subject_id")
CANONICAL_CLASS_ORDER = ("HGG", "LGG", "Healthy")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    subject_id: str


def _class_order(labels):
    unique = set(labels)
    if unique <= set(CANONICAL_CLASS_ORDER):
        return [c for c in CANONICAL_CLASS_ORDER if c in unique]
    if all(label.lstrip("-").isdigit() for label in unique):
        return sorted(unique, key=int)
    return sorted(unique)


@dataclass
class DatasetManifest:
    entries: list
    class_names: list = None
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(Path(e[0]), str(e[1]), str(e[2]))
                        for e in self.entries]
        if self.class_names is None:
            self.class_names = _class_order([e.label for e in self.entries])
        self.class_names = [str(c) for c in self.class_names]
        self.validate()

    def validate(self):
        """
        Raises:
            DataError: duplicate paths, unknown labels, or a subject with two labels.
        """
        seen = set()
        subject_label = {}
        for e in self.entries:
            if e.path in seen:
                raise DataError(f"manifest lists {e.path} more than once")
            seen.add(e.path)
            if e.label not in self.class_names:
                raise DataError(f"label {e.label!r} of {e.path} is not one of {self.class_names}")
            if subject_label.setdefault(e.subject_id, e.label) != e.label:
                raise DataError(f"subject {e.subject_id!r} carries two labels")
        return self

    def __len__(self):
        return len(self.entries)

    @property
    def num_classes(self):
        return len(self.class_names)

    def label_index(self, label):
        return self.class_names.index(label)

    def targets(self):
        return [self.label_index(e.label) for e in self.entries]

    def counts(self):
        """Samples per class, in class order."""
        counts = [0] * self.num_classes
        for e in self.entries:
            counts[self.label_index(e.label)] += 1
        return tuple(counts)

    def subjects_by_class(self):
        groups = {name: [] for name in self.class_names}
        for e in self.entries:
            if e.subject_id not in groups[e.label]:
                groups[e.label].append(e.subject_id)
        return {name: sorted(ids) for name, ids in groups.items()}

    def subset(self, subject_ids):
        wanted = set(subject_ids)
        return DatasetManifest([e for e in self.entries if e.subject_id in wanted],
                               class_names=self.class_names, root=self.root)

    def resolve(self, entry):
        return entry.path if entry.path.is_absolute() else self.root / entry.path

    @classmethod
    def from_csv(cls, path):
        """
        Raises:
            DataError: unreadable file.
            FormatError: wrong header or malformed rows.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        rows = list(csv.reader(text.splitlines()))
        if not rows or tuple(h.strip() for h in rows[0]) != MANIFEST_HEADER:
            raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        entries = []
        for line, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{line}: expected 3 columns, got {len(row)}")
            entries.append(ManifestEntry(Path(row[0].strip()), row[1].strip(), row[2].strip()))
        class_names = None
        sidecar = path.with_suffix(".json")
        if sidecar.is_file():
            try:
                meta = json.loads(sidecar.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise FormatError(f"{sidecar}: unreadable sidecar: {exc}") from exc
            class_names = meta.get("class_names")
            if meta.get("lr_axis", LR_AXIS) != LR_AXIS:
                raise FormatError(f"{sidecar}: left-right axis {meta['lr_axis']} unsupported (expected {LR_AXIS})")
        return cls(entries, class_names=class_names, root=path.parent)

    def to_csv(self, path):
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(MANIFEST_HEADER)
                for e in self.entries:
                    writer.writerow([e.path.as_posix(), e.label, e.subject_id])
        except OSError as exc:
            raise DataError(f"cannot write manifest {path}: {exc}") from exc
        write_json(path.with_suffix(".json"), {
            "class_names": self.class_names,
            "counts": dict(zip(self.class_names, self.counts())),
            "lr_axis": LR_AXIS,
        })
        return path


@dataclass(frozen=True)
class SplitSpec:
    fold: int
    train: tuple
    test: tuple
    seed: int

    def check(self, manifest):
        """
        Raises:
            SplitError: overlapping or incomplete subject lists.
        """
        train, test = set(self.train), set(self.test)
        if train & test:
            raise SplitError(f"fold {self.fold}: subjects in both splits: {sorted(train & test)}")
        everyone = {e.subject_id for e in manifest.entries}
        if train | test != everyone:
            raise SplitError(f"fold {self.fold}: split does not cover the manifest exactly")
        return self

    def to_dict(self):
        return {"fold": self.fold, "seed": self.seed, "train": list(self.train), "test": list(self.test)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(fold=int(data["fold"]), train=tuple(data["train"]), test=tuple(data["test"]),
                       seed=int(data["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed split document: {exc}") from exc


def train_count(class_size, train_ratio):
    """round(train_ratio * class_size) half-up, clamped so both sides keep a subject."""
    return min(max(int(math.floor(train_ratio * class_size + 0.5)), 1), class_size - 1)


def make_splits(manifest, k=3, train_ratio=0.7, seed=0):
    """
    ``k`` independent stratified random train/test splits of the subjects.
    Args:
        manifest (DatasetManifest): Labelled subjects.
        k (int): Number of folds.
        train_ratio (float): Per-class train fraction.
        seed (int): Fold ``f`` draws from a generator keyed on (seed, f).
    Returns:
        list[SplitSpec]
    Raises:
        SplitError: naming a class with fewer than two subjects.
    """
    if k < 1:
        raise SplitError(f"k must be at least 1, got {k}")
    if not 0.0 < train_ratio < 1.0:
        raise SplitError(f"train ratio must lie in (0, 1), got {train_ratio}")
    groups = manifest.subjects_by_class()
    for name, ids in groups.items():
        if len(ids) < 2:
            raise SplitError(f"class {name!r} has {len(ids)} subject(s); at least 2 are needed to split")
    splits = []
    for fold in range(k):
        rng = derive_rng(seed, fold)
        train, test = [], []
        for name in manifest.class_names:
            ids = groups[name]
            order = rng.permutation(len(ids))
            n_train = train_count(len(ids), train_ratio)
            train += [ids[i] for i in order[:n_train]]
            test += [ids[i] for i in order[n_train:]]
        split = SplitSpec(fold=fold, train=tuple(sorted(train)), test=tuple(sorted(test)), seed=seed)
        splits.append(split.check(manifest))
    logger.info("made %d splits over %d subjects", k, sum(len(v) for v in groups.values()))
    return splits


def write_splits(splits, out_dir):
    out_dir = Path(out_dir)
    return [write_json(out_dir / f"split_{s.fold}.json", s.to_dict()) for s in splits]


def read_split(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read split {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON split document: {exc}") from exc
    return SplitSpec.from_dict(data)
