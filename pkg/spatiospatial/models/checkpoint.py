"""
Named-tensor checkpoint container and transfer-learning weight surgery.

Layout (all integers little-endian):

    bytes 0-7      magic b"SSNCKPT1"
    bytes 8-15     uint64 header length L
    bytes 16..16+L UTF-8 JSON: name -> {"dtype": "f32", "shape": [...],
                   "offset": int, "length": int}, plus a reserved
                   "__metadata__" entry (architecture, model config)
    data section   tensors row-major little-endian, header order, no padding

Offsets are relative to the start of the data section.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spatiospatial.config import ModelConfig
from spatiospatial.utils.errors import DataError, FormatError, SurgeryError

logger = logging.getLogger(__name__)

MAGIC = b"SSNCKPT1"
METADATA_KEY = "__metadata__"
STORAGE_DTYPE = np.dtype("<f4")
DTYPE_CODES = {"f32": np.dtype("<f4")}
ENTRY_KEYS = ("dtype", "shape", "offset", "length")


@dataclass
class Checkpoint:
    """Ordered name -> float32 array map plus free-form metadata."""
    tensors: dict
    metadata: dict = field(default_factory=dict)

    @property
    def architecture(self):
        return self.metadata.get("architecture")

    @property
    def model_config(self):
        cfg = self.metadata.get("model_config")
        return ModelConfig(**cfg) if cfg is not None else None


def checkpoint_from_model(model, extra_metadata=None):
    tensors = {name: np.asarray(t.data, dtype=STORAGE_DTYPE) for name, t in model.state().items()}
    metadata = {"architecture": model.kind.value, "model_config": model.config.model_dump()}
    metadata.update(extra_metadata or {})
    return Checkpoint(tensors=tensors, metadata=metadata)


def encode_checkpoint(checkpoint):
    """Serialise to the container bytes."""
    header = {}
    chunks = []
    offset = 0
    for name, array in checkpoint.tensors.items():
        if name.startswith("__"):
            raise FormatError(f"tensor name {name!r} uses the reserved '__' prefix")
        data = np.ascontiguousarray(array, dtype=STORAGE_DTYPE).tobytes(order="C")
        header[name] = {"dtype": "f32", "shape": list(array.shape), "offset": offset, "length": len(data)}
        chunks.append(data)
        offset += len(data)
    header[METADATA_KEY] = checkpoint.metadata
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    prefix = MAGIC + np.array([len(header_bytes)], dtype="<u8").tobytes()
    return prefix + header_bytes + b"".join(chunks)


def decode_checkpoint(blob, source="<bytes>"):
    """
    Parse container bytes.
    Raises:
        FormatError: bad magic, truncated data, inconsistent entries.
    """
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (magic bytes {blob[:8]!r})")
    header_len = int(np.frombuffer(blob, dtype="<u8", count=1, offset=8)[0])
    if 16 + header_len > len(blob):
        raise FormatError(f"{source}: header length {header_len} exceeds file size {len(blob)}")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{source}: header must be a JSON object, got {type(header).__name__}")
    metadata = header.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict):
        raise FormatError(f"{source}: {METADATA_KEY} must be a JSON object")
    data_start = 16 + header_len
    tensors = {}
    for name, entry in header.items():
        if not isinstance(entry, dict):
            raise FormatError(f"{source}: tensor {name!r} entry must be a JSON object")
        missing = [key for key in ENTRY_KEYS if key not in entry]
        if missing:
            raise FormatError(f"{source}: tensor {name!r} entry lacks {', '.join(missing)}")
        dtype = DTYPE_CODES.get(entry["dtype"]) if isinstance(entry["dtype"], str) else None
        if dtype is None:
            raise FormatError(f"{source}: tensor {name!r} has unsupported dtype {entry['dtype']!r}")
        try:
            shape = tuple(int(s) for s in entry["shape"])
            length, offset = int(entry["length"]), int(entry["offset"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{source}: tensor {name!r} has a malformed shape, length or offset") from exc
        if min(shape, default=0) < 0 or length < 0 or offset < 0:
            raise FormatError(f"{source}: tensor {name!r} has a negative shape, length or offset")
        if length != int(np.prod(shape)) * dtype.itemsize:
            raise FormatError(f"{source}: tensor {name!r} length {length} does not match shape {shape}")
        start = data_start + offset
        if start + length > len(blob):
            raise FormatError(f"{source}: tensor {name!r} is truncated")
        tensors[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=start) \
            .reshape(shape).astype(np.float32)
    return Checkpoint(tensors=tensors, metadata=metadata)


def save_checkpoint(model_or_checkpoint, path, extra_metadata=None):
    """
    Write a model (or a prepared Checkpoint) to ``path``.
    Raises:
        DataError: on I/O failure, naming the path.
    """
    checkpoint = model_or_checkpoint if isinstance(model_or_checkpoint, Checkpoint) \
        else checkpoint_from_model(model_or_checkpoint, extra_metadata)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(checkpoint))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("saved checkpoint %s (%d tensors)", path, len(checkpoint.tensors))
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, source=str(path))


def load_state(model, checkpoint, strict=True):
    """
    Copy every checkpoint tensor into the model (no skipping).
    Raises:
        SurgeryError: missing names or shape mismatches.
    """
    return transfer_load(model, checkpoint, skip_prefixes=(), strict=strict)


@dataclass
class SurgeryReport:
    loaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    unexpected: list = field(default_factory=list)
    frozen: list = field(default_factory=list)

    def to_dict(self):
        return {"loaded": self.loaded, "skipped": self.skipped, "missing": self.missing,
                "unexpected": self.unexpected, "frozen": self.frozen}


def _skipped(name, prefixes):
    return any(name == p or name.startswith(p + ".") for p in prefixes)


def transfer_load(model, checkpoint, skip_prefixes=("stem", "fc"), strict=True, freeze=False):
    """
    Load pretrained weights except under ``skip_prefixes``.

    Skipped tensors keep their fresh initialisation. Shapes are validated for
    every non-skipped entry before anything is copied, so a failed surgery
    leaves the model untouched.
    Args:
        model (Model): Destination.
        checkpoint (Checkpoint): Source tensors.
        skip_prefixes (iterable[str]): Top-level name prefixes left untouched.
        strict (bool): Missing non-skipped names raise instead of being reported.
        freeze (bool): Mark loaded parameters as not requiring gradients.
    Returns:
        SurgeryReport
    Raises:
        SurgeryError: naming the offending tensor.
    """
    skip_prefixes = tuple(skip_prefixes)
    state = model.state()
    report = SurgeryReport()
    plan = []
    for name, tensor in state.items():
        if _skipped(name, skip_prefixes):
            report.skipped.append(name)
            continue
        if name not in checkpoint.tensors:
            if strict:
                raise SurgeryError(f"checkpoint is missing tensor {name!r}")
            report.missing.append(name)
            continue
        source = checkpoint.tensors[name]
        if tuple(source.shape) != tuple(tensor.shape):
            raise SurgeryError(
                f"shape mismatch for tensor {name!r}: checkpoint {tuple(source.shape)}, model {tensor.shape}")
        plan.append((name, tensor, source))
    report.unexpected = [n for n in checkpoint.tensors if n not in state]

    params = dict(model.named_parameters())
    for name, tensor, source in plan:
        tensor.data = np.array(source, dtype=tensor.dtype, copy=True)
        tensor.grad = None
        report.loaded.append(name)
        if freeze and name in params:
            tensor.requires_grad = False
            report.frozen.append(name)
    logger.info("transfer surgery: %d loaded, %d skipped, %d missing",
                len(report.loaded), len(report.skipped), len(report.missing))
    return report
