import json
import logging
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbosity=0):
    """
    Install a stderr handler on the package logger (CLI use only).
    Args:
        verbosity (int): 0 for INFO, 1 or more for DEBUG.
    """
    level = logging.DEBUG if verbosity > 0 else logging.INFO
    root = logging.getLogger("spatiospatial")
    root.setLevel(level)
    if not any(getattr(h, "_spatiospatial", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._spatiospatial = True
        root.addHandler(handler)


def to_jsonable(obj):
    """
    Convert numpy scalars/arrays and tuples into plain JSON types.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj, indent=None):
    """
    Deterministic JSON encoding (sorted keys) so reruns produce identical bytes.
    """
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=indent)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, indent=2) + "\n", encoding="utf-8")
    return path


class JsonLinesWriter:
    """
    Appends one JSON object per line to a run log.

    Every record gets an ``event`` key naming its kind (epoch, fold, surgery,
    summary, ...). A writer built with ``path=None`` only keeps records in
    memory, which is what the library functions use when no run directory
    exists.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, event, **fields):
        record = {"event": event, **to_jsonable(fields)}
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(dumps(record) + "\n")
        logger.debug("%s %s", event, fields)
        return record


def read_json_lines(path):
    with Path(path).open("r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
