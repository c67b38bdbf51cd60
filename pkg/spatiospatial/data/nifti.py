"""
Single-file NIfTI-1 (".nii") reader and writer.

Supports 3D scalar images with datatypes int16, float32 and float64. The
header is parsed with a numpy structured dtype; byte order comes from the
``sizeof_hdr`` field, which must read 348 in one of the two orders.

Axis mapping: NIfTI stores x fastest, so the (D, H, W) array has W = dim[1],
H = dim[2], D = dim[3], with spacing taken from pixdim the same way.
"""
import logging
from pathlib import Path

import numpy as np

from spatiospatial.data.volume import Volume
from spatiospatial.utils.errors import DataError, FormatError

logger = logging.getLogger(__name__)

header_dtd = [
    ("sizeof_hdr", "i4"),      # 0; must be 348
    ("data_type", "S10"),      # 4; unused
    ("db_name", "S18"),        # 14; unused
    ("extents", "i4"),         # 32; unused
    ("session_error", "i2"),   # 36; unused
    ("regular", "S1"),         # 38; unused
    ("dim_info", "u1"),        # 39
    ("dim", "i2", (8,)),       # 40; data array dimensions
    ("intent_p1", "f4"),       # 56
    ("intent_p2", "f4"),       # 60
    ("intent_p3", "f4"),       # 64
    ("intent_code", "i2"),     # 68
    ("datatype", "i2"),        # 70
    ("bitpix", "i2"),          # 72
    ("slice_start", "i2"),     # 74
    ("pixdim", "f4", (8,)),    # 76; grid spacings
    ("vox_offset", "f4"),      # 108; offset to data
    ("scl_slope", "f4"),       # 112
    ("scl_inter", "f4"),       # 116
    ("slice_end", "i2"),       # 120
    ("slice_code", "u1"),      # 122
    ("xyzt_units", "u1"),      # 123
    ("cal_max", "f4"),         # 124
    ("cal_min", "f4"),         # 128
    ("slice_duration", "f4"),  # 132
    ("toffset", "f4"),         # 136
    ("glmax", "i4"),           # 140
    ("glmin", "i4"),           # 144
    ("descrip", "S80"),        # 148
    ("aux_file", "S24"),       # 228
    ("qform_code", "i2"),      # 252
    ("sform_code", "i2"),      # 254
    ("quatern_b", "f4"),       # 256
    ("quatern_c", "f4"),       # 260
    ("quatern_d", "f4"),       # 264
    ("qoffset_x", "f4"),       # 268
    ("qoffset_y", "f4"),       # 272
    ("qoffset_z", "f4"),       # 276
    ("srow_x", "f4", (4,)),    # 280
    ("srow_y", "f4", (4,)),    # 296
    ("srow_z", "f4", (4,)),    # 312
    ("intent_name", "S16"),    # 328
    ("magic", "S4"),           # 344; 'n+1\0' for single-file images
]

header_dtype = np.dtype(header_dtd)
HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1"

# datatype code -> (numpy kind, bitpix)
DATATYPES = {
    4: ("i2", 16),
    16: ("f4", 32),
    64: ("f8", 64),
}
UNITS_MM = 2
SFORM_SCANNER = 1


def _byte_order(raw):
    native = np.frombuffer(raw[:4], dtype="<i4")[0]
    if native == HEADER_SIZE:
        return "<"
    if np.frombuffer(raw[:4], dtype=">i4")[0] == HEADER_SIZE:
        return ">"
    raise FormatError(f"sizeof_hdr is {native}, expected {HEADER_SIZE} in either byte order")


def parse_header(raw, source="<bytes>"):
    """
    Decode and validate a 348-byte header.
    Returns:
        np.void: Header record in the file's byte order.
    Raises:
        FormatError: naming the offending field.
    """
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{source}: header truncated ({len(raw)} of {HEADER_SIZE} bytes)")
    order = _byte_order(raw)
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder(order))[0]
    if hdr["magic"].rstrip(b"\0") != MAGIC:
        raise FormatError(f"{source}: magic is {bytes(hdr['magic'])!r}, expected b'n+1\\x00'")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise FormatError(f"{source}: unsupported datatype code {code} (supported: 4, 16, 64)")
    dim = [int(d) for d in hdr["dim"]]
    if not 1 <= dim[0] <= 7:
        raise FormatError(f"{source}: dim[0] = {dim[0]} out of range [1, 7]")
    if dim[0] > 3 and any(d != 1 for d in dim[4:dim[0] + 1]):
        raise FormatError(f"{source}: dim {dim[1:dim[0] + 1]} is not a 3D scalar image")
    if any(d < 1 for d in dim[1:min(dim[0], 3) + 1]):
        raise FormatError(f"{source}: non-positive extent in dim {dim[1:4]}")
    return hdr


def read_nifti(path):
    """
    Read a single-file NIfTI-1 volume as float32 (D, H, W).
    Args:
        path (str or Path): ".nii" file.
    Returns:
        Volume
    Raises:
        DataError: unreadable file.
        FormatError: malformed header or truncated data.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read volume {path}: {exc}") from exc
    hdr = parse_header(raw, source=str(path))
    order = _byte_order(raw)
    dim = [int(d) for d in hdr["dim"]]
    nx, ny, nz = (dim[i] if i <= dim[0] else 1 for i in (1, 2, 3))
    kind, _ = DATATYPES[int(hdr["datatype"])]
    dtype = np.dtype(order + kind)
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset {offset} lies inside the header")
    count = nx * ny * nz
    if offset + count * dtype.itemsize > len(raw):
        raise FormatError(f"{path}: voxel data truncated (need {count * dtype.itemsize} bytes at offset {offset})")
    voxels = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(nz, ny, nx)
    data = voxels.astype(np.float32)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = (data * np.float32(slope) + np.float32(inter)).astype(np.float32)
    pixdim = [float(p) for p in hdr["pixdim"]]
    spacing = tuple(abs(pixdim[i]) if pixdim[i] != 0 else 1.0 for i in (3, 2, 1))
    logger.debug("read %s: extents %s spacing %s", path, data.shape, spacing)
    return Volume(data=data, spacing=spacing)


def build_header(volume):
    hdr = np.zeros((), dtype=header_dtype.newbyteorder("<"))
    d, h, w = volume.extents
    sd, sh, sw = volume.spacing
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["dim"] = [3, w, h, d, 1, 1, 1, 1]
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    hdr["pixdim"] = [1.0, sw, sh, sd, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = UNITS_MM
    hdr["sform_code"] = SFORM_SCANNER
    hdr["srow_x"] = [sw, 0.0, 0.0, 0.0]
    hdr["srow_y"] = [0.0, sh, 0.0, 0.0]
    hdr["srow_z"] = [0.0, 0.0, sd, 0.0]
    hdr["magic"] = MAGIC + b"\0"
    return hdr


def write_nifti(volume, path):
    """
    Write a float32 single-file NIfTI-1 (vox_offset 352, empty extension block).
    Raises:
        DataError: on I/O failure, naming the path.
    """
    path = Path(path)
    header = build_header(volume).tobytes()
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + b"\0" * (VOX_OFFSET - HEADER_SIZE) + payload)
    except OSError as exc:
        raise DataError(f"cannot write volume {path}: {exc}") from exc
    return path
