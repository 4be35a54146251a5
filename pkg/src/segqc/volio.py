"""Reading and writing volumes: a single-file NIfTI-1 subset and "rawvol".

NIfTI-1 support covers ``.nii`` files with magic ``n+1``, datatypes
uint8 (2), int16 (4), float32 (16) and float64 (64), either byte order,
and 3D data (or 4D with a singleton fourth axis). Orientation matrices
are neither read nor written.

rawvol is a pair ``<name>.rvol.json`` + ``<name>.rvol.bin``; the JSON
sidecar carries ``shape``, ``dtype`` (``"f32"`` or ``"u8"``), ``order``
(always ``"x-fastest"``) and ``endian`` (always ``"little"``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import EncodingRangeError, VolumeFormatError
from .volume import GridShape, VolumeMeta, as_scalar_volume, from_flat, to_flat

HEADER_SIZE = 348
DATA_OFFSET = 352

# datatype code -> (name, numpy kind+size)
DATATYPES = {
    2: ("u8", "u1"),
    4: ("i16", "i2"),
    16: ("f32", "f4"),
    64: ("f64", "f8"),
}
CODES_BY_NAME = {name: code for code, (name, _) in DATATYPES.items()}

RAWVOL_DTYPES = {"f32": "<f4", "u8": "u1"}


def _encoding_code(encoding) -> int:
    if isinstance(encoding, str):
        try:
            return CODES_BY_NAME[encoding]
        except KeyError:
            raise ValueError(f"unsupported encoding {encoding!r}") from None
    if int(encoding) not in DATATYPES:
        raise ValueError(f"unsupported datatype code {encoding}")
    return int(encoding)


def _is_rawvol(path: Path) -> bool:
    return path.name.endswith(".rvol.json") or path.name.endswith(".rvol.bin")


def _rawvol_paths(path: Path) -> tuple[Path, Path]:
    name = path.name
    for suffix in (".rvol.json", ".rvol.bin"):
        if name.endswith(suffix):
            stem = name[: -len(suffix)]
            break
    else:
        raise ValueError(f"not a rawvol path: {path}")
    return path.with_name(stem + ".rvol.json"), path.with_name(stem + ".rvol.bin")


def load_volume(path) -> tuple[VolumeMeta, np.ndarray]:
    """Read a volume, returning its metadata and float64 voxel values.

    NIfTI intensity scaling (``scl_slope``/``scl_inter``) is applied; a
    stored slope of 0 means "no scaling". Non-finite voxels are rejected.
    """
    path = Path(path)
    if _is_rawvol(path):
        meta, raw = _read_rawvol(path)
    elif path.suffix == ".nii":
        meta, raw = _read_nifti(path)
    else:
        raise VolumeFormatError(f"{path}: unrecognised extension (expected .nii or .rvol.json)")
    values = raw.astype(np.float64)
    if meta.slope != 1.0 or meta.intercept != 0.0:
        values = values * meta.slope + meta.intercept
    if not np.isfinite(values).all():
        raise VolumeFormatError(f"{path}: volume contains NaN or infinite voxels")
    return meta, values


def read_nifti_header(buf: bytes) -> dict:
    """Decode the fields of a NIfTI-1 header that this reader uses."""
    if len(buf) < HEADER_SIZE:
        raise VolumeFormatError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes")
    (sizeof_le,) = struct.unpack_from("<i", buf, 0)
    (sizeof_be,) = struct.unpack_from(">i", buf, 0)
    if sizeof_le == HEADER_SIZE:
        e = "<"
    elif sizeof_be == HEADER_SIZE:
        e = ">"
    else:
        raise VolumeFormatError(f"sizeof_hdr is {sizeof_le}, not {HEADER_SIZE} in either byte order")
    magic = buf[344:348]
    if magic == b"ni1\x00":
        raise VolumeFormatError("paired .hdr/.img NIfTI files (magic 'ni1') are not supported")
    if magic != b"n+1\x00":
        raise VolumeFormatError(f"bad magic {magic!r}")
    dim = struct.unpack_from(e + "8h", buf, 40)
    datatype, bitpix = struct.unpack_from(e + "2h", buf, 70)
    pixdim = struct.unpack_from(e + "8f", buf, 76)
    vox_offset, slope, inter = struct.unpack_from(e + "3f", buf, 108)
    return {
        "endian": e,
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": vox_offset,
        "scl_slope": slope,
        "scl_inter": inter,
    }


def _read_nifti(path: Path) -> tuple[VolumeMeta, np.ndarray]:
    buf = path.read_bytes()
    try:
        hdr = read_nifti_header(buf)
    except VolumeFormatError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from None
    e = hdr["endian"]
    dim = hdr["dim"]
    if dim[0] == 4 and dim[4] == 1:
        pass
    elif dim[0] != 3:
        raise VolumeFormatError(f"{path}: only 3D volumes are supported (dim[0]={dim[0]}, dim[4]={dim[4]})")
    if any(n < 1 for n in dim[1:4]):
        raise VolumeFormatError(f"{path}: non-positive grid extent in dim {dim[1:4]}")
    code = hdr["datatype"]
    if code not in DATATYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {code}")
    dtype = np.dtype(e + DATATYPES[code][1])
    if hdr["bitpix"] != dtype.itemsize * 8:
        raise VolumeFormatError(f"{path}: bitpix {hdr['bitpix']} does not match datatype {code}")
    offset = hdr["vox_offset"]
    if offset < DATA_OFFSET or offset != int(offset):
        raise VolumeFormatError(f"{path}: invalid vox_offset {offset}")
    offset = int(offset)
    shape = GridShape.of(dim[1:4])
    expected = shape.size * dtype.itemsize
    payload = len(buf) - offset
    if payload < expected:
        raise VolumeFormatError(f"{path}: truncated payload, {max(payload, 0)} of {expected} bytes")
    if payload > expected:
        raise VolumeFormatError(
            f"{path}: payload of {payload} bytes inconsistent with dims {tuple(shape)} ({expected} bytes)"
        )
    raw = np.frombuffer(buf, dtype=dtype, count=shape.size, offset=offset)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope == 0 or not np.isfinite(slope):
        slope, inter = 1.0, 0.0
    elif not np.isfinite(inter):
        inter = 0.0
    pix = hdr["pixdim"][1:4]
    voxel_size = tuple(float(p) for p in pix) if all(p > 0 for p in pix) else None
    meta = VolumeMeta(
        voxel_size=voxel_size, datatype=code, slope=float(slope), intercept=float(inter), endian=e
    )
    return meta, from_flat(raw, shape)


def _read_rawvol(path: Path) -> tuple[VolumeMeta, np.ndarray]:
    json_path, bin_path = _rawvol_paths(path)
    try:
        side = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{json_path}: invalid JSON sidecar: {exc}") from None
    if side.get("order", "x-fastest") != "x-fastest" or side.get("endian", "little") != "little":
        raise VolumeFormatError(f"{json_path}: only x-fastest little-endian payloads are supported")
    if side.get("dtype") not in RAWVOL_DTYPES:
        raise VolumeFormatError(f"{json_path}: unsupported dtype {side.get('dtype')!r}")
    try:
        shape = GridShape.of(side["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{json_path}: bad shape: {exc}") from None
    dtype = np.dtype(RAWVOL_DTYPES[side["dtype"]])
    buf = bin_path.read_bytes()
    expected = shape.size * dtype.itemsize
    if len(buf) < expected:
        raise VolumeFormatError(f"{bin_path}: truncated payload, {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise VolumeFormatError(f"{bin_path}: payload of {len(buf)} bytes inconsistent with shape {tuple(shape)}")
    raw = np.frombuffer(buf, dtype=dtype)
    voxel_size = side.get("voxel_size")
    meta = VolumeMeta(
        voxel_size=tuple(voxel_size) if voxel_size else None,
        datatype=CODES_BY_NAME[side["dtype"]],
    )
    return meta, from_flat(raw, shape)


def encode_voxels(v, encoding, endian: str = "<") -> bytes:
    """Encode voxels in x-fastest order, raising if any value does not fit."""
    arr = np.asarray(v)
    code = _encoding_code(encoding)
    dtype = np.dtype(endian + DATATYPES[code][1])
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    values = as_scalar_volume(arr) if arr.dtype != np.uint8 else arr
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        bad = (values < info.min) | (values > info.max) | (values != np.round(values))
        if bad.any():
            first = to_flat(values)[np.flatnonzero(to_flat(bad))[0]]
            raise EncodingRangeError(f"value {first} is not representable as {DATATYPES[code][0]}")
    elif dtype.itemsize == 4:
        limit = np.finfo(np.float32).max
        if (np.abs(values) > limit).any():
            raise EncodingRangeError("value exceeds the float32 range")
    return to_flat(values).astype(dtype).tobytes()


def build_nifti_header(shape, code: int, endian: str = "<", voxel_size=None) -> bytes:
    shape = GridShape.of(shape)
    e = endian
    hdr = bytearray(DATA_OFFSET)
    struct.pack_into(e + "i", hdr, 0, HEADER_SIZE)
    struct.pack_into(e + "8h", hdr, 40, 3, shape.nx, shape.ny, shape.nz, 1, 1, 1, 1)
    bitpix = np.dtype(DATATYPES[code][1]).itemsize * 8
    struct.pack_into(e + "2h", hdr, 70, code, bitpix)
    pix = voxel_size or (1.0, 1.0, 1.0)
    struct.pack_into(e + "8f", hdr, 76, 1.0, *pix, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(e + "3f", hdr, 108, float(DATA_OFFSET), 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: millimetres
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def save_volume(v, path, encoding=None, *, endian: str = "<", meta: VolumeMeta | None = None) -> None:
    """Write a scalar volume or binary mask.

    ``encoding`` is a datatype code (2, 4, 16, 64) or name (``"u8"``,
    ``"i16"``, ``"f32"``, ``"f64"``). Masks default to uint8, scalar
    volumes to float32. rawvol files accept only ``"f32"`` and ``"u8"``
    and are always little-endian.
    """
    path = Path(path)
    arr = np.asarray(v)
    if encoding is None:
        encoding = 2 if arr.dtype == np.bool_ else 16
    code = _encoding_code(encoding)
    if _is_rawvol(path):
        name = DATATYPES[code][0]
        if name not in RAWVOL_DTYPES:
            raise ValueError(f"rawvol supports only f32 and u8, not {name}")
        if endian != "<":
            raise ValueError("rawvol payloads are always little-endian")
        payload = encode_voxels(arr, code, "<")
        json_path, bin_path = _rawvol_paths(path)
        side = {"shape": list(arr.shape), "dtype": name, "order": "x-fastest", "endian": "little"}
        if meta is not None and meta.voxel_size is not None:
            side["voxel_size"] = list(meta.voxel_size)
        bin_path.write_bytes(payload)
        json_path.write_text(json.dumps(side) + "\n")
    elif path.suffix == ".nii":
        payload = encode_voxels(arr, code, endian)
        voxel_size = meta.voxel_size if meta is not None else None
        path.write_bytes(build_nifti_header(arr.shape, code, endian, voxel_size) + payload)
    else:
        raise ValueError(f"{path}: unrecognised extension (expected .nii or .rvol.json)")
