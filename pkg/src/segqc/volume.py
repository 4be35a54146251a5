"""Volume data model and preprocessing.

Volumes are numpy arrays of shape ``(nx, ny, nz)`` indexed ``[x, y, z]``.
Flattening with ``order="F"`` yields the x-fastest voxel order used on disk
by NIfTI; every function here keeps that convention.

Scalar volumes are float64, probability maps are float64 in [0, 1] and
binary masks are bool.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import NoForegroundError, ShapeMismatchError


class GridShape(NamedTuple):
    nx: int
    ny: int
    nz: int

    @classmethod
    def of(cls, shape) -> "GridShape":
        shape = tuple(int(n) for n in shape)
        if len(shape) != 3:
            raise ValueError(f"expected a 3D shape, got {shape}")
        if any(n < 1 for n in shape):
            raise ValueError(f"grid extents must be >= 1, got {shape}")
        return cls(*shape)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz


@dataclass(frozen=True)
class VolumeMeta:
    """Source encoding details recorded when a volume is read from disk."""

    voxel_size: tuple[float, float, float] | None = None
    datatype: int | None = None
    slope: float = 1.0
    intercept: float = 0.0
    endian: str = "<"

    def __post_init__(self):
        if self.slope == 0:
            raise ValueError("scaling slope must be nonzero")
        if self.voxel_size is not None and any(s <= 0 for s in self.voxel_size):
            raise ValueError(f"voxel sizes must be positive, got {self.voxel_size}")
        if self.endian not in ("<", ">"):
            raise ValueError(f"endian must be '<' or '>', got {self.endian!r}")


def as_scalar_volume(v) -> np.ndarray:
    """Validate ``v`` as a finite 3D volume and return it as float64."""
    arr = np.asarray(v, dtype=np.float64)
    GridShape.of(arr.shape)
    if not np.isfinite(arr).all():
        raise ValueError("volume contains non-finite voxels")
    return arr


def as_probability_map(p) -> np.ndarray:
    arr = as_scalar_volume(p)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"probability map values must lie in [0, 1], got [{arr.min()}, {arr.max()}]"
        )
    return arr


def as_binary_mask(m) -> np.ndarray:
    """Accept bool arrays, or numeric arrays containing only 0 and 1."""
    arr = np.asarray(m)
    GridShape.of(arr.shape)
    if arr.dtype == np.bool_:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return arr.astype(bool)


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"shape mismatch: {sorted(shapes)}")


def to_flat(v) -> np.ndarray:
    """Voxels of ``v`` in x-fastest order."""
    return np.asarray(v).ravel(order="F")


def from_flat(values, shape) -> np.ndarray:
    shape = GridShape.of(shape)
    values = np.asarray(values)
    if values.size != shape.size:
        raise ShapeMismatchError(
            f"{values.size} values do not fill a {shape.nx}x{shape.ny}x{shape.nz} grid"
        )
    return values.reshape(shape, order="F")


def normalize_intensities(v, lo: float = 0.0, hi: float = 255.0) -> np.ndarray:
    """Linearly map the intensity range of ``v`` onto ``[lo, hi]``.

    A constant volume maps to ``lo`` everywhere.
    """
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    arr = as_scalar_volume(v)
    vmin, vmax = arr.min(), arr.max()
    if vmax == vmin:
        return np.full(arr.shape, float(lo))
    with np.errstate(over="ignore"):
        span = vmax - vmin
    if np.isfinite(span):
        t = (arr - vmin) / span
    else:
        # the range itself overflows; halve everything first
        t = (arr / 2 - vmin / 2) / (vmax / 2 - vmin / 2)
    # dividing first keeps t in [0, 1] even for subnormal ranges
    out = lo + np.clip(t, 0.0, 1.0) * (hi - lo)
    # pin the extremes so min/max land exactly on the target range
    out[arr == vmin] = lo
    out[arr == vmax] = hi
    return out


class BoundingBox(NamedTuple):
    """Inclusive index ranges ``(first, last)`` per axis."""

    x: tuple[int, int]
    y: tuple[int, int]
    z: tuple[int, int]

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in self)


def crop_to_foreground(v, threshold: float) -> tuple[np.ndarray, BoundingBox]:
    arr = as_scalar_volume(v)
    fg = arr > threshold
    if not fg.any():
        raise NoForegroundError(f"no voxel exceeds threshold {threshold}")
    bounds = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(fg.any(axis=other))
        bounds.append((int(idx[0]), int(idx[-1])))
    box = BoundingBox(*bounds)
    return arr[box.slices()].copy(), box


def embed(cropped, box: BoundingBox, shape, fill: float = 0.0) -> np.ndarray:
    """Place ``cropped`` back into a ``shape`` grid at the offset given by ``box``."""
    out = np.full(GridShape.of(shape), fill, dtype=np.asarray(cropped).dtype)
    out[box.slices()] = cropped
    return out


def _source_coords(n_src: int, n_tgt: int) -> np.ndarray:
    # corner-aligned: first and last samples coincide; a single target sample sits at 0
    if n_tgt == 1 or n_src == 1:
        return np.zeros(n_tgt)
    return np.arange(n_tgt) * ((n_src - 1) / (n_tgt - 1))


def _linear_along(arr: np.ndarray, axis: int, n_tgt: int) -> np.ndarray:
    n_src = arr.shape[axis]
    if n_src == n_tgt:
        return arr
    coords = _source_coords(n_src, n_tgt)
    i0 = np.floor(coords).astype(np.intp)
    i0 = np.minimum(i0, n_src - 1)
    i1 = np.minimum(i0 + 1, n_src - 1)
    w = coords - i0
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    bshape = [1, 1, 1]
    bshape[axis] = n_tgt
    w = w.reshape(bshape)
    out = a + w * (b - a)
    # a + w*(b - a) can overshoot an endpoint by one rounding step
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def _nearest_along(arr: np.ndarray, axis: int, n_tgt: int) -> np.ndarray:
    n_src = arr.shape[axis]
    if n_src == n_tgt:
        return arr
    idx = np.floor(_source_coords(n_src, n_tgt) + 0.5).astype(np.intp)
    return np.take(arr, np.minimum(idx, n_src - 1), axis=axis)


def resample_to_shape(
    v, target, mode: Literal["nearest", "trilinear"] = "trilinear"
) -> np.ndarray:
    """Resample a volume to ``target`` shape with corner-aligned sampling.

    Trilinear interpolation is applied separably (one linear pass per axis),
    which is algebraically identical to trilinear weighting. Binary masks
    must use ``mode="nearest"`` and come back as bool.
    """
    target = GridShape.of(target)
    arr = np.asarray(v)
    is_mask = arr.dtype == np.bool_
    if mode == "trilinear":
        if is_mask:
            raise ValueError("binary masks must be resampled with mode='nearest'")
        arr = as_scalar_volume(arr)
        step = _linear_along
    elif mode == "nearest":
        arr = arr if is_mask else as_scalar_volume(arr)
        step = _nearest_along
    else:
        raise ValueError(f"unknown resampling mode {mode!r}")
    for axis, n in enumerate(target):
        arr = step(arr, axis, n)
    return np.array(arr, copy=True)


def binarize(p, t: float = 0.5) -> np.ndarray:
    """Voxel is foreground iff its probability is strictly greater than ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return as_probability_map(p) > t
