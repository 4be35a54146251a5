"""Map-level QC quantities: MC averaging, entropy, error maps, voxel-wise sums."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError
from .volume import as_binary_mask, as_probability_map, as_scalar_volume, check_same_shape


def as_sample_stack(samples) -> np.ndarray:
    """Stack N >= 2 same-shape probability maps into an ``(N, nx, ny, nz)`` array."""
    if isinstance(samples, np.ndarray) and samples.ndim == 4:
        maps = list(samples)
    else:
        maps = [np.asarray(s) for s in samples]
    if len(maps) < 2:
        raise ValueError(f"a sample stack needs at least 2 maps, got {len(maps)}")
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"sample maps differ in shape: {sorted(shapes)}")
    return np.stack([as_probability_map(m) for m in maps])


def mc_average(samples: Sequence | np.ndarray) -> np.ndarray:
    """Voxel-wise mean of the stochastic prediction maps.

    Samples are sorted per voxel before summation, which makes the result
    independent of sample order down to the last bit.
    """
    stack = np.sort(as_sample_stack(samples), axis=0)
    mean = stack.sum(axis=0) / stack.shape[0]
    # a mean lies between its extremes; this also makes equal samples exact
    return np.clip(mean, stack[0], stack[-1])


def entropy_map(p) -> np.ndarray:
    """Binary entropy in bits of each voxel of a probability map.

    Uses 0 * log2(0) = 0, so voxels at exactly 0 or 1 get zero uncertainty.
    The logarithm is only evaluated where its argument is positive.
    """
    p = as_probability_map(p)
    q = 1.0 - p
    h = np.zeros_like(p)
    inside = (p > 0.0) & (q > 0.0)
    pi, qi = p[inside], q[inside]
    h[inside] = -pi * np.log2(pi) - qi * np.log2(qi)
    return np.clip(h, 0.0, 1.0)


def mask_out_lesions(image, mask) -> np.ndarray:
    """Zero the image wherever the mask is set (reconstruction-network input)."""
    image = as_scalar_volume(image)
    mask = as_binary_mask(mask)
    check_same_shape(image, mask)
    return np.where(mask, 0.0, image)


def error_map(original, reconstructed) -> np.ndarray:
    """Signed difference ``original - reconstructed``."""
    original = as_scalar_volume(original)
    reconstructed = as_scalar_volume(reconstructed)
    check_same_shape(original, reconstructed)
    return original - reconstructed


def voxelwise_sum(m, absolute: bool = False) -> float:
    """Sum of all voxel values, correctly rounded (``math.fsum``).

    With ``absolute=True`` the magnitudes are summed instead, for callers
    who want an unsigned error score.
    """
    arr = as_scalar_volume(m)
    if absolute:
        arr = np.abs(arr)
    return math.fsum(arr.ravel().tolist())
