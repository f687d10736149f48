"""Non-learned inference stages around the segmentation network.

Covers intensity windowing, coarse bone binarization, point sampling from
binarized volumes, sliding-window placement (regular grid and greedy mask
cover), overlapping-patch merging by voxelwise maximum, and extraction of
detection proposals from a probability volume.

Threshold boundaries are inclusive throughout (>=), fixed globally for
consistency. The spine-removal step of the original pipeline is modeled as
an optional exclusion mask since producing one requires a segmentation model
outside this toolkit's scope.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputFaultError
from .labeling import DEFAULT_CONNECTIVITY, connected_components, remove_small
from .volume_io import (
    KIND_BINARY,
    KIND_INTENSITY,
    KIND_PROBABILITY,
    InstanceMetadata,
    Volume,
)

DEFAULT_WINDOW_LEVEL = 450.0
DEFAULT_WINDOW_WIDTH = 1100.0
DEFAULT_BONE_HU = 200.0
DEFAULT_POINT_COUNT = 30_000
DEFAULT_WINDOW_SIZE = 128
DEFAULT_STRIDE = 96  # 0.75 * window size
DEFAULT_BIN_THRESHOLD = 0.1
DEFAULT_MIN_VOXELS = 200


@dataclass
class PointCloud:
    """Sampled foreground voxels; coords are voxel-center physical positions."""

    coords: np.ndarray
    source_indices: np.ndarray


@dataclass
class WindowPlan:
    """Placement of fixed-size windows, all clamped inside the volume."""

    window_size: int
    axis_sizes: tuple[int, int, int]
    origins: list[tuple[int, int, int]]
    clamped: list[bool]


def hu_window_normalize(
    vol: Volume,
    level: float = DEFAULT_WINDOW_LEVEL,
    width: float = DEFAULT_WINDOW_WIDTH,
) -> Volume:
    """Clamp intensities to the bone window and rescale to [-1, 1]."""
    if vol.kind != KIND_INTENSITY:
        raise InputFaultError(f"expected intensity-HU volume, got {vol.kind!r}")
    if width <= 0:
        raise InputFaultError(f"window width must be positive, got {width}")
    half = width / 2.0
    data = np.clip(vol.data.astype(np.float64), level - half, level + half)
    data = (data - level) / half
    return Volume(data, vol.spacing, KIND_INTENSITY)


def bone_binarize(vol: Volume, threshold_hu: float = DEFAULT_BONE_HU) -> Volume:
    """Foreground wherever the intensity reaches the HU threshold."""
    if vol.kind != KIND_INTENSITY:
        raise InputFaultError(f"expected intensity-HU volume, got {vol.kind!r}")
    return Volume((vol.data >= threshold_hu).astype(np.uint8), vol.spacing, KIND_BINARY)


def sample_points(binary: Volume, n: int = DEFAULT_POINT_COUNT, seed: int = 0) -> PointCloud:
    """Uniform sample without replacement from the foreground voxels.

    Returns every foreground voxel when fewer than ``n`` exist. Deterministic
    for a given seed.
    """
    if binary.kind != KIND_BINARY:
        raise InputFaultError(f"expected binary volume, got {binary.kind!r}")
    if n <= 0:
        raise InputFaultError(f"sample size must be positive, got {n}")
    nx, ny, _ = binary.dims
    flat = np.ravel(binary.data, order="F")
    foreground = np.flatnonzero(flat)
    if foreground.size == 0:
        raise InputFaultError("cannot sample points from an empty foreground")
    if foreground.size > n:
        rng = np.random.default_rng(seed)
        foreground = foreground[rng.choice(foreground.size, size=n, replace=False)]
    x = foreground % nx
    t = foreground // nx
    y = t % ny
    z = t // ny
    indices = np.stack([x, y, z], axis=1).astype(np.int64)
    spacing = np.asarray(binary.spacing, dtype=np.float64)
    coords = (indices.astype(np.float64) + 0.5) * spacing
    return PointCloud(coords=coords, source_indices=indices)


def _axis_origins(dim: int, window: int, stride: int) -> tuple[list[int], list[bool], int]:
    if window >= dim:
        return [0], [window > dim], min(window, dim)
    origins = list(range(0, dim - window + 1, stride))
    clamped = [False] * len(origins)
    if origins[-1] != dim - window:
        origins.append(dim - window)
        clamped.append(True)
    return origins, clamped, window


def tile_windows(
    dims: Sequence[int],
    window: int = DEFAULT_WINDOW_SIZE,
    stride: int = DEFAULT_STRIDE,
) -> WindowPlan:
    """Regular grid of window origins covering the whole volume.

    Origins advance by ``stride`` per axis; a final origin per axis is
    clamped to ``dim - window`` so coverage is complete. On axes shorter
    than the window, the window shrinks to the axis and is flagged.
    """
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise InputFaultError(f"dims must be 3 positive integers, got {tuple(dims)}")
    if window < 1 or stride < 1:
        raise InputFaultError("window and stride must be positive")
    per_axis = [_axis_origins(int(d), window, stride) for d in dims]
    origins: list[tuple[int, int, int]] = []
    clamped: list[bool] = []
    for (ox, cx), (oy, cy), (oz, cz) in itertools.product(
        *[zip(origins_a, clamped_a) for origins_a, clamped_a, _ in per_axis]
    ):
        origins.append((ox, oy, oz))
        clamped.append(cx or cy or cz)
    sizes = tuple(size for _, _, size in per_axis)
    return WindowPlan(window_size=window, axis_sizes=sizes, origins=origins, clamped=clamped)


def windows_from_mask(mask: Volume, window: int = DEFAULT_WINDOW_SIZE) -> WindowPlan:
    """Greedy cover of every mask voxel with windows centered on seeds.

    Repeatedly centers a window on the lexicographically smallest uncovered
    mask voxel (clamping the origin into bounds) until the mask is covered.
    """
    if mask.kind != KIND_BINARY:
        raise InputFaultError(f"expected binary mask, got {mask.kind!r}")
    if window < 1:
        raise InputFaultError("window must be positive")
    dims = mask.dims
    voxels = np.argwhere(mask.data)
    if voxels.size == 0:
        raise InputFaultError("mask is empty")
    sizes = tuple(min(window, d) for d in dims)
    covered = np.zeros(dims, dtype=bool)
    origins: list[tuple[int, int, int]] = []
    clamped: list[bool] = []
    half = window // 2
    for voxel in voxels:
        if covered[voxel[0], voxel[1], voxel[2]]:
            continue
        origin = []
        was_clamped = window > min(dims)
        for axis in range(3):
            o = int(voxel[axis]) - half
            limit = dims[axis] - sizes[axis]
            oc = min(max(o, 0), limit)
            if oc != o:
                was_clamped = True
            origin.append(oc)
        ox, oy, oz = origin
        covered[ox : ox + sizes[0], oy : oy + sizes[1], oz : oz + sizes[2]] = True
        origins.append((ox, oy, oz))
        clamped.append(was_clamped)
    return WindowPlan(window_size=window, axis_sizes=sizes, origins=origins, clamped=clamped)


def merge_patches(
    patches: Iterable[tuple[Sequence[int], np.ndarray]],
    dims: Sequence[int],
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
) -> Volume:
    """Assemble overlapping probability blocks, keeping voxelwise maxima.

    Voxels no block covers stay 0; the merge is order-independent.
    """
    dims = tuple(int(d) for d in dims)
    out = np.zeros(dims, dtype=np.float32, order="F")
    for origin, block in patches:
        block = np.asarray(block, dtype=np.float32)
        if block.ndim != 3:
            raise InputFaultError(f"patch blocks must be 3D, got {block.ndim}D")
        ox, oy, oz = (int(v) for v in origin)
        ex, ey, ez = ox + block.shape[0], oy + block.shape[1], oz + block.shape[2]
        if min(ox, oy, oz) < 0 or ex > dims[0] or ey > dims[1] or ez > dims[2]:
            raise InputFaultError(
                f"block at origin {(ox, oy, oz)} with shape {block.shape} exceeds dims {dims}"
            )
        region = out[ox:ex, oy:ey, oz:ez]
        np.maximum(region, block, out=region)
    return Volume(out, spacing, KIND_PROBABILITY)


def extract_proposals(
    prob: Volume,
    bin_threshold: float = DEFAULT_BIN_THRESHOLD,
    min_voxels: int = DEFAULT_MIN_VOXELS,
    exclusion: Optional[Volume] = None,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> tuple[Volume, list[InstanceMetadata]]:
    """Turn a probability volume into scored detection proposals.

    Excluded voxels are zeroed, the volume is binarized at the threshold,
    connected components become proposals, components under ``min_voxels``
    are dropped, and each survivor is scored with the mean raw probability
    over its voxels.
    """
    if prob.kind != KIND_PROBABILITY:
        raise InputFaultError(f"expected probability volume, got {prob.kind!r}")
    work = prob.data
    if exclusion is not None:
        if exclusion.kind != KIND_BINARY:
            raise InputFaultError(f"exclusion mask must be binary, got {exclusion.kind!r}")
        if exclusion.dims != prob.dims:
            raise InputFaultError(
                f"exclusion dims {exclusion.dims} do not match volume dims {prob.dims}"
            )
        work = np.where(exclusion.data != 0, np.float32(0.0), work)
    mask = Volume((work >= bin_threshold).astype(np.uint8), prob.spacing, KIND_BINARY)
    labels, table = connected_components(mask, connectivity)
    labels, table = remove_small(labels, table, min_voxels)
    k = len(table)
    proposals: list[InstanceMetadata] = []
    if k:
        sums = np.bincount(
            np.ravel(labels.data, order="F"),
            weights=np.ravel(prob.data, order="F").astype(np.float64),
            minlength=k + 1,
        )
        for comp in table:
            confidence = float(sums[comp.id] / comp.voxel_count)
            proposals.append(InstanceMetadata(comp.id, confidence, None))
    return labels, proposals
