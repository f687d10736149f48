"""3D connected components, component statistics and binary morphology.

Foreground connectivity defaults to 26 throughout the toolkit: fracture masks
are thin oblique shapes that 6-connectivity fragments. Every report records
the setting actually used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InputFaultError
from .volume_io import KIND_BINARY, KIND_LABELS, Volume

CONNECTIVITIES = (6, 26)
DEFAULT_CONNECTIVITY = 26


@dataclass(frozen=True)
class ComponentStats:
    """Statistics of one connected component (indices in voxel coordinates)."""

    id: int
    voxel_count: int
    bbox_min: tuple[int, int, int]
    bbox_max: tuple[int, int, int]
    centroid: tuple[float, float, float]


ComponentTable = list[ComponentStats]


def _require_binary(volume: Volume, argname: str = "volume") -> np.ndarray:
    if volume.kind != KIND_BINARY:
        raise InputFaultError(f"{argname} must be of binary kind, got {volume.kind!r}")
    return volume.data


def _check_connectivity(connectivity: int) -> int:
    if connectivity not in CONNECTIVITIES:
        raise InputFaultError(f"connectivity must be 6 or 26, got {connectivity}")
    return connectivity


def component_table(labels: np.ndarray, count: int) -> ComponentTable:
    """Build per-component stats for a label array with ids 1..count."""
    if count == 0:
        return []
    xs, ys, zs = np.nonzero(labels)
    ids = labels[xs, ys, zs].astype(np.int64)
    counts = np.bincount(ids, minlength=count + 1)[1:]
    order = np.argsort(ids, kind="stable")
    starts = np.zeros(count, dtype=np.int64)
    starts[1:] = np.cumsum(counts)[:-1]
    mins, maxs, sums = [], [], []
    for axis in (xs, ys, zs):
        sorted_axis = axis[order]
        mins.append(np.minimum.reduceat(sorted_axis, starts))
        maxs.append(np.maximum.reduceat(sorted_axis, starts))
        sums.append(np.add.reduceat(sorted_axis.astype(np.float64), starts))
    table = []
    for i in range(count):
        n = int(counts[i])
        table.append(
            ComponentStats(
                id=i + 1,
                voxel_count=n,
                bbox_min=(int(mins[0][i]), int(mins[1][i]), int(mins[2][i])),
                bbox_max=(int(maxs[0][i]), int(maxs[1][i]), int(maxs[2][i])),
                centroid=(sums[0][i] / n, sums[1][i] / n, sums[2][i] / n),
            )
        )
    return table


def connected_components(
    binary: Volume, connectivity: int = DEFAULT_CONNECTIVITY
) -> tuple[Volume, ComponentTable]:
    """Label foreground components; ids follow first-encounter scan order."""
    mask = _require_binary(binary, "binary")
    _check_connectivity(connectivity)
    labels, count = _kernels.label_components(mask, connectivity)
    table = component_table(labels, count)
    return Volume(labels, binary.spacing, KIND_LABELS), table


def remove_small(
    labels: Volume, table: ComponentTable, min_voxels: int
) -> tuple[Volume, ComponentTable]:
    """Drop components with fewer than ``min_voxels`` voxels.

    The boundary is inclusive: a component of exactly ``min_voxels`` voxels
    survives. Survivors are relabelled 1..K' preserving their original order.
    """
    if labels.kind != KIND_LABELS:
        raise InputFaultError(f"expected instance-label volume, got {labels.kind!r}")
    k = len(table)
    if sorted(c.id for c in table) != list(range(1, k + 1)) or int(
        labels.data.max(initial=0)
    ) != k:
        raise InputFaultError("label map and component table are inconsistent")
    lut = np.zeros(k + 1, dtype=np.int32)
    new_table: ComponentTable = []
    for comp in table:
        if comp.voxel_count >= min_voxels:
            new_id = len(new_table) + 1
            lut[comp.id] = new_id
            new_table.append(
                ComponentStats(new_id, comp.voxel_count, comp.bbox_min, comp.bbox_max,
                               comp.centroid)
            )
    return Volume(lut[labels.data], labels.spacing, KIND_LABELS), new_table


def dilate(binary: Volume, radius: int) -> Volume:
    """Dilate with a box structuring element of side 2*radius+1."""
    mask = _require_binary(binary, "binary")
    if radius < 0:
        raise InputFaultError(f"radius must be non-negative, got {radius}")
    return Volume(_kernels.dilate(mask, int(radius)), binary.spacing, KIND_BINARY)
