"""Point-to-voxel feature fusion: pooled voxelization, per-cell channel
transform and additive fusion, with the matching backward pass.

Point features falling in the same cell of an r^3 grid are reduced to one
feature (average by default, max available), the pooled grid goes through a
1x1x1 channel transform (a C_v x C_p matrix plus bias) and is added onto the
voxel feature grid. All arithmetic is float64 internally; float32 inputs are
upcast so the finite-difference verification has the headroom it needs.

Summation order is fixed (points sorted by cell, then by point content) so
repeated runs are bitwise reproducible and the pooled grid is bitwise
invariant to any permutation of the input points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

REDUCTIONS = ("mean", "max")


@dataclass
class PointFeatures:
    """Per-point features at window-local coordinates."""

    coords: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        features = np.asarray(self.features, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError(f"coords must be (M, 3), got {coords.shape}")
        if features.ndim != 2 or features.shape[0] != coords.shape[0]:
            raise ValueError(
                f"features must be (M, C) with M={coords.shape[0]}, got {features.shape}"
            )
        if not (np.isfinite(coords).all() and np.isfinite(features).all()):
            raise ValueError("coords and features must be finite")
        self.coords = coords
        self.features = features

    @property
    def count(self) -> int:
        return self.coords.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass
class FeatureGrid:
    """C x r x r x r feature values plus per-cell point occupancy.

    ``occupancy`` is only meaningful for pooled grids; dense grids carry
    None. In a pooled grid, cells with zero occupancy hold all-zero values.
    """

    values: np.ndarray
    occupancy: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4 or len(set(values.shape[1:])) != 1:
            raise ValueError(f"values must be (C, r, r, r), got {values.shape}")
        self.values = values
        if self.occupancy is not None:
            occ = np.asarray(self.occupancy, dtype=np.int64)
            if occ.shape != values.shape[1:]:
                raise ValueError(
                    f"occupancy shape {occ.shape} does not match grid {values.shape[1:]}"
                )
            self.occupancy = occ

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def resolution(self) -> int:
        return self.values.shape[1]


@dataclass
class ChannelTransform:
    """1x1x1 convolution: per-cell linear map from C_p to C_v channels."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError(f"weights must be (C_v, C_p), got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"bias must be ({weights.shape[0]},), got {bias.shape}")
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValueError("transform entries must be finite")
        self.weights = weights
        self.bias = bias


@dataclass
class FusionCache:
    """Forward-pass state needed by the backward pass."""

    cell_ids: np.ndarray
    occupancy: np.ndarray
    pooled: FeatureGrid
    transform: ChannelTransform
    reduction: str
    resolution: int
    point_count: int
    argmax: Optional[np.ndarray] = None  # (C_p, r^3) point index per cell, -1 empty


@dataclass
class FusionGradients:
    f_v: np.ndarray
    features: np.ndarray
    weights: np.ndarray
    bias: np.ndarray


def _bin_points(pf: PointFeatures, resolution: int, extent: float) -> np.ndarray:
    if resolution < 1:
        raise ValueError(f"resolution must be positive, got {resolution}")
    if extent <= 0:
        raise ValueError(f"extent must be positive, got {extent}")
    if pf.count and ((pf.coords < 0).any() or (pf.coords >= extent).any()):
        raise ValueError(f"point coordinates outside the window [0, {extent})")
    cells = np.floor(pf.coords * (resolution / extent)).astype(np.int64)
    # guard against coord*r/extent rounding up to r for coords just below extent
    np.clip(cells, 0, resolution - 1, out=cells)
    return (cells[:, 0] * resolution + cells[:, 1]) * resolution + cells[:, 2]


def voxelize(
    pf: PointFeatures, resolution: int, extent: float, reduction: str = "mean"
) -> FeatureGrid:
    """Pool point features into an r^3 grid; empty cells stay zero."""
    grid, _ = _voxelize_cached(pf, resolution, extent, reduction)
    return grid


def _canonical_order(cell_ids: np.ndarray, pf: PointFeatures) -> np.ndarray:
    """Sort by cell, then point content, so per-cell accumulation order is
    identical for any permutation of the input points (bitwise-stable sums)."""
    keys = [pf.features[:, c] for c in range(pf.channels - 1, -1, -1)]
    keys += [pf.coords[:, 2], pf.coords[:, 1], pf.coords[:, 0], cell_ids]
    return np.lexsort(keys)


def _voxelize_cached(pf, resolution, extent, reduction):
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    cell_ids = _bin_points(pf, resolution, extent)
    n_cells = resolution**3
    channels = pf.channels
    occ_flat = np.bincount(cell_ids, minlength=n_cells)
    order = _canonical_order(cell_ids, pf)
    argmax = None
    if reduction == "mean":
        sums = np.zeros((n_cells, channels), dtype=np.float64)
        np.add.at(sums, cell_ids[order], pf.features[order])
        values = np.divide(
            sums, occ_flat[:, None], out=np.zeros_like(sums), where=occ_flat[:, None] > 0
        )
    else:
        values = np.zeros((n_cells, channels), dtype=np.float64)
        argmax = np.full((channels, n_cells), -1, dtype=np.int64)
        start = 0
        sorted_cells = cell_ids[order]
        while start < order.size:
            cell = sorted_cells[start]
            end = start
            while end < order.size and sorted_cells[end] == cell:
                end += 1
            group = order[start:end]
            feats = pf.features[group]
            local = np.argmax(feats, axis=0)
            values[cell] = feats[local, np.arange(channels)]
            argmax[:, cell] = group[local]
            start = end
    grid_values = values.T.reshape(channels, resolution, resolution, resolution)
    occupancy = occ_flat.reshape(resolution, resolution, resolution)
    grid = FeatureGrid(grid_values, occupancy)
    cache = FusionCache(
        cell_ids=cell_ids,
        occupancy=occ_flat,
        pooled=grid,
        transform=None,  # filled by fused_forward
        reduction=reduction,
        resolution=resolution,
        point_count=pf.count,
        argmax=argmax,
    )
    return grid, cache


def fuse(f_v: FeatureGrid, pooled: FeatureGrid, transform: ChannelTransform) -> FeatureGrid:
    """Per cell: f_v + weights @ pooled + bias."""
    if f_v.resolution != pooled.resolution:
        raise ValueError(
            f"grid resolutions differ: {f_v.resolution} vs {pooled.resolution}"
        )
    c_v, c_p = transform.weights.shape
    if f_v.channels != c_v or pooled.channels != c_p:
        raise ValueError(
            f"transform is {c_v}x{c_p} but grids have {f_v.channels}/{pooled.channels} channels"
        )
    out = f_v.values + np.einsum("ij,jxyz->ixyz", transform.weights, pooled.values)
    out += transform.bias[:, None, None, None]
    return FeatureGrid(out, None)


def fused_forward(
    f_v: FeatureGrid,
    pf: PointFeatures,
    transform: ChannelTransform,
    extent: float,
    reduction: str = "mean",
) -> tuple[FeatureGrid, FusionCache]:
    """Voxelize + transform + add, returning the cache for the backward pass."""
    pooled, cache = _voxelize_cached(pf, f_v.resolution, extent, reduction)
    cache.transform = transform
    return fuse(f_v, pooled, transform), cache


def fusion_backward(
    grad_out: Union[FeatureGrid, np.ndarray], cache: FusionCache
) -> FusionGradients:
    """Gradients of the fused output w.r.t. every forward input.

    With average pooling, a point in a cell of occupancy k receives
    (weights^T grad_out at its cell) / k; with max pooling the per-channel
    argmax point takes the whole cell gradient. Points never reach empty
    cells, so no gradient is lost.
    """
    if cache is None or cache.transform is None:
        raise ValueError("backward needs the cache produced by fused_forward")
    g = np.asarray(grad_out.values if isinstance(grad_out, FeatureGrid) else grad_out,
                   dtype=np.float64)
    r = cache.resolution
    c_v, c_p = cache.transform.weights.shape
    if g.shape != (c_v, r, r, r):
        raise ValueError(f"grad_out shape {g.shape} does not match ({c_v}, {r}, {r}, {r})")
    grad_f_v = g.copy()
    grad_weights = np.einsum("ixyz,jxyz->ij", g, cache.pooled.values)
    grad_bias = g.sum(axis=(1, 2, 3))
    grad_pooled = np.einsum("ij,ixyz->jxyz", cache.transform.weights, g)
    grad_pooled_flat = grad_pooled.reshape(c_p, r**3)
    grad_features = np.zeros((cache.point_count, c_p), dtype=np.float64)
    if cache.point_count:
        if cache.reduction == "mean":
            occ = cache.occupancy[cache.cell_ids].astype(np.float64)
            grad_features = (grad_pooled_flat[:, cache.cell_ids] / occ).T
        else:
            for j in range(c_p):
                owners = cache.argmax[j]
                nonempty = owners >= 0
                grad_features[owners[nonempty], j] = grad_pooled_flat[j, nonempty]
    return FusionGradients(grad_f_v, grad_features, grad_weights, grad_bias)


def gradient_check(
    seed: int,
    point_count: int = 12,
    resolution: int = 3,
    c_p: int = 3,
    c_v: int = 3,
    extent: float = 2.0,
    step: float = 1e-4,
    reduction: str = "mean",
) -> dict:
    """Compare analytic gradients against central finite differences.

    The objective is <grad_out, output> for a fixed random grad_out; every
    entry of every input is perturbed by +-step. Returns the worst relative
    error and the number of entries checked.
    """
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, extent, size=(point_count, 3))
    features = rng.normal(size=(point_count, c_p))
    f_v_values = rng.normal(size=(c_v, resolution, resolution, resolution))
    weights = rng.normal(size=(c_v, c_p))
    bias = rng.normal(size=c_v)
    grad_out = rng.normal(size=(c_v, resolution, resolution, resolution))

    def objective(f_v_v, feats, w, b):
        out, _ = fused_forward(
            FeatureGrid(f_v_v),
            PointFeatures(coords, feats),
            ChannelTransform(w, b),
            extent,
            reduction,
        )
        return float(np.sum(grad_out * out.values))

    out, cache = fused_forward(
        FeatureGrid(f_v_values),
        PointFeatures(coords, features),
        ChannelTransform(weights, bias),
        extent,
        reduction,
    )
    grads = fusion_backward(grad_out, cache)

    max_rel = 0.0
    checked = 0
    pairs = [
        (f_v_values, grads.f_v),
        (features, grads.features),
        (weights, grads.weights),
        (bias, grads.bias),
    ]
    for tensor, grad in pairs:
        flat = tensor.reshape(-1)
        grad_flat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = objective(f_v_values, features, weights, bias)
            flat[idx] = orig - step
            lo = objective(f_v_values, features, weights, bias)
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * step)
            rel = abs(grad_flat[idx] - fd) / max(abs(grad_flat[idx]), abs(fd), 1e-8)
            if rel > max_rel:
                max_rel = rel
            checked += 1
    return {
        "seed": seed,
        "reduction": reduction,
        "entries_checked": checked,
        "max_rel_error": max_rel,
        "output_norm": float(np.linalg.norm(out.values)),
    }
