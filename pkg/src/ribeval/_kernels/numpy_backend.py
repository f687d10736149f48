"""Pure numpy/scipy kernel implementations (no JIT).

Outputs are bit-identical to the numba backend; see tests/test_labeling.py
for the cross-backend equality checks.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

# bincount chunk size; bounds the int64 key temporary to ~32 MB
_CHUNK = 1 << 22


def _flat_pair(a, b):
    # identical raveling order for both arrays so voxel pairs stay aligned
    if a.flags.c_contiguous and b.flags.c_contiguous:
        return a.reshape(-1), b.reshape(-1)
    return np.ravel(a, order="F"), np.ravel(b, order="F")


def label_components(mask, connectivity):
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    else:
        structure = ndimage.generate_binary_structure(3, 1)
    raw, n = ndimage.label(mask, structure=structure, output=np.int32)
    if n == 0:
        return raw, 0
    # scipy assigns ids in C-scan order; remap to first encounter along the
    # x-fastest (Fortran) scan so both backends agree exactly
    flat = np.ravel(raw, order="F")
    values, first = np.unique(flat, return_index=True)
    keep = values != 0
    values, first = values[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(n + 1, dtype=np.int32)
    lut[values[order]] = np.arange(1, values.size + 1, dtype=np.int32)
    return lut[raw], int(values.size)


def pair_counts(a, b, na, nb):
    af, bf = _flat_pair(a, b)
    width = nb + 1
    out = np.zeros((na + 1) * width, dtype=np.int64)
    for lo in range(0, af.size, _CHUNK):
        hi = lo + _CHUNK
        key = af[lo:hi].astype(np.int64) * width
        key += bf[lo:hi]
        out += np.bincount(key, minlength=out.size)
    return out.reshape(na + 1, width)


def dilate(mask, radius):
    out = mask.astype(bool)
    if radius == 0:
        return out.astype(np.uint8)
    for axis in range(3):
        acc = out.copy()
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        for shift in range(1, radius + 1):
            src[axis] = slice(shift, None)
            dst[axis] = slice(None, -shift)
            acc[tuple(dst)] |= out[tuple(src)]
            src[axis] = slice(None, -shift)
            dst[axis] = slice(shift, None)
            acc[tuple(dst)] |= out[tuple(src)]
        out = acc
    return out.astype(np.uint8)
