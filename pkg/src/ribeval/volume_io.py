"""Volume and instance-metadata I/O.

Two on-disk volume formats are supported:

* NIfTI-1 single-file (``.nii`` / ``.nii.gz``), read-only. Only the header
  fields the evaluation protocol needs are interpreted: ``dim``, ``pixdim``,
  ``datatype``, ``scl_slope``/``scl_inter``, ``vox_offset`` and ``magic``.
  Orientation and the affine beyond ``pixdim`` are deliberately ignored; the
  protocol compares masks voxelwise and requires prediction/GT pairs to share
  dims, so world-space registration never enters.
* A self-describing raw pair ``<name>.json`` + ``<name>.bin``: a JSON sidecar
  with dims/spacing/dtype/kind and a little-endian binary payload in
  x-fastest voxel order.

Instance metadata (confidence and class code per labelled instance) travels
in a CSV with header ``instance_id,confidence,class_code``; both value fields
may be empty.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import FormatError, InputFaultError

KIND_INTENSITY = "intensity-HU"
KIND_PROBABILITY = "probability"
KIND_BINARY = "binary"
KIND_LABELS = "instance-label"
VOLUME_KINDS = (KIND_INTENSITY, KIND_PROBABILITY, KIND_BINARY, KIND_LABELS)

CLASS_CODES = ("BK", "ND", "DP", "SG", "UN")
FRACTURE_CLASSES = ("BK", "ND", "DP", "SG")

# internal storage dtypes: floats bound memory at ~0.5 GB for a 512^3 scan,
# labels are int32, binary masks stay in single bytes
_KIND_DTYPE = {
    KIND_INTENSITY: np.float32,
    KIND_PROBABILITY: np.float32,
    KIND_BINARY: np.uint8,
    KIND_LABELS: np.int32,
}

_RAW_DTYPES = {"u8": np.uint8, "i16": np.int16, "f32": np.float32}
_KIND_RAW_DEFAULT = {
    KIND_INTENSITY: "f32",
    KIND_PROBABILITY: "f32",
    KIND_BINARY: "u8",
    KIND_LABELS: "i16",
}

_NIFTI_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4"}


@dataclass
class Volume:
    """A dense 3D scalar grid with voxel spacing.

    ``data`` is indexed ``[x, y, z]`` and normalized to Fortran order so the
    in-memory layout matches the x-fastest order of both file formats. A
    loaded Volume is immutable by convention and safe to share across
    threads.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    kind: str

    def __post_init__(self):
        if self.kind not in VOLUME_KINDS:
            raise InputFaultError(f"unknown volume kind {self.kind!r}")
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise InputFaultError(f"volume data must be 3D, got {arr.ndim}D")
        if any(d < 1 for d in arr.shape):
            raise InputFaultError(f"volume dims must be positive, got {arr.shape}")
        target = _KIND_DTYPE[self.kind]
        if np.issubdtype(target, np.integer) and not np.issubdtype(arr.dtype, np.integer):
            if arr.size and not np.array_equal(arr, np.trunc(arr)):
                raise InputFaultError(f"{self.kind} volume requires integer values")
        arr = np.asfortranarray(arr, dtype=target)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InputFaultError(f"spacing must be 3 positive reals, got {self.spacing}")
        self._check_values(arr)
        self.data = arr

    def _check_values(self, arr):
        if self.kind == KIND_PROBABILITY:
            lo, hi = float(arr.min()), float(arr.max())
            if lo < 0.0 or hi > 1.0:
                raise InputFaultError(f"probability values outside [0,1]: [{lo}, {hi}]")
        elif self.kind == KIND_BINARY:
            if int(arr.max(initial=0)) > 1:
                raise InputFaultError("binary volume has values outside {0,1}")
        elif self.kind == KIND_LABELS:
            if int(arr.min(initial=0)) < 0:
                raise InputFaultError("instance labels must be non-negative")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class InstanceMetadata:
    """One row of the per-instance sidecar table."""

    instance_id: int
    confidence: Optional[float] = None
    class_code: Optional[str] = None


def _read_maybe_gzip(path: Path) -> bytes:
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        return gzip.decompress(blob)
    return blob


def load_nifti(path: Union[str, Path], kind: str = KIND_INTENSITY) -> Volume:
    """Read a single-file NIfTI-1 volume (optionally gzip-compressed).

    ``kind`` is the caller's hint for the semantic type of the values;
    it defaults to CT intensities.
    """
    blob = _read_maybe_gzip(Path(path))
    if len(blob) < 348:
        raise FormatError(
            f"truncated NIfTI header: file has {len(blob)} bytes, header needs 348 "
            f"(fault at byte {len(blob)})"
        )
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"malformed NIfTI magic {magic!r} at byte 344")
    if magic == b"ni1\x00":
        raise FormatError("two-file NIfTI (.hdr/.img) is not supported (magic at byte 344)")
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr == 348:
        bo = "<"
    elif struct.unpack_from(">i", blob, 0)[0] == 348:
        bo = ">"
    else:
        raise FormatError(f"malformed NIfTI header: sizeof_hdr={sizeof_hdr} at byte 0")
    dim = struct.unpack_from(bo + "8h", blob, 40)
    if dim[0] != 3:
        raise FormatError(f"expected 3 spatial dimensions, header declares {dim[0]} at byte 40")
    nx, ny, nz = (int(d) for d in dim[1:4])
    if min(nx, ny, nz) < 1:
        raise FormatError(f"non-positive dimension in {dim[1:4]} at byte 40")
    (datatype,) = struct.unpack_from(bo + "h", blob, 70)
    code = _NIFTI_DTYPES.get(datatype)
    if code is None:
        raise FormatError(f"unsupported NIfTI datatype code {datatype} at byte 70")
    (bitpix,) = struct.unpack_from(bo + "h", blob, 72)
    expected_bits = np.dtype(code).itemsize * 8
    if bitpix != expected_bits:
        raise FormatError(
            f"bitpix {bitpix} contradicts datatype {datatype} "
            f"(expected {expected_bits}) at byte 72"
        )
    pixdim = struct.unpack_from(bo + "8f", blob, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise FormatError(f"non-positive pixdim {spacing} at byte 76")
    (vox_offset,) = struct.unpack_from(bo + "f", blob, 108)
    offset = int(vox_offset)
    if offset < 348:
        raise FormatError(f"vox_offset {vox_offset} points inside the header (byte 108)")
    slope, inter = struct.unpack_from(bo + "2f", blob, 112)
    nvox = nx * ny * nz
    dtype = np.dtype(bo + code)
    end = offset + nvox * dtype.itemsize
    if len(blob) < end:
        raise FormatError(f"truncated payload: file ends at byte {len(blob)}, need {end}")
    arr = np.frombuffer(blob, dtype=dtype, count=nvox, offset=offset)
    arr = arr.reshape((nx, ny, nz), order="F")
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        arr = arr * np.float64(slope) + np.float64(inter)
    return Volume(arr, spacing, kind)


def raw_paths(path: Union[str, Path]) -> tuple[Path, Path]:
    """Resolve a raw-format stem, ``.json`` or ``.bin`` path to the pair."""
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def _cast_payload(arr: np.ndarray, token: str) -> np.ndarray:
    target = _RAW_DTYPES[token]
    if arr.dtype == target:
        return arr
    if np.issubdtype(target, np.integer):
        info = np.iinfo(target)
        lo = float(arr.min(initial=0))
        hi = float(arr.max(initial=0))
        if lo < info.min or hi > info.max:
            raise InputFaultError(
                f"values [{lo}, {hi}] do not fit raw dtype {token!r} ({info.min}..{info.max})"
            )
        if not np.issubdtype(arr.dtype, np.integer):
            if arr.size and not np.array_equal(arr, np.trunc(arr)):
                raise InputFaultError(f"non-integer values cannot be stored as {token!r}")
    return arr.astype(target)


def save_raw(volume: Volume, path: Union[str, Path], dtype: Optional[str] = None,
             manifest: Optional[dict] = None) -> None:
    """Write ``<name>.json`` + ``<name>.bin``; payload is little-endian.

    ``dtype`` overrides the kind-based payload dtype (one of u8/i16/f32).
    """
    token = dtype or _KIND_RAW_DEFAULT[volume.kind]
    if token not in _RAW_DTYPES:
        raise InputFaultError(f"unknown raw dtype {token!r}")
    json_path, bin_path = raw_paths(path)
    payload = _cast_payload(volume.data, token)
    sidecar = {
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "dtype": token,
        "kind": volume.kind,
    }
    if manifest is not None:
        sidecar["manifest"] = manifest
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    flat = np.ravel(payload, order="F").astype(payload.dtype.newbyteorder("<"), copy=False)
    bin_path.write_bytes(flat.tobytes())


def load_raw(path: Union[str, Path]) -> Volume:
    """Read a raw-format volume pair back into a :class:`Volume`."""
    json_path, bin_path = raw_paths(path)
    try:
        sidecar = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable raw sidecar {json_path}: {exc}") from exc
    try:
        dims = tuple(int(d) for d in sidecar["dims"])
        spacing = tuple(float(s) for s in sidecar["spacing"])
        token = sidecar["dtype"]
        kind = sidecar["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"raw sidecar {json_path} missing required field: {exc}") from exc
    if token not in _RAW_DTYPES:
        raise InputFaultError(f"unknown raw dtype {token!r} in {json_path}")
    if len(dims) != 3:
        raise InputFaultError(f"raw sidecar dims must have 3 entries, got {dims}")
    dtype = np.dtype(_RAW_DTYPES[token]).newbyteorder("<")
    blob = bin_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(blob) != expected:
        raise InputFaultError(
            f"payload size mismatch for {bin_path}: sidecar implies {expected} bytes, "
            f"file has {len(blob)}"
        )
    arr = np.frombuffer(blob, dtype=dtype).reshape(dims, order="F")
    return Volume(arr, spacing, kind)


def load_metadata(path: Union[str, Path]) -> list[InstanceMetadata]:
    """Parse an instance-metadata CSV; class codes are case-insensitive."""
    rows: list[InstanceMetadata] = []
    seen: set[int] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "instance_id",
            "confidence",
            "class_code",
        ]:
            raise FormatError(
                f"{path}: expected header 'instance_id,confidence,class_code', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                instance_id = int(row[0])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad instance_id {row[0]!r}") from exc
            if instance_id <= 0:
                raise InputFaultError(f"{path}:{lineno}: instance_id must be positive")
            if instance_id in seen:
                raise InputFaultError(f"{path}:{lineno}: duplicate instance_id {instance_id}")
            seen.add(instance_id)
            conf_text = row[1].strip()
            confidence = None
            if conf_text:
                try:
                    confidence = float(conf_text)
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad confidence {conf_text!r}") from exc
                if not 0.0 <= confidence <= 1.0:
                    raise InputFaultError(
                        f"{path}:{lineno}: confidence {confidence} outside [0,1]"
                    )
            class_text = row[2].strip()
            class_code = None
            if class_text:
                class_code = class_text.upper()
                if class_code not in CLASS_CODES:
                    raise InputFaultError(f"{path}:{lineno}: unknown class token {row[2]!r}")
            rows.append(InstanceMetadata(instance_id, confidence, class_code))
    return rows


def save_metadata(rows: Iterable[InstanceMetadata], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "confidence", "class_code"])
        for row in rows:
            conf = "" if row.confidence is None else repr(float(row.confidence))
            writer.writerow([row.instance_id, conf, row.class_code or ""])


def check_consistency(labels: Union[Volume, np.ndarray],
                      metadata: Sequence[InstanceMetadata]) -> None:
    """Reject (label map, metadata) pairs whose instance-id sets differ."""
    arr = labels.data if isinstance(labels, Volume) else np.asarray(labels)
    label_ids = set(int(v) for v in np.unique(arr) if v > 0)
    meta_ids = set(r.instance_id for r in metadata)
    if label_ids != meta_ids:
        missing = sorted(label_ids - meta_ids)
        extra = sorted(meta_ids - label_ids)
        raise InputFaultError(
            f"metadata/label id mismatch: labels without metadata {missing}, "
            f"metadata without labels {extra}"
        )


def confidence_map(metadata: Sequence[InstanceMetadata]) -> Mapping[int, float]:
    """Extract {instance_id: confidence}; every row must carry a confidence."""
    out = {}
    for row in metadata:
        if row.confidence is None:
            raise InputFaultError(f"instance {row.instance_id} has no confidence")
        out[row.instance_id] = row.confidence
    return out


def class_map(metadata: Sequence[InstanceMetadata], allow_unclassified: bool) -> Mapping[int, str]:
    """Extract {instance_id: class_code}; UN only where explicitly allowed."""
    out = {}
    for row in metadata:
        if row.class_code is None:
            raise InputFaultError(f"instance {row.instance_id} has no class code")
        if row.class_code == "UN" and not allow_unclassified:
            raise InputFaultError(f"instance {row.instance_id} is classified UN")
        out[row.instance_id] = row.class_code
    return out
