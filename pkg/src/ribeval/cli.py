"""Batch command-line interface with machine-readable outputs.

Commands exit 0 on success, 2 on any malformed input (the message names the
scan and fault) and 1 on internal errors. Every JSON report embeds a run
manifest: the resolved parameters, sha-256 digests of the inputs, the tool
version and the wall-clock duration. Scan pairs are matched by filename
stem: ``<scan>_pred.(nii.gz|nii|json+bin)`` plus ``<scan>_pred.csv`` in the
prediction directory, ``<scan>_gt.*`` likewise in the ground-truth
directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cls_eval import ConfusionMatrix, F1_MODES, build_confusion, f1_scores
from .detect_eval import (
    DEFAULT_FP_LEVELS,
    DEFAULT_IOU_THRESHOLD,
    MatchResult,
    froc,
    match_proposals,
    seg_metric_summary,
)
from .errors import EmptySummaryError, InputFaultError
from .fusion import (
    ChannelTransform,
    FeatureGrid,
    PointFeatures,
    fused_forward,
    fusion_backward,
    gradient_check,
)
from .labeling import CONNECTIVITIES, DEFAULT_CONNECTIVITY
from .pipeline import (
    DEFAULT_BIN_THRESHOLD,
    DEFAULT_BONE_HU,
    DEFAULT_MIN_VOXELS,
    DEFAULT_POINT_COUNT,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW_SIZE,
    bone_binarize,
    extract_proposals,
    sample_points,
    tile_windows,
    windows_from_mask,
)
from .volume_io import (
    KIND_BINARY,
    KIND_INTENSITY,
    KIND_LABELS,
    KIND_PROBABILITY,
    Volume,
    check_consistency,
    class_map,
    confidence_map,
    load_metadata,
    load_nifti,
    load_raw,
    raw_paths,
    save_metadata,
    save_raw,
)

_VOLUME_SUFFIXES = (".json", ".nii.gz", ".nii")


class _Manifest:
    """Collects inputs and parameters while a command runs."""

    def __init__(self, command: str, parameters: dict):
        self.command = command
        self.parameters = parameters
        self.inputs: dict[str, str] = {}
        self._start = time.perf_counter()

    def add_input(self, path: Path) -> None:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.inputs[str(path)] = digest

    def add_volume_input(self, path: Path) -> None:
        if path.suffix == ".json":
            json_path, bin_path = raw_paths(path)
            self.add_input(json_path)
            self.add_input(bin_path)
        else:
            self.add_input(path)

    def build(self) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "parameters": self.parameters,
            "inputs": dict(sorted(self.inputs.items())),
            "duration_seconds": time.perf_counter() - self._start,
        }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _parse_levels(text: str) -> list[float]:
    try:
        levels = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise InputFaultError(f"bad --fp-levels {text!r}: {exc}") from exc
    if not levels or any(lv < 0 for lv in levels):
        raise InputFaultError(f"--fp-levels must be non-negative reals, got {text!r}")
    return levels


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputFaultError(f"--dims needs 3 comma-separated integers, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InputFaultError(f"bad --dims {text!r}: {exc}") from exc
    return dims


def _find_scans(dirpath: Path, role: str) -> dict[str, Path]:
    if not dirpath.is_dir():
        raise InputFaultError(f"{dirpath} is not a directory")
    found: dict[str, Path] = {}
    for entry in sorted(dirpath.iterdir()):
        name = entry.name
        for suffix in _VOLUME_SUFFIXES:
            tail = f"_{role}{suffix}"
            if name.endswith(tail):
                stem = name[: -len(tail)]
                if stem in found:
                    raise InputFaultError(
                        f"scan {stem}: ambiguous {role} volumes {found[stem].name} and {name}"
                    )
                found[stem] = entry
                break
    return found


def _load_labels(path: Path) -> Volume:
    if path.suffix == ".json":
        volume = load_raw(path)
        if volume.kind != KIND_LABELS:
            raise InputFaultError(f"{path}: expected instance-label volume, got {volume.kind!r}")
        return volume
    return load_nifti(path, kind=KIND_LABELS)


def _load_scan(
    stem: str,
    role: str,
    dirpath: Path,
    volume_path: Path,
    manifest: _Manifest,
) -> tuple[Volume, list]:
    csv_path = dirpath / f"{stem}_{role}.csv"
    if not csv_path.is_file():
        raise InputFaultError(f"scan {stem}: missing metadata CSV {csv_path}")
    manifest.add_volume_input(volume_path)
    manifest.add_input(csv_path)
    try:
        volume = _load_labels(volume_path)
        metadata = load_metadata(csv_path)
        check_consistency(volume, metadata)
    except InputFaultError as exc:
        raise InputFaultError(f"scan {stem}: {exc}") from exc
    return volume, metadata


def _paired_stems(pred_dir: Path, gt_dir: Path) -> list[tuple[str, Path, Path]]:
    preds = _find_scans(pred_dir, "pred")
    gts = _find_scans(gt_dir, "gt")
    if not preds:
        raise InputFaultError(f"no '*_pred' volumes found in {pred_dir}")
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise InputFaultError(
            f"unmatched scan stems: prediction-only {only_pred}, ground-truth-only {only_gt}"
        )
    return [(stem, preds[stem], gts[stem]) for stem in sorted(preds)]


def _resolve_jobs(args) -> int:
    if args.jobs is not None:
        jobs = args.jobs
    else:
        env = os.environ.get("RIBEVAL_JOBS", "")
        try:
            jobs = int(env) if env else 1
        except ValueError as exc:
            raise InputFaultError(f"bad RIBEVAL_JOBS={env!r}") from exc
    if jobs < 1:
        raise InputFaultError(f"--jobs must be >= 1, got {jobs}")
    return jobs


def _match_all(args, manifest: _Manifest, need_classes: bool):
    pairs = _paired_stems(Path(args.pred_dir), Path(args.gt_dir))
    jobs = _resolve_jobs(args)

    def work(item):
        stem, pred_path, gt_path = item
        pred_vol, pred_meta = _load_scan(stem, "pred", Path(args.pred_dir), pred_path, manifest)
        gt_vol, gt_meta = _load_scan(stem, "gt", Path(args.gt_dir), gt_path, manifest)
        if pred_vol.dims != gt_vol.dims:
            raise InputFaultError(
                f"scan {stem}: dims mismatch pred {pred_vol.dims} vs gt {gt_vol.dims}"
            )
        try:
            confidences = confidence_map(pred_meta)
            gt_classes = None
            pred_classes = None
            if need_classes:
                gt_classes = class_map(gt_meta, allow_unclassified=True)
                pred_classes = class_map(pred_meta, allow_unclassified=False)
            result = match_proposals(
                pred_vol,
                gt_vol,
                confidences,
                iou_threshold=args.iou_threshold,
                scan_id=stem,
                gt_classes=gt_classes,
            )
        except InputFaultError as exc:
            raise InputFaultError(f"scan {stem}: {exc}") from exc
        return stem, result, pred_classes, gt_classes

    if jobs == 1:
        outcomes = [work(item) for item in pairs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, pairs))
    outcomes.sort(key=lambda item: item[0])
    return outcomes


def _per_scan_rows(results: list[MatchResult]) -> list[dict]:
    rows = []
    for r in results:
        matched = [p for p in r.proposals if p.matched_gt_id is not None]
        hit_gts = sum(1 for g in r.gt_ids if r.hit_map.get(g))
        duplicates = sum(max(0, len(h) - 1) for h in r.hit_map.values())
        ious = [p.iou for p in r.proposals]
        rows.append(
            {
                "scan": r.scan_id,
                "n_gt": len(r.gt_ids),
                "n_proposals": len(r.proposals),
                "n_matched": len(matched),
                "n_fp_candidates": len(r.proposals) - len(matched),
                "n_missed_gt": len(r.gt_ids) - hit_gts,
                "n_duplicate_hits": duplicates,
                "mean_iou": sum(ious) / len(ious) if ious else None,
            }
        )
    return rows


def cmd_eval_det(args) -> int:
    params = {
        "pred_dir": str(args.pred_dir),
        "gt_dir": str(args.gt_dir),
        "iou_threshold": args.iou_threshold,
        "fp_levels": _parse_levels(args.fp_levels),
        "connectivity": args.connectivity,
        "jobs": _resolve_jobs(args),
    }
    manifest = _Manifest("eval-det", params)
    outcomes = _match_all(args, manifest, need_classes=False)
    results = [r for _, r, _, _ in outcomes]
    curve = froc(results, params["fp_levels"])
    mean_iou_incl, mean_dice_incl, _ = seg_metric_summary(results, include_fp=True)
    try:
        mean_iou_excl, mean_dice_excl, _ = seg_metric_summary(results, include_fp=False)
    except EmptySummaryError:
        mean_iou_excl = mean_dice_excl = None
    report = {
        "iou_threshold": args.iou_threshold,
        "connectivity": args.connectivity,
        "fp_levels": params["fp_levels"],
        "level_sensitivities": {
            f"{level:g}": sens for level, sens in curve.level_sensitivities.items()
        },
        "avg_sensitivity": curve.avg_sensitivity,
        "max_sensitivity": curve.max_sensitivity,
        "avg_fp": curve.avg_fp_total,
        "mean_iou_incl_fp": mean_iou_incl,
        "mean_dice_incl_fp": mean_dice_incl,
        "mean_iou_excl_fp": mean_iou_excl,
        "mean_dice_excl_fp": mean_dice_excl,
        "per_scan": _per_scan_rows(results),
        "manifest": manifest.build(),
    }
    out_dir = Path(args.out)
    _write_json(out_dir / "report.json", report)
    csv_lines = ["avg_fp,sensitivity"]
    csv_lines += [f"{fp!r},{sens!r}" for fp, sens in curve.points]
    (out_dir / "froc.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'report.json'} and {out_dir / 'froc.csv'}")
    return 0


def cmd_eval_cls(args) -> int:
    params = {
        "pred_dir": str(args.pred_dir),
        "gt_dir": str(args.gt_dir),
        "iou_threshold": args.iou_threshold,
        "conf_threshold": args.conf_threshold,
        "connectivity": args.connectivity,
        "jobs": _resolve_jobs(args),
    }
    if not 0.0 <= args.conf_threshold <= 1.0:
        raise InputFaultError(f"--conf-threshold must be in [0,1], got {args.conf_threshold}")
    manifest = _Manifest("eval-cls", params)
    outcomes = _match_all(args, manifest, need_classes=True)
    total = ConfusionMatrix.zeros()
    for stem, result, pred_classes, gt_classes in outcomes:
        try:
            total = total + build_confusion(result, pred_classes, gt_classes,
                                            conf_threshold=args.conf_threshold)
        except InputFaultError as exc:
            raise InputFaultError(f"scan {stem}: {exc}") from exc
    report = {
        "conf_threshold": args.conf_threshold,
        "iou_threshold": args.iou_threshold,
        "connectivity": args.connectivity,
        "matrix": total.to_json_dict(),
        "f1": {mode: f1_scores(total, mode) for mode in F1_MODES},
        "manifest": manifest.build(),
    }
    out_dir = Path(args.out)
    _write_json(out_dir / "report.json", report)
    print(f"wrote {out_dir / 'report.json'}")
    return 0


def cmd_pipeline(args) -> int:
    params = {
        "prob_volume": str(args.prob_volume),
        "bin_threshold": args.bin_threshold,
        "min_voxels": args.min_voxels,
        "exclusion": str(args.exclusion) if args.exclusion else None,
        "connectivity": args.connectivity,
    }
    manifest = _Manifest("pipeline", params)
    prob_path = Path(args.prob_volume)
    manifest.add_volume_input(prob_path)
    if prob_path.suffix == ".json":
        prob = load_raw(prob_path)
        if prob.kind != KIND_PROBABILITY:
            raise InputFaultError(f"{prob_path}: expected probability volume, got {prob.kind!r}")
    else:
        prob = load_nifti(prob_path, kind=KIND_PROBABILITY)
    exclusion = None
    if args.exclusion:
        excl_path = Path(args.exclusion)
        manifest.add_volume_input(excl_path)
        if excl_path.suffix == ".json":
            exclusion = load_raw(excl_path)
        else:
            exclusion = load_nifti(excl_path, kind=KIND_BINARY)
    labels, proposals = extract_proposals(
        prob,
        bin_threshold=args.bin_threshold,
        min_voxels=args.min_voxels,
        exclusion=exclusion,
        connectivity=args.connectivity,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_raw(labels, out_dir / "proposals.json", manifest=manifest.build())
    save_metadata(proposals, out_dir / "proposals.csv")
    print(f"wrote {len(proposals)} proposals to {out_dir}")
    return 0


def cmd_points(args) -> int:
    params = {
        "volume": str(args.volume),
        "hu_threshold": args.hu_threshold,
        "n": args.n,
        "seed": args.seed,
    }
    manifest = _Manifest("points", params)
    path = Path(args.volume)
    manifest.add_volume_input(path)
    volume = load_raw(path) if path.suffix == ".json" else load_nifti(path, kind=KIND_INTENSITY)
    if volume.kind == KIND_INTENSITY:
        binary = bone_binarize(volume, threshold_hu=args.hu_threshold)
    elif volume.kind == KIND_BINARY:
        binary = volume
    else:
        raise InputFaultError(
            f"{path}: points need an intensity-HU or binary volume, got {volume.kind!r}"
        )
    cloud = sample_points(binary, n=args.n, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["x,y,z,ix,iy,iz"]
    for coord, index in zip(cloud.coords, cloud.source_indices):
        x, y, z = (repr(float(c)) for c in coord)
        lines.append(f"{x},{y},{z},{int(index[0])},{int(index[1])},{int(index[2])}")
    (out_dir / "points.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out_dir / "points_manifest.json", {"manifest": manifest.build()})
    print(f"wrote {cloud.coords.shape[0]} points to {out_dir / 'points.csv'}")
    return 0


def cmd_tile(args) -> int:
    if (args.dims is None) == (args.mask is None):
        raise InputFaultError("tile needs exactly one of --dims or --mask")
    params = {
        "dims": args.dims,
        "mask": str(args.mask) if args.mask else None,
        "window": args.window,
        "stride": args.stride,
    }
    manifest = _Manifest("tile", params)
    if args.dims is not None:
        dims = _parse_dims(args.dims)
        plan = tile_windows(dims, window=args.window, stride=args.stride)
        mode = "grid"
    else:
        mask_path = Path(args.mask)
        manifest.add_volume_input(mask_path)
        mask = load_raw(mask_path) if mask_path.suffix == ".json" else load_nifti(
            mask_path, kind=KIND_BINARY
        )
        plan = windows_from_mask(mask, window=args.window)
        dims = mask.dims
        mode = "mask"
    payload = {
        "window_size": plan.window_size,
        "axis_sizes": list(plan.axis_sizes),
        "origins": [list(o) for o in plan.origins],
        "clamped": plan.clamped,
        "mode": mode,
        "dims": list(dims),
        "stride": args.stride if mode == "grid" else None,
        "manifest": manifest.build(),
    }
    out_dir = Path(args.out)
    _write_json(out_dir / "windows.json", payload)
    print(f"wrote {len(plan.origins)} windows to {out_dir / 'windows.json'}")
    return 0


def cmd_fuse_check(args) -> int:
    params = {"trials": args.trials, "seed": args.seed, "tolerance": args.tolerance}
    if args.trials < 1:
        raise InputFaultError(f"--trials must be >= 1, got {args.trials}")
    manifest = _Manifest("fuse-check", params)
    rng = np.random.default_rng(args.seed)
    per_trial = []
    failures = []
    worst = 0.0
    for i in range(args.trials):
        seed = int(rng.integers(0, 2**31 - 1))
        result = gradient_check(
            seed,
            point_count=int(rng.integers(1, 21)),
            resolution=int(rng.integers(1, 4)),
            c_p=int(rng.integers(1, 4)),
            c_v=int(rng.integers(1, 4)),
        )
        per_trial.append(
            {
                "seed": seed,
                "max_rel_error": result["max_rel_error"],
                "entries_checked": result["entries_checked"],
            }
        )
        worst = max(worst, result["max_rel_error"])
        if result["max_rel_error"] > args.tolerance:
            failures.append(i)
    report = {
        "tolerance": args.tolerance,
        "trials": args.trials,
        "max_rel_error": worst,
        "failures": failures,
        "passed": not failures,
        "per_trial": per_trial,
        "manifest": manifest.build(),
    }
    out_dir = Path(args.out)
    _write_json(out_dir / "fuse_check.json", report)
    print(f"gradient check: max relative error {worst:.3e} over {args.trials} trials")
    return 0 if not failures else 1


def _run_fuse_spec(spec: dict) -> dict:
    try:
        pf = PointFeatures(np.asarray(spec["coords"], dtype=np.float64),
                           np.asarray(spec["features"], dtype=np.float64))
        f_v = FeatureGrid(np.asarray(spec["f_v"], dtype=np.float64))
        transform = ChannelTransform(np.asarray(spec["weights"], dtype=np.float64),
                                     np.asarray(spec["bias"], dtype=np.float64))
        extent = float(spec["extent"])
        reduction = spec.get("reduction", "mean")
    except KeyError as exc:
        raise InputFaultError(f"fuse spec missing field {exc}") from exc
    fused, cache = fused_forward(f_v, pf, transform, extent, reduction)
    payload = {
        "pooled": {
            "values": cache.pooled.values.tolist(),
            "occupancy": cache.pooled.occupancy.tolist(),
        },
        "fused": fused.values.tolist(),
    }
    if "grad_out" in spec:
        grads = fusion_backward(np.asarray(spec["grad_out"], dtype=np.float64), cache)
        payload["gradients"] = {
            "f_v": grads.f_v.tolist(),
            "features": grads.features.tolist(),
            "weights": grads.weights.tolist(),
            "bias": grads.bias.tolist(),
        }
    return payload


def cmd_fuse_apply(args) -> int:
    manifest = _Manifest("fuse-apply", {"spec": str(args.spec)})
    spec_path = Path(args.spec)
    manifest.add_input(spec_path)
    try:
        spec = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputFaultError(f"unparseable fuse spec {spec_path}: {exc}") from exc
    if "instances" in spec:
        payload = {"results": [_run_fuse_spec(inst) for inst in spec["instances"]]}
    else:
        payload = _run_fuse_spec(spec)
    payload["manifest"] = manifest.build()
    _write_json(Path(args.out_file), payload)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ribeval",
        description="Volumetric detection/classification evaluation and pipeline tools",
    )
    parser.add_argument("--version", action="version", version=f"ribeval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_eval_common(p):
        p.add_argument("pred_dir", help="directory with <scan>_pred volumes and CSVs")
        p.add_argument("gt_dir", help="directory with <scan>_gt volumes and CSVs")
        p.add_argument("--iou-threshold", type=float, default=DEFAULT_IOU_THRESHOLD)
        p.add_argument("--connectivity", type=int, choices=CONNECTIVITIES,
                       default=DEFAULT_CONNECTIVITY,
                       help="component connectivity recorded in the report")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker pool size (default: RIBEVAL_JOBS or 1)")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("eval-det", help="FROC detection evaluation over scan pairs")
    add_eval_common(p)
    p.add_argument("--fp-levels", default=",".join(str(v) for v in DEFAULT_FP_LEVELS))
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("eval-cls", help="confusion-matrix classification evaluation")
    add_eval_common(p)
    p.add_argument("--conf-threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_eval_cls)

    p = sub.add_parser("pipeline", help="extract scored proposals from a probability volume")
    p.add_argument("prob_volume", help="probability volume (.nii/.nii.gz or raw .json)")
    p.add_argument("--bin-threshold", type=float, default=DEFAULT_BIN_THRESHOLD)
    p.add_argument("--min-voxels", type=int, default=DEFAULT_MIN_VOXELS)
    p.add_argument("--exclusion", default=None, help="binary mask of voxels to zero out")
    p.add_argument("--connectivity", type=int, choices=CONNECTIVITIES,
                   default=DEFAULT_CONNECTIVITY)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("points", help="sample foreground points from a volume")
    p.add_argument("volume", help="intensity-HU or binary volume")
    p.add_argument("--hu-threshold", type=float, default=DEFAULT_BONE_HU)
    p.add_argument("--n", type=int, default=DEFAULT_POINT_COUNT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_points)

    p = sub.add_parser("tile", help="plan sliding windows over a volume or mask")
    p.add_argument("--dims", default=None, help="volume dims as X,Y,Z (grid mode)")
    p.add_argument("--mask", default=None, help="binary mask volume (greedy cover mode)")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW_SIZE)
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("fuse-check", help="finite-difference check of the fusion kernel")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_fuse_check)

    p = sub.add_parser("fuse-apply", help="run the fusion kernel on a JSON spec")
    p.add_argument("--spec", required=True, help="input JSON with coords/features/f_v/...")
    p.add_argument("--out-file", required=True, help="output JSON path")
    p.set_defaults(func=cmd_fuse_apply)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputFaultError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"ribeval: input fault: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"ribeval: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
