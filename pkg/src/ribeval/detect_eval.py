"""Detection matching and FROC analysis for volumetric instance proposals.

The hit rule: a proposal counts as a detection hit when its voxel IoU with
some ground-truth instance reaches the threshold (default 0.2). Proposals are
assigned to the qualifying ground-truth instance of maximal IoU, ties broken
toward the smaller ground-truth id, so output never depends on storage order.
A second proposal overlapping an already-hit instance is neither an extra
true positive nor a false positive; duplicates are reported for diagnostics.

FROC sensitivities are read off a discrete step function over all distinct
confidence thresholds; no interpolation between operating points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .errors import EmptySummaryError, InputFaultError
from .volume_io import Volume

DEFAULT_IOU_THRESHOLD = 0.2
DEFAULT_FP_LEVELS = (0.5, 1.0, 2.0, 4.0, 8.0)

LabelsLike = Union[Volume, np.ndarray]


@dataclass(frozen=True)
class ProposalRecord:
    proposal_id: int
    confidence: float
    voxel_count: int
    matched_gt_id: Optional[int]
    iou: float
    dice: float


@dataclass
class MatchResult:
    """Per-scan record of proposal/ground-truth assignments."""

    scan_id: str
    proposals: list[ProposalRecord]
    gt_ids: list[int]
    hit_map: dict[int, list[int]]
    iou_threshold: float
    gt_voxel_counts: dict[int, int] = field(default_factory=dict)
    # every (proposal, gt) pair with non-empty intersection, for diagnostics
    overlap_pairs: list[tuple[int, int, float]] = field(default_factory=list)
    gt_classes: Optional[dict[int, str]] = None

    @property
    def fp_candidates(self) -> list[ProposalRecord]:
        return [p for p in self.proposals if p.matched_gt_id is None]


@dataclass
class FrocCurve:
    points: list[tuple[float, float]]
    level_sensitivities: dict[float, float]
    avg_sensitivity: float
    max_sensitivity: float
    avg_fp_total: float


@dataclass(frozen=True)
class SegRecord:
    scan_id: str
    proposal_id: int
    confidence: float
    iou: float
    dice: float
    matched: bool
    gt_id: Optional[int]
    class_code: Optional[str]


def _as_label_array(labels: LabelsLike, argname: str) -> np.ndarray:
    arr = labels.data if isinstance(labels, Volume) else np.asarray(labels)
    if arr.ndim != 3:
        raise InputFaultError(f"{argname} must be a 3D label array, got {arr.ndim}D")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputFaultError(f"{argname} must hold integers, got dtype {arr.dtype}")
    return arr


def overlap_metrics(a: LabelsLike, b: LabelsLike) -> tuple[float, float]:
    """Voxel IoU and Dice of two masks; (0, 0) when both are empty."""
    ma = np.asarray(a.data if isinstance(a, Volume) else a) != 0
    mb = np.asarray(b.data if isinstance(b, Volume) else b) != 0
    if ma.shape != mb.shape:
        raise InputFaultError(f"dims mismatch: {ma.shape} vs {mb.shape}")
    inter = int(np.count_nonzero(ma & mb))
    na = int(np.count_nonzero(ma))
    nb = int(np.count_nonzero(mb))
    union = na + nb - inter
    if union == 0:
        return 0.0, 0.0
    iou = inter / union
    dice = 2.0 * inter / (na + nb)
    return iou, dice


def _compact_labels(arr: np.ndarray, argname: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Remap positive ids to 1..K; returns (remapped int32, original ids, counts)."""
    if arr.size == 0:
        raise InputFaultError(f"{argname} is empty")
    max_id = int(arr.max())
    min_id = int(arr.min())
    if min_id < 0:
        raise InputFaultError(f"{argname} has negative labels")
    if max_id == 0:
        return arr.astype(np.int32, copy=False), np.empty(0, np.int64), np.empty(0, np.int64)
    if max_id <= 4_000_000:
        counts_all = np.bincount(arr.ravel(order="K"), minlength=max_id + 1)
        ids = np.flatnonzero(counts_all[1:]).astype(np.int64) + 1
        counts = counts_all[ids]
    else:
        ids, counts = np.unique(arr[arr > 0], return_counts=True)
        ids = ids.astype(np.int64)
    if ids.size == max_id and ids[0] == 1:
        compact = arr.astype(np.int32, copy=False)
    else:
        lut = np.zeros(max_id + 1, dtype=np.int32)
        lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
        compact = lut[arr]
    return compact, ids, counts.astype(np.int64)


def match_proposals(
    pred: LabelsLike,
    gt: LabelsLike,
    confidences: Mapping[int, float],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    scan_id: str = "",
    gt_classes: Optional[Mapping[int, str]] = None,
) -> MatchResult:
    """Assign prediction instances to ground-truth instances by maximal IoU.

    IoU is computed sparsely from one joint pass over both label maps: only
    (proposal, gt) pairs with non-empty intersection are considered.
    """
    pred_arr = _as_label_array(pred, "pred")
    gt_arr = _as_label_array(gt, "gt")
    if pred_arr.shape != gt_arr.shape:
        raise InputFaultError(f"dims mismatch: pred {pred_arr.shape} vs gt {gt_arr.shape}")
    pred_compact, pred_ids, pred_counts = _compact_labels(pred_arr, "pred")
    gt_compact, gt_ids, gt_counts = _compact_labels(gt_arr, "gt")
    for pid in pred_ids:
        if int(pid) not in confidences:
            raise InputFaultError(f"missing confidence for proposal {int(pid)}")
    kp, kg = pred_ids.size, gt_ids.size
    if kp and kg:
        pairs = _kernels.pair_counts(pred_compact, gt_compact, kp, kg)
    else:
        pairs = np.zeros((kp + 1, kg + 1), dtype=np.int64)

    proposals: list[ProposalRecord] = []
    hit_map: dict[int, list[int]] = {int(g): [] for g in gt_ids}
    overlap_pairs: list[tuple[int, int, float]] = []
    for pi in range(1, kp + 1):
        pid = int(pred_ids[pi - 1])
        p_count = int(pred_counts[pi - 1])
        confidence = float(confidences[pid])
        if not 0.0 <= confidence <= 1.0:
            raise InputFaultError(f"confidence {confidence} for proposal {pid} outside [0,1]")
        best_iou = 0.0
        matched_gt = None
        matched_iou = 0.0
        for gi in np.flatnonzero(pairs[pi, 1:]):
            inter = int(pairs[pi, gi + 1])
            g_count = int(gt_counts[gi])
            iou = inter / (p_count + g_count - inter)
            gid = int(gt_ids[gi])
            overlap_pairs.append((pid, gid, iou))
            if iou > best_iou:
                best_iou = iou
            if iou >= iou_threshold and iou > matched_iou:
                matched_iou = iou
                matched_gt = gid
        iou = matched_iou if matched_gt is not None else best_iou
        dice = 2.0 * iou / (1.0 + iou) if iou > 0.0 else 0.0
        proposals.append(
            ProposalRecord(pid, confidence, p_count, matched_gt, iou, dice)
        )
        if matched_gt is not None:
            hit_map[matched_gt].append(pid)
    return MatchResult(
        scan_id=scan_id,
        proposals=proposals,
        gt_ids=[int(g) for g in gt_ids],
        hit_map=hit_map,
        iou_threshold=iou_threshold,
        gt_voxel_counts={int(g): int(c) for g, c in zip(gt_ids, gt_counts)},
        overlap_pairs=overlap_pairs,
        gt_classes=dict(gt_classes) if gt_classes is not None else None,
    )


def froc(
    results: Sequence[MatchResult],
    fp_levels: Sequence[float] = DEFAULT_FP_LEVELS,
) -> FrocCurve:
    """Pool per-scan match results into an FROC curve.

    Candidate thresholds are all distinct proposal confidences plus +inf.
    At threshold t, a ground-truth instance counts as detected when some
    proposal with confidence >= t hits it; false positives are unmatched
    proposals with confidence >= t. Scans without ground truth still count
    in the average-FP denominator.
    """
    if not results:
        raise InputFaultError("froc needs at least one scan")
    total_gt = sum(len(r.gt_ids) for r in results)
    if total_gt == 0:
        raise InputFaultError("froc needs at least one ground-truth instance")
    n_scans = len(results)
    gt_best: list[float] = []
    fp_confs: list[float] = []
    all_confs: set[float] = set()
    for result in results:
        conf_by_id = {p.proposal_id: p.confidence for p in result.proposals}
        all_confs.update(conf_by_id.values())
        for gid, hits in result.hit_map.items():
            if hits:
                gt_best.append(max(conf_by_id[p] for p in hits))
        fp_confs.extend(p.confidence for p in result.fp_candidates)

    gt_sorted = np.sort(np.asarray(gt_best, dtype=np.float64))
    fp_sorted = np.sort(np.asarray(fp_confs, dtype=np.float64))
    thresholds = sorted(all_confs, reverse=True)
    points: list[tuple[float, float]] = [(0.0, 0.0)]
    for t in thresholds:
        tp = gt_sorted.size - int(np.searchsorted(gt_sorted, t, side="left"))
        fp = fp_sorted.size - int(np.searchsorted(fp_sorted, t, side="left"))
        points.append((fp / n_scans, tp / total_gt))

    level_sensitivities: dict[float, float] = {}
    for level in fp_levels:
        best = 0.0
        for avg_fp, sens in points:
            if avg_fp <= level and sens > best:
                best = sens
        level_sensitivities[float(level)] = best
    sens_values = list(level_sensitivities.values())
    return FrocCurve(
        points=points,
        level_sensitivities=level_sensitivities,
        avg_sensitivity=sum(sens_values) / len(sens_values) if sens_values else 0.0,
        max_sensitivity=points[-1][1],
        avg_fp_total=points[-1][0],
    )


def seg_metric_summary(
    results: Sequence[MatchResult], include_fp: bool = True
) -> tuple[float, float, list[SegRecord]]:
    """Instance-level IoU/Dice means over all scans.

    A false positive contributes its best IoU against any overlapping
    ground-truth instance (0 when it overlaps none); ``include_fp=False``
    restricts the mean to matched proposals. Records carry the matched
    ground-truth class when the match results have classes attached.
    """
    if not results:
        raise InputFaultError("summary needs at least one scan")
    records: list[SegRecord] = []
    for result in results:
        for p in result.proposals:
            matched = p.matched_gt_id is not None
            if not include_fp and not matched:
                continue
            class_code = None
            if matched and result.gt_classes is not None:
                class_code = result.gt_classes.get(p.matched_gt_id)
            records.append(
                SegRecord(result.scan_id, p.proposal_id, p.confidence, p.iou, p.dice,
                          matched, p.matched_gt_id, class_code)
            )
    if not records:
        if include_fp:
            return 0.0, 0.0, []
        raise EmptySummaryError("no matched proposals; exclude-FP summary is empty")
    mean_iou = sum(r.iou for r in records) / len(records)
    mean_dice = sum(r.dice for r in records) / len(records)
    return mean_iou, mean_dice, records


def confidence_report(results: Sequence[MatchResult]) -> dict:
    """Tuples backing confidence/IoU scatter plots and FN diagnostics.

    Every proposal lands in exactly one of {TP, FP}; false negatives are
    ground-truth instances no proposal hit, each annotated with the
    confidence of the nearest-missed proposal (max IoU over overlapping
    proposals) or None when nothing overlaps it.
    """
    if not results:
        raise InputFaultError("report needs at least one scan")
    proposals = []
    false_negatives = []
    tp_gt = 0
    duplicates = 0
    for result in results:
        conf_by_id = {p.proposal_id: p.confidence for p in result.proposals}
        for p in result.proposals:
            category = "TP" if p.matched_gt_id is not None else "FP"
            proposals.append(
                {
                    "scan_id": result.scan_id,
                    "proposal_id": p.proposal_id,
                    "confidence": p.confidence,
                    "iou": p.iou,
                    "category": category,
                }
            )
        best_overlap: dict[int, tuple[float, int]] = {}
        for pid, gid, iou in result.overlap_pairs:
            cur = best_overlap.get(gid)
            if cur is None or iou > cur[0] or (iou == cur[0] and pid < cur[1]):
                best_overlap[gid] = (iou, pid)
        for gid in result.gt_ids:
            hits = result.hit_map.get(gid, [])
            if hits:
                tp_gt += 1
                duplicates += len(hits) - 1
            else:
                near = best_overlap.get(gid)
                false_negatives.append(
                    {
                        "scan_id": result.scan_id,
                        "gt_id": gid,
                        "near_miss_confidence": None if near is None else conf_by_id[near[1]],
                        "near_miss_iou": None if near is None else near[0],
                    }
                )
    n_fp = sum(1 for p in proposals if p["category"] == "FP")
    return {
        "proposals": proposals,
        "false_negatives": false_negatives,
        "counts": {
            "tp_gt": tp_gt,
            "fn": len(false_negatives),
            "fp": n_fp,
            "duplicate_hits": duplicates,
        },
    }
