"""Detection-aware confusion matrix and the three macro-F1 variants.

The matrix has 5 prediction rows (BK, ND, DP, SG, FN-of-detection) and 6
target columns (BK, ND, DP, SG, FP-of-detection, UN). UN targets are ignored
by every F1 variant; the three variants differ in which detection-error
cells stay in: overall keeps everything, target-aware drops the FP column,
prediction-aware drops the FP column and the FN row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InputFaultError
from .detect_eval import MatchResult
from .volume_io import FRACTURE_CLASSES

ROW_LABELS = ("BK", "ND", "DP", "SG", "FN")
COL_LABELS = ("BK", "ND", "DP", "SG", "FP", "UN")
F1_MODES = ("overall", "target_aware", "prediction_aware")

_ROW_INDEX = {c: i for i, c in enumerate(ROW_LABELS)}
_COL_INDEX = {c: i for i, c in enumerate(COL_LABELS)}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.shape != (5, 6):
            raise InputFaultError(f"confusion matrix must be 5x6, got {arr.shape}")
        if (arr < 0).any():
            raise InputFaultError("confusion matrix counts must be non-negative")
        self.counts = arr

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((5, 6), dtype=np.int64))

    def to_json_dict(self) -> dict:
        return {
            "rows": list(ROW_LABELS),
            "columns": list(COL_LABELS),
            "counts": self.counts.tolist(),
        }


def build_confusion(
    match: MatchResult,
    pred_classes: Mapping[int, str],
    gt_classes: Mapping[int, str],
    conf_threshold: float = 0.0,
) -> ConfusionMatrix:
    """Tally one scan's detections into the 5x6 matrix.

    Proposals below ``conf_threshold`` are dropped first. A ground-truth
    instance hit by several surviving proposals takes the class of the
    highest-confidence one (ties toward the smaller proposal id); an unhit
    instance lands in the FN row. Every surviving unmatched proposal counts
    in the FP column under its predicted class.
    """
    for pid in (p.proposal_id for p in match.proposals):
        cls = pred_classes.get(pid)
        if cls is None:
            raise InputFaultError(f"proposal {pid} has no class")
        if cls == "UN":
            raise InputFaultError(f"proposal {pid} is classified UN")
        if cls not in FRACTURE_CLASSES:
            raise InputFaultError(f"proposal {pid} has unknown class {cls!r}")
    for gid in match.gt_ids:
        cls = gt_classes.get(gid)
        if cls is None:
            raise InputFaultError(f"ground-truth instance {gid} has no class")
        if cls not in COL_LABELS[:4] + ("UN",):
            raise InputFaultError(f"ground-truth instance {gid} has unknown class {cls!r}")

    counts = np.zeros((5, 6), dtype=np.int64)
    surviving = {
        p.proposal_id: p for p in match.proposals if p.confidence >= conf_threshold
    }
    for gid in match.gt_ids:
        hits = [pid for pid in match.hit_map.get(gid, []) if pid in surviving]
        col = _COL_INDEX[gt_classes[gid]]
        if hits:
            best = min(hits, key=lambda pid: (-surviving[pid].confidence, pid))
            row = _ROW_INDEX[pred_classes[best]]
        else:
            row = _ROW_INDEX["FN"]
        counts[row, col] += 1
    for pid, p in surviving.items():
        if p.matched_gt_id is None:
            counts[_ROW_INDEX[pred_classes[pid]], _COL_INDEX["FP"]] += 1
    return ConfusionMatrix(counts)


def f1_scores(matrix: ConfusionMatrix, mode: str) -> dict[str, float]:
    """Per-class F1 for BK/ND/DP/SG plus the macro average.

    The UN column never contributes. Degenerate ratios (0/0) are defined as
    0 and still pull the macro average down, matching the convention that a
    class with neither predictions nor targets scores 0.
    """
    if mode not in F1_MODES:
        raise InputFaultError(f"mode must be one of {F1_MODES}, got {mode!r}")
    effective = matrix.counts[:, :5].astype(np.float64)
    if mode in ("target_aware", "prediction_aware"):
        effective = effective[:, :4]
    if mode == "prediction_aware":
        effective = effective[:4, :]
    scores: dict[str, float] = {}
    for i, cls in enumerate(FRACTURE_CLASSES):
        tp = effective[i, i]
        row_sum = effective[i, :].sum()
        col_sum = effective[:, i].sum()
        precision = tp / row_sum if row_sum > 0 else 0.0
        recall = tp / col_sum if col_sum > 0 else 0.0
        denom = precision + recall
        scores[cls] = 2.0 * precision * recall / denom if denom > 0 else 0.0
    scores["macro"] = sum(scores[c] for c in FRACTURE_CLASSES) / len(FRACTURE_CLASSES)
    return scores
