"""ribeval: volumetric instance-segmentation evaluation and post-processing.

Detection is scored with an FROC protocol (voxel-IoU hit rule, sensitivities
at fixed average-FP-per-scan levels), classification with a detection-aware
confusion matrix and three macro-F1 variants. The pipeline side covers the
non-learned inference stages: intensity windowing, bone binarization, point
sampling, sliding-window placement, patch merging by voxelwise maximum,
proposal extraction, and a point-to-voxel feature fusion kernel with a
verified backward pass.
"""

__version__ = "0.1.0"

from . import _kernels
from .cls_eval import ConfusionMatrix, build_confusion, f1_scores
from .detect_eval import (
    FrocCurve,
    MatchResult,
    ProposalRecord,
    confidence_report,
    froc,
    match_proposals,
    overlap_metrics,
    seg_metric_summary,
)
from .fusion import (
    ChannelTransform,
    FeatureGrid,
    PointFeatures,
    fuse,
    fused_forward,
    fusion_backward,
    gradient_check,
    voxelize,
)
from .labeling import ComponentStats, connected_components, dilate, remove_small
from .pipeline import (
    PointCloud,
    WindowPlan,
    bone_binarize,
    extract_proposals,
    hu_window_normalize,
    merge_patches,
    sample_points,
    tile_windows,
    windows_from_mask,
)
from .volume_io import (
    InstanceMetadata,
    Volume,
    check_consistency,
    load_metadata,
    load_nifti,
    load_raw,
    save_metadata,
    save_raw,
)

__all__ = [
    "__version__",
    "_kernels",
    "ChannelTransform",
    "ComponentStats",
    "ConfusionMatrix",
    "FeatureGrid",
    "FrocCurve",
    "InstanceMetadata",
    "MatchResult",
    "PointCloud",
    "PointFeatures",
    "ProposalRecord",
    "Volume",
    "WindowPlan",
    "bone_binarize",
    "build_confusion",
    "check_consistency",
    "confidence_report",
    "connected_components",
    "dilate",
    "extract_proposals",
    "f1_scores",
    "froc",
    "fuse",
    "fused_forward",
    "fusion_backward",
    "gradient_check",
    "hu_window_normalize",
    "load_metadata",
    "load_nifti",
    "load_raw",
    "match_proposals",
    "merge_patches",
    "overlap_metrics",
    "remove_small",
    "sample_points",
    "save_metadata",
    "save_raw",
    "seg_metric_summary",
    "tile_windows",
    "voxelize",
    "windows_from_mask",
]
