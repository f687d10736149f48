/** Voxel layouts accepted at the boundary. Ecosystems disagree on the
 * default flattening, and a silent transposition is the classic evaluation
 * bug, so the order is always explicit (default "x-fastest"). */
export type VoxelOrder = "x-fastest" | "z-fastest";

export type VolumeData = Int32Array | Float32Array | Float64Array | Uint8Array;

export interface Volume3D {
  /** Extents in voxels along x, y, z. */
  dims: [number, number, number];
  /** Flat voxel data of length dims[0]*dims[1]*dims[2]. */
  data: VolumeData;
  order?: VoxelOrder;
  /** Voxel spacing in mm (default [1, 1, 1]). */
  spacing?: [number, number, number];
}

export interface DetectionOptions {
  iouThreshold?: number;
  fpLevels?: number[];
  connectivity?: 6 | 26;
  scanId?: string;
  /** Keep the temp exchange directory for debugging. */
  keepTempDir?: boolean;
}

export interface ClassificationOptions extends DetectionOptions {
  confThreshold?: number;
}

export interface PerScanRow {
  scan: string;
  n_gt: number;
  n_proposals: number;
  n_matched: number;
  n_fp_candidates: number;
  n_missed_gt: number;
  n_duplicate_hits: number;
  mean_iou: number | null;
}

export interface RunManifest {
  command: string;
  version: string;
  parameters: Record<string, unknown>;
  inputs: Record<string, string>;
  duration_seconds: number;
}

export interface DetectionReport {
  iou_threshold: number;
  connectivity: number;
  fp_levels: number[];
  level_sensitivities: Record<string, number>;
  avg_sensitivity: number;
  max_sensitivity: number;
  avg_fp: number;
  mean_iou_incl_fp: number;
  mean_dice_incl_fp: number;
  mean_iou_excl_fp: number | null;
  mean_dice_excl_fp: number | null;
  per_scan: PerScanRow[];
  manifest: RunManifest;
  /** (avg_fp, sensitivity) step-function points from froc.csv. */
  froc_points: [number, number][];
}

export type FractureClass = "BK" | "ND" | "DP" | "SG";
export type TargetClass = FractureClass | "UN";

export interface F1Block {
  BK: number;
  ND: number;
  DP: number;
  SG: number;
  macro: number;
}

export interface ClassificationReport {
  conf_threshold: number;
  iou_threshold: number;
  connectivity: number;
  matrix: {
    rows: string[];
    columns: string[];
    counts: number[][];
  };
  f1: {
    overall: F1Block;
    target_aware: F1Block;
    prediction_aware: F1Block;
  };
  manifest: RunManifest;
}

export interface ProposalOptions {
  binThreshold?: number;
  minVoxels?: number;
  connectivity?: 6 | 26;
  exclusion?: Volume3D;
  keepTempDir?: boolean;
}

export interface Proposal {
  instanceId: number;
  confidence: number;
}

export interface ProposalResult {
  labels: {
    dims: [number, number, number];
    spacing: [number, number, number];
    /** x-fastest flat instance labels. */
    data: Int32Array;
  };
  proposals: Proposal[];
}

export interface FusionInstance {
  /** M x 3 window-local point coordinates in [0, extent). */
  coords: number[][];
  /** M x C_p per-point features. */
  features: number[][];
  /** C_v x r x r x r voxel feature grid. */
  fV: number[][][][];
  /** C_v x C_p channel transform. */
  weights: number[][];
  bias: number[];
  extent: number;
  reduction?: "mean" | "max";
  /** Optional C_v x r x r x r upstream gradient; requests the backward pass. */
  gradOut?: number[][][][];
}

export interface FusionResult {
  pooled: {
    values: number[][][][];
    occupancy: number[][][];
  };
  fused: number[][][][];
  gradients?: {
    f_v: number[][][][];
    features: number[][];
    weights: number[][];
    bias: number[];
  };
}
