/** TypeScript bindings for the ribeval evaluation engine.
 *
 * The four entry points wrap the engine's command-line interface and file
 * formats; nothing is reimplemented, so binding results are the engine's
 * results. Arrays are accepted in x-fastest or z-fastest layout via an
 * explicit order flag and are never mutated.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  readMetadataCsv,
  readRawVolume,
  writeMetadataCsv,
  writeRawVolume,
} from "./raw.js";
import { runCli, withTempDir } from "./runner.js";
import type {
  ClassificationOptions,
  ClassificationReport,
  DetectionOptions,
  DetectionReport,
  FractureClass,
  FusionInstance,
  FusionResult,
  ProposalOptions,
  ProposalResult,
  TargetClass,
  Volume3D,
} from "./types.js";

export * from "./types.js";
export { RibevalError } from "./runner.js";
export { toXFastest } from "./raw.js";

function readJson(filePath: string): any {
  return JSON.parse(fs.readFileSync(filePath, "utf-8"));
}

function parseFrocCsv(filePath: string): [number, number][] {
  const lines = fs.readFileSync(filePath, "utf-8").trim().split(/\r?\n/);
  return lines.slice(1).map((line) => {
    const [fp, sens] = line.split(",");
    return [Number(fp), Number(sens)] as [number, number];
  });
}

function writeScanPair(
  dir: string,
  scanId: string,
  pred: Volume3D,
  predRows: { instanceId: number; confidence?: number; classCode?: string }[],
  gt: Volume3D,
  gtRows: { instanceId: number; confidence?: number; classCode?: string }[],
): { predDir: string; gtDir: string } {
  const predDir = path.join(dir, "pred");
  const gtDir = path.join(dir, "gt");
  fs.mkdirSync(predDir);
  fs.mkdirSync(gtDir);
  writeRawVolume(predDir, `${scanId}_pred`, pred, "instance-label");
  writeMetadataCsv(path.join(predDir, `${scanId}_pred.csv`), predRows);
  writeRawVolume(gtDir, `${scanId}_gt`, gt, "instance-label");
  writeMetadataCsv(path.join(gtDir, `${scanId}_gt.csv`), gtRows);
  return { predDir, gtDir };
}

function uniquePositive(volume: Volume3D): number[] {
  const seen = new Set<number>();
  for (const v of volume.data) {
    if (v > 0) seen.add(v);
  }
  return [...seen].sort((a, b) => a - b);
}

function confidenceRows(
  volume: Volume3D,
  confidences: Record<number, number>,
  classes?: Record<number, string>,
): { instanceId: number; confidence?: number; classCode?: string }[] {
  return uniquePositive(volume).map((id) => ({
    instanceId: id,
    confidence: confidences[id],
    classCode: classes?.[id],
  }));
}

/** Run the FROC detection evaluation on one prediction/ground-truth pair. */
export function evaluateDetection(
  pred: Volume3D,
  predConfidences: Record<number, number>,
  gt: Volume3D,
  options: DetectionOptions = {},
): DetectionReport {
  return withTempDir(options.keepTempDir, (dir) => {
    const scanId = options.scanId ?? "scan";
    const { predDir, gtDir } = writeScanPair(
      dir,
      scanId,
      pred,
      confidenceRows(pred, predConfidences),
      gt,
      uniquePositive(gt).map((id) => ({ instanceId: id })),
    );
    const outDir = path.join(dir, "out");
    const args = ["eval-det", predDir, gtDir, "--out", outDir];
    if (options.iouThreshold !== undefined) {
      args.push("--iou-threshold", String(options.iouThreshold));
    }
    if (options.fpLevels !== undefined) {
      args.push("--fp-levels", options.fpLevels.join(","));
    }
    if (options.connectivity !== undefined) {
      args.push("--connectivity", String(options.connectivity));
    }
    runCli(args);
    const report = readJson(path.join(outDir, "report.json")) as DetectionReport;
    report.froc_points = parseFrocCsv(path.join(outDir, "froc.csv"));
    return report;
  });
}

/** Run the confusion-matrix classification evaluation on one pair. */
export function evaluateClassification(
  pred: Volume3D,
  predConfidences: Record<number, number>,
  predClasses: Record<number, FractureClass>,
  gt: Volume3D,
  gtClasses: Record<number, TargetClass>,
  options: ClassificationOptions = {},
): ClassificationReport {
  return withTempDir(options.keepTempDir, (dir) => {
    const scanId = options.scanId ?? "scan";
    const { predDir, gtDir } = writeScanPair(
      dir,
      scanId,
      pred,
      confidenceRows(pred, predConfidences, predClasses),
      gt,
      uniquePositive(gt).map((id) => ({ instanceId: id, classCode: gtClasses[id] })),
    );
    const outDir = path.join(dir, "out");
    const args = ["eval-cls", predDir, gtDir, "--out", outDir];
    if (options.iouThreshold !== undefined) {
      args.push("--iou-threshold", String(options.iouThreshold));
    }
    if (options.confThreshold !== undefined) {
      args.push("--conf-threshold", String(options.confThreshold));
    }
    if (options.connectivity !== undefined) {
      args.push("--connectivity", String(options.connectivity));
    }
    runCli(args);
    return readJson(path.join(outDir, "report.json")) as ClassificationReport;
  });
}

/** Extract scored detection proposals from a probability volume. */
export function extractProposals(
  prob: Volume3D,
  options: ProposalOptions = {},
): ProposalResult {
  return withTempDir(options.keepTempDir, (dir) => {
    writeRawVolume(dir, "prob", prob, "probability");
    const outDir = path.join(dir, "out");
    const args = ["pipeline", path.join(dir, "prob.json"), "--out", outDir];
    if (options.binThreshold !== undefined) {
      args.push("--bin-threshold", String(options.binThreshold));
    }
    if (options.minVoxels !== undefined) {
      args.push("--min-voxels", String(options.minVoxels));
    }
    if (options.connectivity !== undefined) {
      args.push("--connectivity", String(options.connectivity));
    }
    if (options.exclusion !== undefined) {
      writeRawVolume(dir, "excl", options.exclusion, "binary");
      args.push("--exclusion", path.join(dir, "excl.json"));
    }
    runCli(args);
    const labels = readRawVolume(path.join(outDir, "proposals.json"));
    const rows = readMetadataCsv(path.join(outDir, "proposals.csv"));
    return {
      labels: {
        dims: labels.dims,
        spacing: labels.spacing,
        data: labels.data as Int32Array,
      },
      proposals: rows.map((row) => ({
        instanceId: row.instanceId,
        confidence: row.confidence as number,
      })),
    };
  });
}

function toSpec(instance: FusionInstance): Record<string, unknown> {
  const spec: Record<string, unknown> = {
    coords: instance.coords,
    features: instance.features,
    f_v: instance.fV,
    weights: instance.weights,
    bias: instance.bias,
    extent: instance.extent,
  };
  if (instance.reduction !== undefined) spec.reduction = instance.reduction;
  if (instance.gradOut !== undefined) spec.grad_out = instance.gradOut;
  return spec;
}

function applyFuse(payload: Record<string, unknown>, keep?: boolean): any {
  return withTempDir(keep, (dir) => {
    const specPath = path.join(dir, "spec.json");
    const outPath = path.join(dir, "result.json");
    fs.writeFileSync(specPath, JSON.stringify(payload));
    runCli(["fuse-apply", "--spec", specPath, "--out-file", outPath]);
    return readJson(outPath);
  });
}

/** Voxelize point features, apply the channel transform and fuse onto the
 * voxel grid; include gradOut to also get the backward pass. */
export function voxelizeFuse(instance: FusionInstance): FusionResult {
  const result = applyFuse(toSpec(instance));
  delete result.manifest;
  return result as FusionResult;
}

/** Batch form of voxelizeFuse: one engine invocation for many instances. */
export function voxelizeFuseBatch(instances: FusionInstance[]): FusionResult[] {
  const result = applyFuse({ instances: instances.map(toSpec) });
  return result.results as FusionResult[];
}
