/** Writers and readers for the engine's raw volume exchange format:
 * a JSON sidecar (dims/spacing/dtype/kind) plus a little-endian binary
 * payload in x-fastest voxel order, and the instance-metadata CSV. */

import * as fs from "node:fs";
import * as path from "node:path";

import type { Volume3D, VolumeData } from "./types.js";

export type VolumeKind = "intensity-HU" | "probability" | "binary" | "instance-label";

const KIND_DTYPE: Record<VolumeKind, "u8" | "i16" | "f32"> = {
  "intensity-HU": "f32",
  probability: "f32",
  binary: "u8",
  "instance-label": "i16",
};

export function volumeLength(dims: [number, number, number]): number {
  return dims[0] * dims[1] * dims[2];
}

/** Return the voxels in x-fastest order; copies only when converting.
 * Never mutates the input. */
export function toXFastest(volume: Volume3D): VolumeData {
  const [nx, ny, nz] = volume.dims;
  const n = volumeLength(volume.dims);
  if (volume.data.length !== n) {
    throw new Error(
      `volume data length ${volume.data.length} does not match dims ${volume.dims} (${n})`,
    );
  }
  if ((volume.order ?? "x-fastest") === "x-fastest") {
    return volume.data;
  }
  const out = new (volume.data.constructor as { new (len: number): VolumeData })(n);
  for (let x = 0; x < nx; x++) {
    for (let y = 0; y < ny; y++) {
      for (let z = 0; z < nz; z++) {
        out[x + nx * (y + ny * z)] = volume.data[z + nz * (y + ny * x)];
      }
    }
  }
  return out;
}

function encodePayload(flat: VolumeData, dtype: "u8" | "i16" | "f32"): Buffer {
  const n = flat.length;
  if (dtype === "u8") {
    const buf = Buffer.alloc(n);
    for (let i = 0; i < n; i++) {
      const v = flat[i];
      if (v !== 0 && v !== 1) throw new Error(`binary payload value ${v} at ${i}`);
      buf[i] = v;
    }
    return buf;
  }
  if (dtype === "i16") {
    const buf = Buffer.alloc(n * 2);
    for (let i = 0; i < n; i++) {
      const v = flat[i];
      if (!Number.isInteger(v) || v < -32768 || v > 32767) {
        throw new Error(`value ${v} at ${i} does not fit i16`);
      }
      buf.writeInt16LE(v, i * 2);
    }
    return buf;
  }
  const buf = Buffer.alloc(n * 4);
  for (let i = 0; i < n; i++) {
    buf.writeFloatLE(flat[i], i * 4);
  }
  return buf;
}

export function writeRawVolume(
  dir: string,
  name: string,
  volume: Volume3D,
  kind: VolumeKind,
): void {
  const dtype = KIND_DTYPE[kind];
  const sidecar = {
    dims: volume.dims,
    spacing: volume.spacing ?? [1, 1, 1],
    dtype,
    kind,
  };
  fs.writeFileSync(path.join(dir, `${name}.json`), JSON.stringify(sidecar, null, 2) + "\n");
  fs.writeFileSync(path.join(dir, `${name}.bin`), encodePayload(toXFastest(volume), dtype));
}

export interface MetadataRow {
  instanceId: number;
  confidence?: number;
  classCode?: string;
}

export function writeMetadataCsv(filePath: string, rows: MetadataRow[]): void {
  const lines = ["instance_id,confidence,class_code"];
  for (const row of rows) {
    const conf = row.confidence === undefined ? "" : String(row.confidence);
    lines.push(`${row.instanceId},${conf},${row.classCode ?? ""}`);
  }
  fs.writeFileSync(filePath, lines.join("\n") + "\n");
}

export interface RawVolume {
  dims: [number, number, number];
  spacing: [number, number, number];
  kind: VolumeKind;
  /** x-fastest flat data. */
  data: Int32Array | Float32Array | Uint8Array;
}

export function readRawVolume(jsonPath: string): RawVolume {
  const sidecar = JSON.parse(fs.readFileSync(jsonPath, "utf-8"));
  const dims = sidecar.dims as [number, number, number];
  const n = volumeLength(dims);
  const payload = fs.readFileSync(jsonPath.replace(/\.json$/, ".bin"));
  let data: Int32Array | Float32Array | Uint8Array;
  if (sidecar.dtype === "u8") {
    data = new Uint8Array(payload.buffer, payload.byteOffset, n);
  } else if (sidecar.dtype === "i16") {
    data = new Int32Array(n);
    for (let i = 0; i < n; i++) data[i] = payload.readInt16LE(i * 2);
  } else if (sidecar.dtype === "f32") {
    data = new Float32Array(n);
    for (let i = 0; i < n; i++) data[i] = payload.readFloatLE(i * 4);
  } else {
    throw new Error(`unknown raw dtype ${sidecar.dtype}`);
  }
  return {
    dims,
    spacing: sidecar.spacing as [number, number, number],
    kind: sidecar.kind as VolumeKind,
    data,
  };
}

export interface ParsedMetadataRow {
  instanceId: number;
  confidence: number | null;
  classCode: string | null;
}

export function readMetadataCsv(filePath: string): ParsedMetadataRow[] {
  const text = fs.readFileSync(filePath, "utf-8").trim();
  const lines = text.length ? text.split(/\r?\n/) : [];
  return lines.slice(1).map((line) => {
    const [id, conf, cls] = line.split(",");
    return {
      instanceId: Number(id),
      confidence: conf === "" ? null : Number(conf),
      classCode: cls === "" || cls === undefined ? null : cls,
    };
  });
}
