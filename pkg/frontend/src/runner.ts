/** Subprocess plumbing: every binding call shells out to the ribeval CLI so
 * there is exactly one implementation of the metrics. */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

/** Resolve the CLI executable; override with env RIBEVAL_CLI. */
export function cliPath(): string {
  return process.env.RIBEVAL_CLI ?? "ribeval";
}

export class RibevalError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
  ) {
    super(message);
    this.name = "RibevalError";
  }
}

export function runCli(args: string[]): string {
  const proc = spawnSync(cliPath(), args, { encoding: "utf-8", maxBuffer: 1 << 28 });
  if (proc.error) {
    throw new RibevalError(`failed to launch ${cliPath()}: ${proc.error.message}`, null);
  }
  if (proc.status !== 0) {
    const detail = (proc.stderr || proc.stdout || "").trim();
    throw new RibevalError(detail || `ribeval exited with ${proc.status}`, proc.status);
  }
  return proc.stdout;
}

export function withTempDir<T>(keep: boolean | undefined, body: (dir: string) => T): T {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "ribeval-"));
  try {
    return body(dir);
  } finally {
    if (!keep) {
      fs.rmSync(dir, { recursive: true, force: true });
    }
  }
}
