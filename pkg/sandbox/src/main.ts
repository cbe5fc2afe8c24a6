/**
 * Guest-program runner speaking line-delimited JSON over stdio.
 *
 * Startup: probes which guest libraries are importable and prints the
 * handshake line {"protocol":"sandbox/1","libs":[...]}.
 *
 * Then: one request per stdin line ({id, source, timeout_ms, limits}), one
 * response per stdout line ({id, exit_status, stdout, stderr, duration_ms}).
 * Each request runs in its own worker process (python3 guard.py) with a
 * fresh scratch directory; up to MAX_PARALLEL workers run concurrently, so
 * responses may arrive out of request order.
 */

import { spawn, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import * as readline from "node:readline";

const PROTOCOL = "sandbox/1";
const PYTHON = process.env.SANDBOX_PYTHON ?? "python3";
const GUARD = path.join(__dirname, "..", "guard.py");
const MAX_PARALLEL = Number(process.env.SANDBOX_PARALLELISM ?? 4);
const PROBE_LIBS = ["networkx", "numpy", "z3"];

const DEFAULT_TIMEOUT_MS = 10_000;
const DEFAULT_MAX_STDOUT = 64 * 1024;
const DEFAULT_MAX_MEMORY_MB = 512;
const MIN_TIMEOUT_MS = 100;
const TRUNCATION_MARKER = "\n[stdout truncated]\n";

interface SandboxRequest {
  id: string;
  source: string;
  timeout_ms?: number;
  limits?: { max_stdout_bytes?: number; max_memory_mb?: number };
}

interface SandboxResponse {
  id: string;
  exit_status: "ok" | "nonzero" | "timeout" | "protocol_error";
  stdout: string;
  stderr: string;
  duration_ms: number;
}

function probeLibs(): string[] {
  const probe = [
    "import importlib, json",
    `libs = ${JSON.stringify(PROBE_LIBS)}`,
    "ok = []",
    "for lib in libs:",
    "    try:",
    "        importlib.import_module(lib)",
    "        ok.append(lib)",
    "    except Exception:",
    "        pass",
    "print(json.dumps(ok))",
  ].join("\n");
  const result = spawnSync(PYTHON, ["-c", probe], { encoding: "utf8", timeout: 30_000 });
  if (result.status !== 0 || !result.stdout) {
    return [];
  }
  try {
    return JSON.parse(result.stdout.trim());
  } catch {
    return [];
  }
}

function emit(response: SandboxResponse): void {
  process.stdout.write(JSON.stringify(response) + "\n");
}

function runGuest(request: SandboxRequest, done: () => void): void {
  const timeoutMs = request.timeout_ms ?? DEFAULT_TIMEOUT_MS;
  const maxStdout = request.limits?.max_stdout_bytes ?? DEFAULT_MAX_STDOUT;
  const maxMemoryMb = request.limits?.max_memory_mb ?? DEFAULT_MAX_MEMORY_MB;
  const start = Date.now();

  const scratch = fs.mkdtempSync(path.join(os.tmpdir(), "sandbox-run-"));
  const worker = spawn(PYTHON, [GUARD, scratch, String(maxMemoryMb)], {
    stdio: ["pipe", "pipe", "pipe"],
  });

  let stdout = Buffer.alloc(0);
  let stderr = Buffer.alloc(0);
  let timedOut = false;
  let settled = false;

  const timer = setTimeout(() => {
    timedOut = true;
    worker.kill("SIGKILL");
  }, timeoutMs);

  worker.stdout.on("data", (chunk: Buffer) => {
    if (stdout.length < maxStdout + TRUNCATION_MARKER.length) {
      stdout = Buffer.concat([stdout, chunk]);
    }
  });
  worker.stderr.on("data", (chunk: Buffer) => {
    if (stderr.length < 64 * 1024) {
      stderr = Buffer.concat([stderr, chunk]);
    }
  });

  const finish = (status: SandboxResponse["exit_status"], extraStderr = "") => {
    if (settled) return;
    settled = true;
    clearTimeout(timer);
    fs.rmSync(scratch, { recursive: true, force: true });
    let out = stdout.toString("utf8");
    if (Buffer.byteLength(out) > maxStdout) {
      out = stdout.subarray(0, maxStdout).toString("utf8") + TRUNCATION_MARKER;
    }
    emit({
      id: request.id,
      exit_status: status,
      stdout: out,
      stderr: stderr.toString("utf8") + extraStderr,
      duration_ms: Date.now() - start,
    });
    done();
  };

  worker.on("error", (err) => finish("protocol_error", `worker spawn failed: ${err.message}`));
  worker.on("close", (code) => {
    if (timedOut) {
      finish("timeout", `killed after ${timeoutMs} ms`);
    } else if (code === 0) {
      finish("ok");
    } else {
      finish("nonzero");
    }
  });

  worker.stdin.on("error", () => {
    /* worker died before reading its stdin; close handler responds */
  });
  worker.stdin.write(request.source);
  worker.stdin.end();
}

function validate(raw: unknown): { request?: SandboxRequest; error?: string } {
  if (typeof raw !== "object" || raw === null) {
    return { error: "request is not a JSON object" };
  }
  const obj = raw as Record<string, unknown>;
  if (typeof obj.id !== "string" || obj.id === "") {
    return { error: "request id must be a nonempty string" };
  }
  if (typeof obj.source !== "string" || obj.source === "") {
    return { error: "request source must be nonempty" };
  }
  if (obj.timeout_ms !== undefined) {
    if (typeof obj.timeout_ms !== "number" || obj.timeout_ms < MIN_TIMEOUT_MS) {
      return { error: `timeout_ms must be a number >= ${MIN_TIMEOUT_MS}` };
    }
  }
  return { request: obj as unknown as SandboxRequest };
}

function main(): void {
  const libs = probeLibs();
  process.stdout.write(JSON.stringify({ protocol: PROTOCOL, libs }) + "\n");

  let active = 0;
  const queue: SandboxRequest[] = [];

  const pump = () => {
    while (active < MAX_PARALLEL && queue.length > 0) {
      const request = queue.shift()!;
      active += 1;
      runGuest(request, () => {
        active -= 1;
        pump();
      });
    }
  };

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (!line.trim()) return;
    let raw: unknown;
    try {
      raw = JSON.parse(line);
    } catch {
      emit({ id: "", exit_status: "protocol_error", stdout: "", stderr: "malformed request JSON", duration_ms: 0 });
      return;
    }
    const { request, error } = validate(raw);
    if (!request) {
      const id = typeof (raw as Record<string, unknown>)?.id === "string" ? String((raw as Record<string, unknown>).id) : "";
      emit({ id, exit_status: "protocol_error", stdout: "", stderr: error ?? "invalid request", duration_ms: 0 });
      return;
    }
    queue.push(request);
    pump();
  });
  rl.on("close", () => {
    const poll = setInterval(() => {
      if (active === 0 && queue.length === 0) {
        clearInterval(poll);
        process.exit(0);
      }
    }, 20);
  });
}

main();
