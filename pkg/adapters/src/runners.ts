/**
 * Model runners: the seam between protocol handling and actual inference.
 *
 * `stub` runners are deterministic and load nothing; they back the contract
 * tests and local development. `cmd:<program>` runners delegate to a
 * long-lived child process speaking line-delimited JSON on stdin/stdout,
 * which is where real models (a multimodal LMM, a dense text encoder with
 * last-layer mean pooling, an open-vocabulary detector) plug in without the
 * adapter knowing anything about frameworks or weights.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createHash } from "node:crypto";
import { createInterface, type Interface } from "node:readline";
import { readFileSync } from "node:fs";

import type { ChatRequest, Region } from "./schemas.js";

export class ModelUnavailableError extends Error {}

export interface ChatRunner {
  id: string;
  generate(req: ChatRequest, sampleIndex: number): Promise<string>;
}

export interface EmbedRunner {
  id: string;
  dim: number;
  embed(texts: string[]): Promise<number[][]>;
}

export interface DetectRunner {
  id: string;
  detect(imageB64: string, prompt: string): Promise<Region[]>;
}

function sha256(data: string | Buffer): string {
  return createHash("sha256").update(data).digest("hex");
}

// --- deterministic stubs ---------------------------------------------------

export class StubChatRunner implements ChatRunner {
  id = "stub-chat";

  async generate(req: ChatRequest, sampleIndex: number): Promise<string> {
    const text = req.messages
      .filter((m) => m.type === "text")
      .map((m) => (m as { text: string }).text)
      .join("\n");
    const digest = sha256(text).slice(0, 12);
    return `stub reply ${digest} seed=${req.seed} sample=${sampleIndex}`;
  }
}

/** FNV-1a token hashing into a fixed number of bins; raw counts, no normalization. */
export class StubEmbedRunner implements EmbedRunner {
  id = "stub-embed";

  constructor(public dim: number = 768) {}

  async embed(texts: string[]): Promise<number[][]> {
    return texts.map((text) => {
      const vec = new Array<number>(this.dim).fill(0);
      for (const token of text.toLowerCase().match(/[a-z0-9]+/g) ?? []) {
        let h = 0x811c9dc5;
        for (let i = 0; i < token.length; i++) {
          h ^= token.charCodeAt(i);
          h = Math.imul(h, 0x01000193) >>> 0;
        }
        vec[h % this.dim] += 1;
      }
      return vec;
    });
  }
}

interface DetectFixture {
  prompt: string;
  /** sha256 of the decoded image bytes; omit to match the prompt on any image */
  image_sha256?: string;
  regions: Region[];
}

/** Replays recorded boxes from a fixtures file; unmatched queries yield []. */
export class StubDetectRunner implements DetectRunner {
  id = "stub-detect";
  private fixtures: DetectFixture[];

  constructor(fixturesPath?: string) {
    this.fixtures = fixturesPath
      ? (JSON.parse(readFileSync(fixturesPath, "utf-8")) as DetectFixture[])
      : [];
  }

  async detect(imageB64: string, prompt: string): Promise<Region[]> {
    const digest = sha256(Buffer.from(imageB64, "base64"));
    for (const fixture of this.fixtures) {
      if (fixture.prompt !== prompt) continue;
      if (fixture.image_sha256 && fixture.image_sha256 !== digest) continue;
      return fixture.regions;
    }
    return [];
  }
}

// --- command bridge ----------------------------------------------------------

/**
 * Long-lived child process protocol: one JSON object per line on stdin
 * ({op, request, sample_index?}), one JSON object per line on stdout
 * ({text} | {vectors} | {regions} | {error}). The child loads the model once
 * at startup; a dead or erroring child surfaces as 503.
 */
export class CommandBridge {
  private child: ChildProcess | null = null;
  private lines: Interface | null = null;
  private pending: Array<{ resolve: (v: string) => void; reject: (e: Error) => void }> = [];

  constructor(
    private readonly program: string,
    private readonly device: string,
  ) {}

  private ensureChild(): ChildProcess {
    if (this.child && this.child.exitCode === null) {
      return this.child;
    }
    const [cmd, ...args] = this.program.split(/\s+/);
    const child = spawn(cmd, args, {
      stdio: ["pipe", "pipe", "inherit"],
      env: { ...process.env, ADAPTER_DEVICE: this.device },
    });
    this.lines = createInterface({ input: child.stdout! });
    this.lines.on("line", (line) => {
      const waiter = this.pending.shift();
      if (waiter) waiter.resolve(line);
    });
    child.on("exit", (code) => {
      const err = new ModelUnavailableError(`model process exited with code ${code}`);
      while (this.pending.length) this.pending.shift()!.reject(err);
    });
    child.on("error", (e) => {
      const err = new ModelUnavailableError(`model process failed to start: ${e.message}`);
      while (this.pending.length) this.pending.shift()!.reject(err);
    });
    this.child = child;
    return child;
  }

  async call(payload: unknown): Promise<Record<string, unknown>> {
    const child = this.ensureChild();
    const line = await new Promise<string>((resolve, reject) => {
      this.pending.push({ resolve, reject });
      child.stdin!.write(JSON.stringify(payload) + "\n", (err) => {
        if (err) {
          this.pending = this.pending.filter((w) => w.resolve !== resolve);
          reject(new ModelUnavailableError(`model process not reachable: ${err.message}`));
        }
      });
    });
    let parsed: Record<string, unknown>;
    try {
      parsed = JSON.parse(line) as Record<string, unknown>;
    } catch {
      throw new ModelUnavailableError("model process replied with non-JSON output");
    }
    if (typeof parsed.error === "string") {
      throw new ModelUnavailableError(parsed.error);
    }
    return parsed;
  }
}

export class CommandChatRunner implements ChatRunner {
  constructor(
    private readonly bridge: CommandBridge,
    public id: string,
  ) {}

  async generate(req: ChatRequest, sampleIndex: number): Promise<string> {
    const reply = await this.bridge.call({ op: "chat", request: req, sample_index: sampleIndex });
    if (typeof reply.text !== "string") {
      throw new ModelUnavailableError("model process reply missing text");
    }
    return reply.text;
  }
}

export class CommandEmbedRunner implements EmbedRunner {
  constructor(
    private readonly bridge: CommandBridge,
    public id: string,
    public dim: number,
  ) {}

  async embed(texts: string[]): Promise<number[][]> {
    const reply = await this.bridge.call({ op: "embed", request: { texts } });
    if (!Array.isArray(reply.vectors)) {
      throw new ModelUnavailableError("model process reply missing vectors");
    }
    return reply.vectors as number[][];
  }
}

export class CommandDetectRunner implements DetectRunner {
  constructor(
    private readonly bridge: CommandBridge,
    public id: string,
  ) {}

  async detect(imageB64: string, prompt: string): Promise<Region[]> {
    const reply = await this.bridge.call({
      op: "detect",
      request: { image_b64: imageB64, prompt },
    });
    if (!Array.isArray(reply.regions)) {
      throw new ModelUnavailableError("model process reply missing regions");
    }
    return reply.regions as Region[];
  }
}

export function parseModelSpec(spec: string): { kind: "stub" } | { kind: "cmd"; program: string } {
  if (spec === "stub") return { kind: "stub" };
  if (spec.startsWith("cmd:")) return { kind: "cmd", program: spec.slice(4) };
  throw new Error(`unknown model spec ${spec}; use "stub" or "cmd:<program>"`);
}
