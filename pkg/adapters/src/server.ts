/**
 * Express apps for the three wire-protocol endpoints.
 *
 * The adapters own no pipeline logic: they validate requests, serialize
 * inference through a bounded single-slot queue (429 on overflow), translate
 * runner failures to 503, and echo the sampling parameters back in the
 * x-sampling-params response header so clients can confirm what was applied.
 */

import express, { type Express, type Response } from "express";
import type { ZodType } from "zod";

import { QueueOverflowError, SerialQueue } from "./queue.js";
import {
  ModelUnavailableError,
  type ChatRunner,
  type DetectRunner,
  type EmbedRunner,
} from "./runners.js";
import { chatRequest, describeIssues, detectRequest, embedRequest } from "./schemas.js";

const BODY_LIMIT = "256mb";

function parseBody<T>(schema: ZodType<T>, body: unknown, res: Response): T | null {
  const result = schema.safeParse(body);
  if (!result.success) {
    res.status(400).json({ error: "invalid request", fields: describeIssues(result.error) });
    return null;
  }
  return result.data;
}

function sendFailure(res: Response, err: unknown): void {
  if (err instanceof QueueOverflowError) {
    res.status(429).json({ error: err.message });
  } else if (err instanceof ModelUnavailableError) {
    res.status(503).json({ error: err.message });
  } else {
    res.status(500).json({ error: String(err) });
  }
}

function baseApp(): Express {
  const app = express();
  app.use(express.json({ limit: BODY_LIMIT }));
  app.get("/health", (_req, res) => {
    res.json({ status: "ok" });
  });
  return app;
}

export function chatApp(runner: ChatRunner, queue: SerialQueue): Express {
  const app = baseApp();
  app.post("/v1/chat", async (req, res) => {
    const parsed = parseBody(chatRequest, req.body, res);
    if (!parsed) return;
    try {
      const completions = await queue.run(async () => {
        const out: string[] = [];
        for (let i = 0; i < parsed.n_samples; i++) {
          out.push(await runner.generate(parsed, i));
        }
        return out;
      });
      res.setHeader("x-sampling-params", JSON.stringify(parsed.sampling));
      res.json({ completions, backend_id: runner.id });
    } catch (err) {
      sendFailure(res, err);
    }
  });
  return app;
}

export function embedApp(runner: EmbedRunner, queue: SerialQueue): Express {
  const app = baseApp();
  app.post("/v1/embed", async (req, res) => {
    const parsed = parseBody(embedRequest, req.body, res);
    if (!parsed) return;
    try {
      const vectors = await queue.run(() => runner.embed(parsed.texts));
      for (const v of vectors) {
        if (v.length !== runner.dim) {
          throw new ModelUnavailableError(
            `model returned a vector of length ${v.length}, expected ${runner.dim}`,
          );
        }
      }
      res.json({ vectors, dim: runner.dim, backend_id: runner.id });
    } catch (err) {
      sendFailure(res, err);
    }
  });
  return app;
}

export function detectApp(runner: DetectRunner, queue: SerialQueue): Express {
  const app = baseApp();
  app.post("/v1/detect", async (req, res) => {
    const parsed = parseBody(detectRequest, req.body, res);
    if (!parsed) return;
    try {
      const regions = await queue.run(() => runner.detect(parsed.image.data_b64, parsed.prompt));
      // min_score filtering is applied server-side
      const kept = regions.filter((r) => r.score >= parsed.min_score);
      res.json({ regions: kept });
    } catch (err) {
      sendFailure(res, err);
    }
  });
  return app;
}
