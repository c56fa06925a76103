/**
 * Request validation for the wire protocol.
 *
 * These mirror the shared JSON Schemas in ../schemas/ (the source of truth,
 * exported by the engine package); the contract test suite checks every
 * adapter response against those files. Validation failures become 400s that
 * name the offending field.
 */

import { z } from "zod";

export const textPart = z
  .object({
    type: z.literal("text"),
    text: z.string(),
  })
  .strict();

export const imagePart = z
  .object({
    type: z.literal("image"),
    data_b64: z.string(),
    media_type: z.string().default("image/png"),
  })
  .strict();

export const frameAttachment = z
  .object({
    data_b64: z.string(),
    media_type: z.string().default("image/png"),
    timestamp: z.number().default(0),
  })
  .strict();

export const framesPart = z
  .object({
    type: z.literal("frames"),
    frames: z.array(frameAttachment),
  })
  .strict();

export const messagePart = z.discriminatedUnion("type", [textPart, imagePart, framesPart]);

export const samplingParams = z
  .object({
    temperature: z.number().min(0).default(0),
    top_p: z.number().gt(0).max(1).default(1),
    // top_k = 0 disables hard top-k truncation
    top_k: z.number().int().min(0).default(0),
    max_tokens: z.number().int().min(1).default(1024),
  })
  .strict();

export const chatRequest = z
  .object({
    role: z.enum(["main", "aux"]),
    messages: z.array(messagePart).min(1),
    sampling: samplingParams.default({ temperature: 0, top_p: 1, top_k: 0, max_tokens: 1024 }),
    n_samples: z.number().int().min(1).default(1),
    seed: z.number().int().nullable().default(null),
  })
  .strict()
  .refine((req) => req.messages.some((m) => m.type === "text"), {
    message: "chat request needs at least one text part",
    path: ["messages"],
  });

export const embedRequest = z
  .object({
    texts: z
      .array(z.string().refine((t) => t.trim().length > 0, { message: "text must be non-empty" }))
      .min(1),
  })
  .strict();

export const detectRequest = z
  .object({
    image: imagePart,
    prompt: z.string(),
    min_score: z.number().min(0).max(1).default(0.3),
  })
  .strict();

export type ChatRequest = z.infer<typeof chatRequest>;
export type EmbedRequest = z.infer<typeof embedRequest>;
export type DetectRequest = z.infer<typeof detectRequest>;

export interface Region {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  score: number;
  label: string;
}

/** Flatten a zod error into "field: message" lines for the 400 body. */
export function describeIssues(error: z.ZodError): string[] {
  return error.issues.map((issue) => {
    const path = issue.path.length ? issue.path.join(".") : "(root)";
    if (issue.code === "unrecognized_keys") {
      return `${path}: unsupported field(s) ${issue.keys.join(", ")}`;
    }
    return `${path}: ${issue.message}`;
  });
}
