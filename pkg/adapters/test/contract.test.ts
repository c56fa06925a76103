/**
 * Contract suite for the three adapter endpoints.
 *
 * Recorded request/response fixtures are validated against the JSON Schemas
 * shared with the engine (../schemas/*.schema.json) without loading any model
 * weights; live stub servers must reproduce the recorded responses exactly
 * and reject invalid requests with 400s that name the offending field.
 *
 * Re-record fixtures with: RECORD_FIXTURES=1 npx vitest run
 */

import { mkdirSync, readFileSync, writeFileSync, existsSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import type { Server } from "node:http";

import Ajv2020 from "ajv/dist/2020.js";
import type { Express } from "express";
import { afterAll, describe, expect, it } from "vitest";

import { SerialQueue } from "../src/queue.js";
import {
  CommandBridge,
  CommandChatRunner,
  StubChatRunner,
  StubDetectRunner,
  StubEmbedRunner,
} from "../src/runners.js";
import { chatApp, detectApp, embedApp } from "../src/server.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const SCHEMA_DIR = join(HERE, "..", "..", "schemas");
const FIXTURE_DIR = join(HERE, "fixtures");
const RECORD = process.env.RECORD_FIXTURES === "1";

// 1x1 red PNG
const TINY_PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGP4z8DwHwAFAAH/q842iQAAAABJRU5ErkJggg==";

// strict:false ignores the OpenAPI-style discriminator annotation; the plain
// oneOf alternatives do the validating
const ajv = new (Ajv2020 as unknown as typeof Ajv2020.default)({ strict: false });

function validator(name: string) {
  const doc = JSON.parse(readFileSync(join(SCHEMA_DIR, `${name}.schema.json`), "utf-8"));
  return ajv.compile(doc);
}

const validate = {
  chat_request: validator("chat_request"),
  chat_response: validator("chat_response"),
  embed_request: validator("embed_request"),
  embed_response: validator("embed_response"),
  detect_request: validator("detect_request"),
  detect_response: validator("detect_response"),
};

interface Fixture {
  endpoint: "chat" | "embed" | "detect";
  request: Record<string, unknown>;
  response: Record<string, unknown>;
}

const servers: Server[] = [];

function serve(app: Express): Promise<string> {
  return new Promise((resolve) => {
    const server = app.listen(0, () => {
      servers.push(server);
      const addr = server.address();
      const port = typeof addr === "object" && addr ? addr.port : 0;
      resolve(`http://127.0.0.1:${port}`);
    });
  });
}

afterAll(() => {
  for (const server of servers) server.close();
});

const detectFixturesPath = join(FIXTURE_DIR, "detect_boxes.json");

async function stubServers() {
  const chatUrl = await serve(chatApp(new StubChatRunner(), new SerialQueue(8)));
  const embedUrl = await serve(embedApp(new StubEmbedRunner(16), new SerialQueue(8)));
  const detectUrl = await serve(
    detectApp(new StubDetectRunner(detectFixturesPath), new SerialQueue(8)),
  );
  return { chat: chatUrl, embed: embedUrl, detect: detectUrl };
}

async function post(base: string, path: string, body: unknown): Promise<Response> {
  return fetch(base + path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

const RECORDED_REQUESTS: Array<{ name: string; endpoint: Fixture["endpoint"]; request: Record<string, unknown> }> = [
  {
    name: "chat_nominal",
    endpoint: "chat",
    request: {
      role: "aux",
      messages: [
        { type: "text", text: "Describe the clarity of the child in the image/video." },
        { type: "image", data_b64: TINY_PNG_B64, media_type: "image/png" },
        {
          type: "frames",
          frames: [
            { data_b64: TINY_PNG_B64, media_type: "image/png", timestamp: 0 },
            { data_b64: TINY_PNG_B64, media_type: "image/png", timestamp: 1 },
          ],
        },
      ],
      sampling: { temperature: 1.0, top_p: 0.95, top_k: 0, max_tokens: 1024 },
      n_samples: 4,
      seed: 1,
    },
  },
  {
    name: "chat_greedy",
    endpoint: "chat",
    request: {
      role: "main",
      messages: [{ type: "text", text: "You are performing a visual quality understanding task." }],
      sampling: { temperature: 0, top_p: 1, top_k: 0, max_tokens: 2048 },
      n_samples: 1,
      seed: 7,
    },
  },
  {
    name: "embed_batch",
    endpoint: "embed",
    request: {
      texts: [
        "The video resolution is 640x360.",
        "No child detected at t=1s.",
        "Sharp overall with mild noise.",
      ],
    },
  },
  {
    name: "detect_match",
    endpoint: "detect",
    request: { image: { type: "image", data_b64: TINY_PNG_B64 }, prompt: "child", min_score: 0.3 },
  },
  {
    name: "detect_no_match",
    endpoint: "detect",
    request: { image: { type: "image", data_b64: TINY_PNG_B64 }, prompt: "zebra", min_score: 0.3 },
  },
];

describe("recorded fixtures validate against the shared schemas", () => {
  it("records fixtures when RECORD_FIXTURES=1", async () => {
    if (!RECORD) return;
    mkdirSync(FIXTURE_DIR, { recursive: true });
    const urls = await stubServers();
    for (const { name, endpoint, request } of RECORDED_REQUESTS) {
      const resp = await post(urls[endpoint], `/v1/${endpoint}`, request);
      expect(resp.status).toBe(200);
      const fixture: Fixture = { endpoint, request, response: await resp.json() };
      writeFileSync(join(FIXTURE_DIR, `${name}.json`), JSON.stringify(fixture, null, 2) + "\n");
    }
  });

  for (const { name, endpoint } of RECORDED_REQUESTS) {
    it(`${name}: request and response are schema-valid`, () => {
      const path = join(FIXTURE_DIR, `${name}.json`);
      if (RECORD && !existsSync(path)) return;
      const fixture = JSON.parse(readFileSync(path, "utf-8")) as Fixture;
      const reqValidator = validate[`${endpoint}_request` as const];
      const respValidator = validate[`${endpoint}_response` as const];
      expect(reqValidator(fixture.request), JSON.stringify(reqValidator.errors)).toBe(true);
      expect(respValidator(fixture.response), JSON.stringify(respValidator.errors)).toBe(true);
    });
  }
});

describe("live stub servers honor the contract", () => {
  it("reproduces every recorded response byte-for-byte and stays schema-valid", async () => {
    const urls = await stubServers();
    for (const { name, endpoint, request } of RECORDED_REQUESTS) {
      const path = join(FIXTURE_DIR, `${name}.json`);
      if (RECORD && !existsSync(path)) continue;
      const fixture = JSON.parse(readFileSync(path, "utf-8")) as Fixture;
      const resp = await post(urls[endpoint], `/v1/${endpoint}`, request);
      expect(resp.status).toBe(200);
      const body = await resp.json();
      expect(body).toEqual(fixture.response);
      const respValidator = validate[`${endpoint}_response` as const];
      expect(respValidator(body), JSON.stringify(respValidator.errors)).toBe(true);
    }
  });

  it("echoes the sampling fields in response metadata (round-trip)", async () => {
    const urls = await stubServers();
    const sampling = { temperature: 1.0, top_p: 0.95, top_k: 0, max_tokens: 1024 };
    const resp = await post(urls.chat, "/v1/chat", {
      role: "aux",
      messages: [{ type: "text", text: "sampling echo check" }],
      sampling,
      n_samples: 4,
      seed: 3,
    });
    expect(resp.status).toBe(200);
    expect(JSON.parse(resp.headers.get("x-sampling-params") ?? "{}")).toEqual(sampling);
    const body = await resp.json();
    expect(body.completions).toHaveLength(4);
  });

  it("same request twice yields identical output (inference determinism)", async () => {
    const urls = await stubServers();
    const request = {
      role: "aux" as const,
      messages: [{ type: "text", text: "determinism check" }],
      n_samples: 2,
      seed: 5,
    };
    const a = await (await post(urls.chat, "/v1/chat", request)).json();
    const b = await (await post(urls.chat, "/v1/chat", request)).json();
    expect(a).toEqual(b);

    const e1 = await (await post(urls.embed, "/v1/embed", { texts: ["same text"] })).json();
    const e2 = await (await post(urls.embed, "/v1/embed", { texts: ["same text"] })).json();
    expect(e1).toEqual(e2);
  });

  it("embed returns one vector per text with a constant dim", async () => {
    const urls = await stubServers();
    const resp = await post(urls.embed, "/v1/embed", { texts: ["one", "two words", "three little words"] });
    const body = await resp.json();
    expect(body.vectors).toHaveLength(3);
    for (const vec of body.vectors) expect(vec).toHaveLength(body.dim);
  });

  it("detect with no match returns 200 and empty regions", async () => {
    const urls = await stubServers();
    const resp = await post(urls.detect, "/v1/detect", {
      image: { type: "image", data_b64: TINY_PNG_B64 },
      prompt: "nothing recorded for this",
      min_score: 0.3,
    });
    expect(resp.status).toBe(200);
    expect((await resp.json()).regions).toEqual([]);
  });

  it("detect applies min_score filtering server-side", async () => {
    const urls = await stubServers();
    const low = await (
      await post(urls.detect, "/v1/detect", {
        image: { type: "image", data_b64: TINY_PNG_B64 },
        prompt: "child",
        min_score: 0.1,
      })
    ).json();
    const high = await (
      await post(urls.detect, "/v1/detect", {
        image: { type: "image", data_b64: TINY_PNG_B64 },
        prompt: "child",
        min_score: 0.9,
      })
    ).json();
    expect(low.regions.length).toBeGreaterThan(high.regions.length);
    for (const region of high.regions) expect(region.score).toBeGreaterThanOrEqual(0.9);
  });
});

describe("invalid requests are rejected with 400 and a field name", () => {
  it("unsupported chat field", async () => {
    const urls = await stubServers();
    const resp = await post(urls.chat, "/v1/chat", {
      role: "main",
      messages: [{ type: "text", text: "x" }],
      stream: true,
    });
    expect(resp.status).toBe(400);
    const body = await resp.json();
    expect(JSON.stringify(body.fields)).toContain("stream");
  });

  it("chat without any text part", async () => {
    const urls = await stubServers();
    const resp = await post(urls.chat, "/v1/chat", {
      role: "main",
      messages: [{ type: "image", data_b64: TINY_PNG_B64 }],
    });
    expect(resp.status).toBe(400);
    expect(JSON.stringify((await resp.json()).fields)).toContain("messages");
  });

  it("top_p outside (0, 1]", async () => {
    const urls = await stubServers();
    const resp = await post(urls.chat, "/v1/chat", {
      role: "main",
      messages: [{ type: "text", text: "x" }],
      sampling: { temperature: 1, top_p: 0, top_k: 0, max_tokens: 10 },
    });
    expect(resp.status).toBe(400);
    expect(JSON.stringify((await resp.json()).fields)).toContain("top_p");
  });

  it("embed with an empty text", async () => {
    const urls = await stubServers();
    const resp = await post(urls.embed, "/v1/embed", { texts: ["fine", "  "] });
    expect(resp.status).toBe(400);
    expect(JSON.stringify((await resp.json()).fields)).toContain("texts");
  });

  it("embed with no texts", async () => {
    const urls = await stubServers();
    const resp = await post(urls.embed, "/v1/embed", { texts: [] });
    expect(resp.status).toBe(400);
  });

  it("detect with min_score = 1.1", async () => {
    const urls = await stubServers();
    const resp = await post(urls.detect, "/v1/detect", {
      image: { type: "image", data_b64: TINY_PNG_B64 },
      prompt: "child",
      min_score: 1.1,
    });
    expect(resp.status).toBe(400);
    expect(JSON.stringify((await resp.json()).fields)).toContain("min_score");
  });
});

describe("operational behavior", () => {
  it("bounded queue answers 429 on overflow", async () => {
    class SlowRunner extends StubChatRunner {
      override async generate(req: Parameters<StubChatRunner["generate"]>[0], i: number) {
        await new Promise((r) => setTimeout(r, 150));
        return super.generate(req, i);
      }
    }
    const url = await serve(chatApp(new SlowRunner(), new SerialQueue(1)));
    const request = { role: "main", messages: [{ type: "text", text: "x" }] };
    const replies = await Promise.all([
      post(url, "/v1/chat", request),
      post(url, "/v1/chat", request),
      post(url, "/v1/chat", request),
      post(url, "/v1/chat", request),
    ]);
    const statuses = replies.map((r) => r.status).sort();
    expect(statuses.filter((s) => s === 429).length).toBeGreaterThanOrEqual(1);
    expect(statuses.filter((s) => s === 200).length).toBeGreaterThanOrEqual(2);
  });

  it("unreachable model process surfaces as 503", async () => {
    const bridge = new CommandBridge("/definitely/not/a/model-server", "cpu");
    const url = await serve(chatApp(new CommandChatRunner(bridge, "cmd-test"), new SerialQueue(2)));
    const resp = await post(url, "/v1/chat", {
      role: "main",
      messages: [{ type: "text", text: "x" }],
    });
    expect(resp.status).toBe(503);
  });

  it("health endpoint", async () => {
    const urls = await stubServers();
    const resp = await fetch(urls.chat + "/health");
    expect(resp.status).toBe(200);
  });
});
