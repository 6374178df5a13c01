// Shared bits for the test suites. The checksum helper deliberately uses
// node:crypto rather than the module under test, so a digest bug in
// src/convo.ts cannot hide from its own tests.

import { createHash } from "node:crypto";

export function packDoc(body: string): Uint8Array {
  const bodyBytes = new TextEncoder().encode(body);
  const digest = createHash("sha256").update(bodyBytes).digest("hex");
  const wire = new TextEncoder().encode(digest + "\n");
  const out = new Uint8Array(bodyBytes.length + 1 + wire.length);
  out.set(bodyBytes, 0);
  out[bodyBytes.length] = 0x0a;
  out.set(wire, bodyBytes.length + 1);
  return out;
}

export function bodyOf(fields: Record<string, unknown>): string {
  const defaults: Record<string, unknown> = {
    created_at: "2026-03-01T12:00:00Z",
    format_version: 1,
    language: "en",
    messages: [{ content: "hi", role: "user" }],
    model_id: "standard-4k",
    temperature: "0.20",
  };
  return JSON.stringify({ ...defaults, ...fields });
}

export function sseWire(events: Array<[string, unknown]>): string {
  return events.map(([event, payload]) => `event: ${event}\ndata: ${JSON.stringify(payload)}\n\n`).join("");
}

// Response stand-ins covering exactly the surface GatewayClient touches,
// independent of whichever fetch classes the test environment ships.
export function fakeJsonResponse(status: number, payload: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => payload,
  } as unknown as Response;
}

export function fakeStreamResponse(text: string, chunkSize = 7): Response {
  const bytes = new TextEncoder().encode(text);
  let offset = 0;
  return {
    ok: true,
    status: 200,
    body: {
      getReader: () => ({
        read: async () => {
          if (offset >= bytes.length) return { done: true, value: undefined };
          const value = bytes.subarray(offset, offset + chunkSize);
          offset += chunkSize;
          return { done: false, value };
        },
      }),
    },
  } as unknown as Response;
}

export async function until(check: () => boolean, timeoutMs = 15000): Promise<void> {
  const start = Date.now();
  while (!check()) {
    if (Date.now() - start > timeoutMs) throw new Error("condition not reached in time");
    await new Promise((resolve) => setTimeout(resolve, 20));
  }
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

// Deterministic PRNG so generated-document tests are reproducible.
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
