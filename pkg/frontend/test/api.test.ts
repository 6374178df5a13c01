import { describe, expect, it, vi } from "vitest";

import {
  GatewayClient,
  GatewayRequestError,
  SseBuffer,
  type StreamHandlers,
  type TurnRequest,
  type Usage,
} from "../src/api.js";
import { fakeJsonResponse, fakeStreamResponse, sseWire } from "./helpers.js";

const WIRE = sseWire([
  ["content", { text: "Guten " }],
  ["content", { text: "Tag" }],
  ["usage", { prompt_tokens: 12, completion_tokens: 3, cost: "0.0012", finish_reason: "stop" }],
  ["done", {}],
]);

describe("SseBuffer", () => {
  it("parses a full stream in one push", () => {
    const events = new SseBuffer().push(WIRE);
    expect(events.map((e) => e.event)).toEqual(["content", "content", "usage", "done"]);
    expect(JSON.parse(events[0].data).text).toBe("Guten ");
  });

  it("is insensitive to chunk boundaries", () => {
    for (const size of [1, 2, 3, 5, 8, 13, 64]) {
      const buffer = new SseBuffer();
      const events = [];
      for (let i = 0; i < WIRE.length; i += size) {
        events.push(...buffer.push(WIRE.slice(i, i + size)));
      }
      expect(events, `chunk size ${size}`).toEqual(new SseBuffer().push(WIRE));
    }
  });

  it("joins multi-line data and skips dataless blocks", () => {
    const events = new SseBuffer().push("event: note\ndata: a\ndata: b\n\nevent: ping\n\ndata: tail\n\n");
    expect(events).toEqual([
      { event: "note", data: "a\nb" },
      { event: "message", data: "tail" },
    ]);
  });

  it("holds incomplete events until they finish", () => {
    const buffer = new SseBuffer();
    expect(buffer.push("event: content\ndata: {\"text\":\"x\"}\n")).toEqual([]);
    expect(buffer.push("\n")).toEqual([{ event: "content", data: '{"text":"x"}' }]);
  });
});

function drive(client: GatewayClient, request: TurnRequest) {
  return new Promise<{ contents: string[]; usage: Usage | null; error: Error | null }>((resolve) => {
    const contents: string[] = [];
    let usage: Usage | null = null;
    const handlers: StreamHandlers = {
      onContent: (text) => contents.push(text),
      onUsage: (u) => {
        usage = u;
      },
      onDone: () => resolve({ contents, usage, error: null }),
      onError: (error) => resolve({ contents, usage, error }),
    };
    client.sendTurn(request, handlers);
  });
}

const TURN: TurnRequest = {
  modelId: "standard-4k",
  language: "de",
  temperature: 0.2,
  messages: [{ role: "user", content: "hallo" }],
};

describe("GatewayClient", () => {
  it("lists models", async () => {
    const fetchImpl = vi.fn(async () =>
      fakeJsonResponse(200, { models: [{ model_id: "m", display_name: "M", context_window_tokens: 1 }] }),
    );
    const client = new GatewayClient({ baseUrl: "http://gw", fetchImpl });
    const models = await client.listModels();
    expect(models[0].model_id).toBe("m");
    expect(fetchImpl).toHaveBeenCalledWith("http://gw/v1/models");
  });

  it("turns error envelopes into typed errors", async () => {
    const fetchImpl = vi.fn(async () => fakeJsonResponse(429, { error: { reason: "no_capacity", detail: "later" } }));
    const client = new GatewayClient({ fetchImpl });
    const error = await client.listModels().catch((e) => e);
    expect(error).toBeInstanceOf(GatewayRequestError);
    expect(error.status).toBe(429);
    expect(error.body.reason).toBe("no_capacity");
  });

  it("falls back to a status reason when the body is not an envelope", async () => {
    const fetchImpl = vi.fn(async () =>
      ({ ok: false, status: 503, json: async () => ({ oops: 1 }) }) as unknown as Response,
    );
    const error = await new GatewayClient({ fetchImpl }).listModels().catch((e) => e);
    expect(error.body.reason).toBe("http_503");
  });

  it("streams a turn and reports content, usage, done", async () => {
    const fetchImpl = vi.fn(async () => fakeStreamResponse(WIRE, 5));
    const client = new GatewayClient({ baseUrl: "http://gw", assertion: () => "tok", fetchImpl });
    const result = await drive(client, TURN);
    expect(result.error).toBeNull();
    expect(result.contents.join("")).toBe("Guten Tag");
    expect(result.usage?.completion_tokens).toBe(3);

    const [url, init] = fetchImpl.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("http://gw/v1/chat");
    expect(init.method).toBe("POST");
    const headers = init.headers as Record<string, string>;
    expect(headers["x-identity-assertion"]).toBe("tok");
    expect(headers["content-type"]).toBe("application/json");
    const body = JSON.parse(init.body as string);
    expect(body).toEqual({
      model_id: "standard-4k",
      language: "de",
      temperature: 0.2,
      messages: [{ role: "user", content: "hallo" }],
      stream: true,
    });
  });

  it("omits the assertion header when there is none", async () => {
    const fetchImpl = vi.fn(async () => fakeStreamResponse(WIRE));
    await drive(new GatewayClient({ fetchImpl }), TURN);
    const [, init] = fetchImpl.mock.calls[0] as unknown as [string, RequestInit];
    expect("x-identity-assertion" in (init.headers as Record<string, string>)).toBe(false);
  });

  it("routes refusals to onError with the decoded reason", async () => {
    const fetchImpl = vi.fn(async () => fakeJsonResponse(422, { error: { reason: "blocked", detail: "rule" } }));
    const result = await drive(new GatewayClient({ fetchImpl }), TURN);
    expect(result.error).toBeInstanceOf(GatewayRequestError);
    expect((result.error as GatewayRequestError).body.reason).toBe("blocked");
    expect(result.contents).toEqual([]);
  });

  it("treats a stream that never finishes as an error", async () => {
    const truncated = WIRE.slice(0, WIRE.indexOf("event: done"));
    const fetchImpl = vi.fn(async () => fakeStreamResponse(truncated));
    const result = await drive(new GatewayClient({ fetchImpl }), TURN);
    expect(result.contents.join("")).toBe("Guten Tag");
    expect(result.error?.message).toMatch(/before the done event/);
  });

  it("surfaces network failures through onError", async () => {
    const fetchImpl = vi.fn(async () => {
      throw new TypeError("fetch failed");
    });
    const result = await drive(new GatewayClient({ fetchImpl }), TURN);
    expect(result.error?.message).toBe("fetch failed");
  });
});
