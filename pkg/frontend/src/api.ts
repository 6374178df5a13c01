// Gateway HTTP client. Streaming uses fetch + a manual SSE reader loop so
// we can POST a JSON body (EventSource cannot) and abort mid-stream.

import type { ChatMessage, Language } from "./convo.js";

export interface ModelSummary {
  model_id: string;
  display_name: string;
  context_window_tokens: number;
}

export interface Usage {
  prompt_tokens: number;
  completion_tokens: number;
  cost: string;
  finish_reason?: string;
}

export interface ErrorBody {
  reason: string;
  detail?: string;
  [extra: string]: unknown;
}

export class GatewayRequestError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(`gateway ${status}: ${body.reason}`);
  }
}

export interface TurnRequest {
  modelId: string;
  language: Language;
  temperature: number;
  messages: ChatMessage[];
}

export interface StreamHandlers {
  onContent: (text: string) => void;
  onUsage?: (usage: Usage) => void;
  onDone: () => void;
  onError: (error: Error) => void;
}

export interface ClientOptions {
  baseUrl?: string;
  // the SSO proxy injects this header in production; tests and the demo
  // page supply it explicitly
  assertion?: () => string;
  fetchImpl?: typeof fetch;
}

interface SseEvent {
  event: string;
  data: string;
}

// Incremental SSE parser: feed decoded text, get completed events back.
// Handles events split across arbitrary chunk boundaries.
export class SseBuffer {
  private buffer = "";

  push(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    let boundary = this.buffer.indexOf("\n\n");
    while (boundary !== -1) {
      const block = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary + 2);
      const parsed = parseBlock(block);
      if (parsed) events.push(parsed);
      boundary = this.buffer.indexOf("\n\n");
    }
    return events;
  }
}

function parseBlock(block: string): SseEvent | null {
  let event = "message";
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("event:")) {
      event = line.slice("event:".length).trim();
    } else if (line.startsWith("data:")) {
      data.push(line.slice("data:".length).trimStart());
    }
  }
  if (data.length === 0) return null;
  return { event, data: data.join("\n") };
}

async function errorFromResponse(response: Response): Promise<GatewayRequestError> {
  let body: ErrorBody = { reason: `http_${response.status}` };
  try {
    const parsed = await response.json();
    if (parsed && typeof parsed === "object" && parsed.error) {
      body = parsed.error as ErrorBody;
    }
  } catch {
    // keep the status-derived reason
  }
  return new GatewayRequestError(response.status, body);
}

export class GatewayClient {
  private baseUrl: string;
  private assertion: () => string;
  private fetchImpl: typeof fetch;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = options.baseUrl ?? "";
    this.assertion = options.assertion ?? (() => "");
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    const assertion = this.assertion();
    if (assertion) headers["x-identity-assertion"] = assertion;
    return headers;
  }

  async listModels(): Promise<ModelSummary[]> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/models`);
    if (!response.ok) throw await errorFromResponse(response);
    const parsed = await response.json();
    return parsed.models as ModelSummary[];
  }

  // Streamed turn; resolves once the stream finished (or errored). Abort
  // via the returned controller keeps whatever content already arrived.
  sendTurn(request: TurnRequest, handlers: StreamHandlers): AbortController {
    const controller = new AbortController();
    this.streamTurn(request, handlers, controller.signal).catch((error) => {
      handlers.onError(error instanceof Error ? error : new Error(String(error)));
    });
    return controller;
  }

  private async streamTurn(
    request: TurnRequest,
    handlers: StreamHandlers,
    signal: AbortSignal,
  ): Promise<void> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/chat`, {
      method: "POST",
      headers: this.headers(),
      signal,
      body: JSON.stringify({
        model_id: request.modelId,
        language: request.language,
        temperature: request.temperature,
        messages: request.messages,
        stream: true,
      }),
    });
    if (!response.ok) {
      handlers.onError(await errorFromResponse(response));
      return;
    }
    if (!response.body) {
      handlers.onError(new Error("response has no body"));
      return;
    }

    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const sse = new SseBuffer();
    let done = false;
    while (true) {
      const { value, done: finished } = await reader.read();
      if (finished) break;
      for (const event of sse.push(decoder.decode(value, { stream: true }))) {
        if (event.event === "content") {
          handlers.onContent(JSON.parse(event.data).text as string);
        } else if (event.event === "usage") {
          handlers.onUsage?.(JSON.parse(event.data) as Usage);
        } else if (event.event === "done") {
          done = true;
        }
      }
    }
    if (done) {
      handlers.onDone();
    } else {
      handlers.onError(new Error("stream ended before the done event"));
    }
  }
}
