// Conversation documents: line one is canonical JSON, line two its sha256.
// Must stay byte-compatible with the gateway's exporter, see
// docs/conversation_format.md in the gateway repo for the field rules.

export type Role = "user" | "assistant";
export type Language = "de" | "en";

export interface ChatMessage {
  role: Role;
  content: string;
}

export interface ConversationState {
  modelId: string;
  language: Language;
  temperature: number;
  createdAt: string;
  messages: ChatMessage[];
}

export type ImportFailureReason =
  | "bad_checksum"
  | "unsupported_version"
  | "malformed"
  | "invariant_violation";

export class ImportFailure extends Error {
  constructor(
    readonly reason: ImportFailureReason,
    readonly detail: string,
  ) {
    super(`${reason}: ${detail}`);
  }
}

export const FORMAT_VERSION = 1;
export const INPUT_CHAR_LIMIT = 5000;

const TEMPERATURE_PATTERN = /^[01]\.\d{2}$/;
const CREATED_AT_PATTERN = /^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})Z$/;
const BODY_KEYS = "created_at,format_version,language,messages,model_id,temperature";

// The gateway counts unicode code points; string.length counts UTF-16
// units, which overcounts astral characters like emoji.
export function charCount(text: string): number {
  let count = 0;
  for (const _ of text) count += 1;
  return count;
}

export function utcTimestamp(date = new Date()): string {
  return date.toISOString().slice(0, 19) + "Z";
}

async function sha256Hex(bytes: Uint8Array): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", bytes as BufferSource);
  return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, "0")).join("");
}

function canonicalBody(state: ConversationState): Uint8Array {
  // insertion order below is the sorted key order the canonical form requires
  const body = {
    created_at: state.createdAt,
    format_version: FORMAT_VERSION,
    language: state.language,
    messages: state.messages.map((m) => ({ content: m.content, role: m.role })),
    model_id: state.modelId,
    temperature: state.temperature.toFixed(2),
  };
  return new TextEncoder().encode(JSON.stringify(body));
}

export async function exportConversation(state: ConversationState): Promise<Uint8Array> {
  const body = canonicalBody(state);
  const checksum = new TextEncoder().encode(await sha256Hex(body));
  const out = new Uint8Array(body.length + checksum.length + 2);
  out.set(body, 0);
  out[body.length] = 0x0a;
  out.set(checksum, body.length + 1);
  out[out.length - 1] = 0x0a;
  return out;
}

function fail(reason: ImportFailureReason, detail: string): never {
  throw new ImportFailure(reason, detail);
}

function isPlainObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

export async function importConversation(
  raw: Uint8Array,
  inputCharLimit = INPUT_CHAR_LIMIT,
): Promise<ConversationState> {
  // integrity first, on the raw bytes: nothing is trusted before the
  // checksum matches
  if (raw.length === 0 || raw[raw.length - 1] !== 0x0a) {
    fail("bad_checksum", "document does not end with a checksum line");
  }
  const stripped = raw.subarray(0, raw.length - 1);
  const split = stripped.lastIndexOf(0x0a);
  if (split === -1) {
    fail("bad_checksum", "document does not end with a checksum line");
  }
  const body = stripped.subarray(0, split);
  const checksumLine = stripped.subarray(split + 1);
  let presented = "";
  for (const byte of checksumLine) {
    if (byte > 0x7f) fail("bad_checksum", "checksum line is not readable");
    presented += String.fromCharCode(byte);
  }
  if ((await sha256Hex(body)) !== presented) {
    fail("bad_checksum", "checksum does not match document body");
  }

  let parsed: unknown;
  try {
    parsed = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(body));
  } catch {
    fail("malformed", "body is not valid JSON");
  }
  if (!isPlainObject(parsed)) {
    fail("malformed", "body must be a JSON object");
  }
  if (Object.keys(parsed).sort().join(",") !== BODY_KEYS) {
    fail("malformed", "body must carry exactly the documented fields");
  }

  const version = parsed.format_version;
  if (typeof version !== "number" || !Number.isInteger(version)) {
    fail("malformed", "format_version must be an integer");
  }
  if (version !== FORMAT_VERSION) {
    fail("unsupported_version", `format_version ${version} is not supported`);
  }

  const modelId = parsed.model_id;
  if (typeof modelId !== "string" || modelId === "") {
    fail("malformed", "model_id must be a non-empty string");
  }

  const language = parsed.language;
  if (typeof language !== "string") {
    fail("malformed", "language must be a string");
  }
  if (language !== "de" && language !== "en") {
    fail("invariant_violation", `language ${JSON.stringify(language)} is not supported`);
  }

  const temperatureValue = parsed.temperature;
  if (typeof temperatureValue !== "string") {
    fail("malformed", "temperature must be a string");
  }
  if (!TEMPERATURE_PATTERN.test(temperatureValue)) {
    fail("invariant_violation", "temperature must be a two-decimal value in [0,1]");
  }
  const temperature = Number(temperatureValue);
  if (!(temperature >= 0 && temperature <= 1)) {
    fail("invariant_violation", "temperature must be within [0,1]");
  }

  const createdAt = parsed.created_at;
  if (typeof createdAt !== "string") {
    fail("malformed", "created_at must be a string");
  }
  const match = CREATED_AT_PATTERN.exec(createdAt);
  if (!match || !isRealUtcDate(match)) {
    fail("invariant_violation", "created_at must be an ISO-8601 UTC timestamp");
  }

  const rawMessages = parsed.messages;
  if (!Array.isArray(rawMessages)) {
    fail("malformed", "messages must be a list");
  }
  const messages: ChatMessage[] = [];
  rawMessages.forEach((entry, index) => {
    if (!isPlainObject(entry) || Object.keys(entry).sort().join(",") !== "content,role") {
      fail("malformed", `messages[${index}] must carry exactly role and content`);
    }
    if (typeof entry.role !== "string" || typeof entry.content !== "string") {
      fail("malformed", `messages[${index}] fields must be strings`);
    }
    if (entry.role !== "user" && entry.role !== "assistant") {
      fail("invariant_violation", `messages[${index}].role must be user or assistant`);
    }
    messages.push({ role: entry.role, content: entry.content });
  });
  messages.forEach((message, index) => {
    const expected = index % 2 === 0 ? "user" : "assistant";
    if (message.role !== expected) {
      fail("invariant_violation", `messages[${index}].role must be ${JSON.stringify(expected)}`);
    }
  });
  messages.forEach((message, index) => {
    if (message.role === "user" && charCount(message.content) > inputCharLimit) {
      fail("invariant_violation", `messages[${index}] exceeds the ${inputCharLimit}-character input limit`);
    }
  });

  return {
    modelId,
    language,
    temperature,
    createdAt,
    messages,
  };
}

function isRealUtcDate(match: RegExpExecArray): boolean {
  const [, year, month, day, hour, minute, second] = match.map(Number);
  const date = new Date(Date.UTC(year, month - 1, day, hour, minute, second));
  return (
    date.getUTCFullYear() === year &&
    date.getUTCMonth() === month - 1 &&
    date.getUTCDate() === day &&
    date.getUTCHours() === hour &&
    date.getUTCMinutes() === minute &&
    date.getUTCSeconds() === second
  );
}
