// Session state and its transitions, DOM-free so tests can drive it
// directly. One in-flight stream at a time; settings survive a clear.

import {
  charCount,
  INPUT_CHAR_LIMIT,
  utcTimestamp,
  type ChatMessage,
  type ConversationState,
  type Language,
} from "./convo.js";
import type { ModelSummary } from "./api.js";

export interface Notice {
  kind: "error" | "info";
  text: string;
  retryable: boolean;
}

export interface SessionState {
  models: ModelSummary[];
  modelId: string;
  language: Language;
  temperature: number;
  createdAt: string;
  messages: ChatMessage[];
  draft: string;
  pendingStream: boolean;
  notice: Notice | null;
}

export function newSession(models: ModelSummary[]): SessionState {
  return {
    models,
    modelId: models[0]?.model_id ?? "",
    language: "en",
    temperature: 0.2,
    createdAt: utcTimestamp(),
    messages: [],
    draft: "",
    pendingStream: false,
    notice: null,
  };
}

export function setTemperature(state: SessionState, value: number): void {
  const clamped = Math.min(1, Math.max(0, value));
  state.temperature = Math.round(clamped * 100) / 100;
}

export function draftLength(state: SessionState): number {
  return charCount(state.draft);
}

export function overLimit(state: SessionState, limit = INPUT_CHAR_LIMIT): boolean {
  return draftLength(state) > limit;
}

export function canSend(state: SessionState, limit = INPUT_CHAR_LIMIT): boolean {
  const length = draftLength(state);
  return !state.pendingStream && length > 0 && length <= limit;
}

// beginTurn moves the draft into the transcript and opens an empty
// assistant message that stream deltas append to.
export function beginTurn(state: SessionState): ChatMessage[] {
  const history: ChatMessage[] = [...state.messages, { role: "user", content: state.draft }];
  state.messages = [...history, { role: "assistant", content: "" }];
  state.draft = "";
  state.pendingStream = true;
  state.notice = null;
  return history;
}

export function appendDelta(state: SessionState, text: string): void {
  const last = state.messages[state.messages.length - 1];
  if (last && last.role === "assistant") {
    last.content += text;
  }
}

export function finishTurn(state: SessionState): void {
  state.pendingStream = false;
}

// A failed stream keeps whatever partial content already arrived. If
// nothing arrived at all, the turn is rolled back and the user's text
// returns to the input so "send" doubles as the retry affordance.
export function failTurn(state: SessionState, text: string): void {
  state.pendingStream = false;
  const last = state.messages[state.messages.length - 1];
  if (last && last.role === "assistant" && last.content === "") {
    const userTurn = state.messages[state.messages.length - 2];
    state.messages = state.messages.slice(0, -2);
    if (userTurn && state.draft === "") {
      state.draft = userTurn.content;
    }
  }
  state.notice = { kind: "error", text, retryable: true };
}

export function clearConversation(state: SessionState): void {
  state.messages = [];
  state.createdAt = utcTimestamp();
  state.notice = null;
  // model, language, and temperature are deliberately retained
}

export function toConversation(state: SessionState): ConversationState {
  const messages = state.messages.map((m) => ({ ...m }));
  const last = messages[messages.length - 1];
  if (last && last.role === "assistant" && last.content === "") {
    messages.pop(); // a mid-stream stub is not part of the conversation
  }
  return {
    modelId: state.modelId,
    language: state.language,
    temperature: state.temperature,
    createdAt: state.createdAt,
    messages,
  };
}

export function restoreConversation(state: SessionState, restored: ConversationState): void {
  state.modelId = restored.modelId;
  state.language = restored.language;
  state.temperature = restored.temperature;
  state.createdAt = restored.createdAt;
  state.messages = restored.messages.map((m) => ({ ...m }));
  state.pendingStream = false;
  state.notice = null;
}
