// DOM wiring for the chat view. Completion text is always rendered with
// textContent, never innerHTML, so model output containing markup stays
// inert on the page.

import { GatewayClient, GatewayRequestError, type Usage } from "./api.js";
import {
  exportConversation,
  importConversation,
  ImportFailure,
  INPUT_CHAR_LIMIT,
  utcTimestamp,
} from "./convo.js";
import {
  appendDelta,
  beginTurn,
  canSend,
  clearConversation,
  draftLength,
  failTurn,
  finishTurn,
  newSession,
  overLimit,
  restoreConversation,
  setTemperature,
  toConversation,
  type SessionState,
} from "./state.js";

// reason-coded errors become distinct user-readable notices
const ERROR_COPY: Record<string, string> = {
  input_too_long: "Your message is over the character limit.",
  blocked: "This request was declined by the content safety policy.",
  no_capacity: "All model endpoints are busy right now. Try again shortly.",
  budget_exceeded: "The spending budget for this model is used up.",
  upstream_error: "The model endpoint failed to answer.",
  unauthenticated: "You are not signed in.",
  unauthorized: "Your account is not authorized for this service.",
};

const IMPORT_COPY: Record<string, string> = {
  bad_checksum: "This file is corrupt: its checksum does not match.",
  unsupported_version: "This file was saved by an unsupported version.",
  malformed: "This is not a conversation file.",
  invariant_violation: "This conversation file carries invalid values",
};

export function describeError(error: Error): string {
  if (error instanceof GatewayRequestError) {
    return ERROR_COPY[error.body.reason] ?? `Request failed (${error.body.reason}).`;
  }
  return "The connection was interrupted.";
}

export function describeImportFailure(failure: ImportFailure): string {
  const base = IMPORT_COPY[failure.reason] ?? "This file could not be read";
  return failure.reason === "invariant_violation" ? `${base}: ${failure.detail}.` : base;
}

export interface ChatView {
  state: SessionState;
  root: HTMLElement;
  send: () => void;
  download: () => Promise<Blob>;
  uploadFile: (file: Blob) => Promise<void>;
  clear: () => void;
  render: () => void;
}

const VIEW_HTML = `
  <p class="use-notice"></p>
  <div class="controls">
    <label>Model <select id="model-select"></select></label>
    <label>Language
      <select id="language-select">
        <option value="en">English</option>
        <option value="de">Deutsch</option>
      </select>
    </label>
    <label>Temperature
      <input id="temperature-slider" type="range" min="0" max="1" step="0.01">
      <span id="temperature-value"></span>
    </label>
  </div>
  <div id="transcript" class="transcript"></div>
  <p id="notice" class="notice" hidden></p>
  <div class="composer">
    <textarea id="draft" rows="3"></textarea>
    <span id="char-counter" class="char-counter"></span>
    <button id="send-button">Send</button>
  </div>
  <div class="file-actions">
    <button id="download-button">Download conversation</button>
    <button id="upload-button">Upload conversation</button>
    <input id="upload-input" type="file" hidden>
    <button id="clear-button">Clear conversation</button>
  </div>
`;

export interface MountOptions {
  useNotice?: string;
  inputCharLimit?: number;
  // hook for tests; the browser path saves through an <a download> click
  saveFile?: (blob: Blob, filename: string) => void;
}

export function mountChatView(
  root: HTMLElement,
  client: GatewayClient,
  options: MountOptions = {},
): ChatView {
  const limit = options.inputCharLimit ?? INPUT_CHAR_LIMIT;
  root.innerHTML = VIEW_HTML;
  const byId = <T extends HTMLElement>(id: string) => root.querySelector(`#${id}`) as T;

  const modelSelect = byId<HTMLSelectElement>("model-select");
  const languageSelect = byId<HTMLSelectElement>("language-select");
  const slider = byId<HTMLInputElement>("temperature-slider");
  const sliderValue = byId<HTMLSpanElement>("temperature-value");
  const transcript = byId<HTMLDivElement>("transcript");
  const noticeEl = byId<HTMLParagraphElement>("notice");
  const draftEl = byId<HTMLTextAreaElement>("draft");
  const counter = byId<HTMLSpanElement>("char-counter");
  const sendButton = byId<HTMLButtonElement>("send-button");
  const uploadInput = byId<HTMLInputElement>("upload-input");

  root.querySelector(".use-notice")!.textContent =
    options.useNotice ?? "For work use. Check answers before relying on them; outputs can be confidently wrong.";

  const state = newSession([]);

  function render(): void {
    modelSelect.innerHTML = "";
    for (const model of state.models) {
      const option = document.createElement("option");
      option.value = model.model_id;
      option.textContent = model.display_name;
      modelSelect.appendChild(option);
    }
    modelSelect.value = state.modelId;
    languageSelect.value = state.language;
    slider.value = String(state.temperature);
    sliderValue.textContent = state.temperature.toFixed(2);

    transcript.innerHTML = "";
    for (const message of state.messages) {
      const row = document.createElement("div");
      row.className = `msg ${message.role}`;
      row.textContent = message.content; // inert by construction
      transcript.appendChild(row);
    }

    draftEl.value = state.draft;
    counter.textContent = `${draftLength(state)} / ${limit}`;
    counter.classList.toggle("over-limit", overLimit(state, limit));
    sendButton.disabled = !canSend(state, limit);

    if (state.notice) {
      noticeEl.hidden = false;
      noticeEl.textContent = state.notice.retryable ? `${state.notice.text} ` : state.notice.text;
      if (state.notice.retryable) {
        const retry = document.createElement("button");
        retry.textContent = "Retry";
        retry.addEventListener("click", send);
        noticeEl.appendChild(retry);
      }
    } else {
      noticeEl.hidden = true;
      noticeEl.textContent = "";
    }
  }

  function send(): void {
    if (!canSend(state, limit)) return;
    const history = beginTurn(state);
    render();
    client.sendTurn(
      {
        modelId: state.modelId,
        language: state.language,
        temperature: state.temperature,
        messages: history,
      },
      {
        onContent: (text) => {
          appendDelta(state, text);
          render();
        },
        onUsage: (_usage: Usage) => {},
        onDone: () => {
          finishTurn(state);
          render();
        },
        onError: (error) => {
          failTurn(state, describeError(error));
          render();
        },
      },
    );
  }

  async function download(): Promise<Blob> {
    const bytes = await exportConversation(toConversation(state));
    const blob = new Blob([bytes as BlobPart], { type: "text/plain;charset=utf-8" });
    const filename = `conversation-${state.createdAt.replaceAll(":", "")}.txt`;
    if (options.saveFile) {
      options.saveFile(blob, filename);
    } else {
      const anchor = document.createElement("a");
      anchor.href = URL.createObjectURL(blob);
      anchor.download = filename;
      document.body.appendChild(anchor);
      anchor.click();
      anchor.remove();
      URL.revokeObjectURL(anchor.href);
    }
    return blob;
  }

  async function uploadFile(file: Blob): Promise<void> {
    const raw = new Uint8Array(await file.arrayBuffer());
    try {
      const restored = await importConversation(raw, limit);
      restoreConversation(state, restored);
    } catch (error) {
      if (error instanceof ImportFailure) {
        // session stays untouched on any import failure
        state.notice = { kind: "error", text: describeImportFailure(error), retryable: false };
      } else {
        throw error;
      }
    }
    render();
  }

  function clear(): void {
    clearConversation(state);
    state.createdAt = utcTimestamp();
    render();
  }

  // -- control wiring --
  modelSelect.addEventListener("change", () => {
    state.modelId = modelSelect.value;
  });
  languageSelect.addEventListener("change", () => {
    state.language = languageSelect.value === "de" ? "de" : "en";
  });
  slider.addEventListener("input", () => {
    setTemperature(state, Number(slider.value));
    sliderValue.textContent = state.temperature.toFixed(2);
  });
  draftEl.addEventListener("input", () => {
    state.draft = draftEl.value;
    counter.textContent = `${draftLength(state)} / ${limit}`;
    counter.classList.toggle("over-limit", overLimit(state, limit));
    sendButton.disabled = !canSend(state, limit);
  });
  sendButton.addEventListener("click", send);
  byId<HTMLButtonElement>("download-button").addEventListener("click", () => {
    void download();
  });
  byId<HTMLButtonElement>("upload-button").addEventListener("click", () => uploadInput.click());
  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (file) void uploadFile(file);
    uploadInput.value = "";
  });
  byId<HTMLButtonElement>("clear-button").addEventListener("click", clear);

  const view: ChatView = { state, root, send, download, uploadFile, clear, render };

  void client
    .listModels()
    .then((models) => {
      state.models = models;
      if (!models.some((m) => m.model_id === state.modelId)) {
        state.modelId = models[0]?.model_id ?? "";
      }
      render();
    })
    .catch((error: Error) => {
      state.notice = { kind: "error", text: describeError(error), retryable: false };
      render();
    });

  render();
  return view;
}
