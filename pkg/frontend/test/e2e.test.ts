// Full round trip against the real gateway and simulator, driven through
// the mounted view. Needs the Python package installed (the `gateway` and
// `sim` console scripts must be on PATH).

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import os from "node:os";
import path from "node:path";
import { Window } from "happy-dom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GatewayClient } from "../src/api.js";
import { mountChatView, type ChatView } from "../src/ui.js";
import { until } from "./helpers.js";

const SIM_PORT = 9773;
const GW_PORT = 9774;
const GW_URL = `http://127.0.0.1:${GW_PORT}`;
const IDENTITY_KEY = "ui-e2e-secret";

const SIM_YAML = `
endpoints:
  - endpoint_id: ep-a
    tpm_limit: 100000
    rpm_limit: 1000
    base_latency_ms: 5
    latency_jitter_ms: 5
    seed: 11
  - endpoint_id: ep-b
    tpm_limit: 100000
    rpm_limit: 1000
    base_latency_ms: 5
    latency_jitter_ms: 5
    seed: 12
`;

const GATEWAY_YAML = `
listen_address: 127.0.0.1:${GW_PORT}
input_char_limit: 5000
completion_token_allowance: 512
currency: EUR
identity_key: ${IDENTITY_KEY}
authorized_groups:
  - staff
models:
  - model_id: standard-4k
    display_name: Standard (4k)
    context_window_tokens: 4096
    price_per_1k_prompt_tokens: "0.01"
    price_per_1k_completion_tokens: "0.03"
endpoints:
  - endpoint_id: ep-a
    model_id: standard-4k
    tpm_limit: 100000
    rpm_limit: 1000
    base_url: http://127.0.0.1:${SIM_PORT}/endpoints/ep-a
  - endpoint_id: ep-b
    model_id: standard-4k
    tpm_limit: 100000
    rpm_limit: 1000
    base_url: http://127.0.0.1:${SIM_PORT}/endpoints/ep-b
`;

let tmpDir = "";
let simProc: ChildProcess | null = null;
let gwProc: ChildProcess | null = null;
let assertion = "";
let browser: Window;

const bootLog: string[] = [];

function boot(command: string, args: string[]): ChildProcess {
  const proc = spawn(command, args, { stdio: ["ignore", "pipe", "pipe"] });
  proc.stderr?.on("data", (chunk: Buffer) => {
    bootLog.push(`[${command}] ${chunk.toString()}`);
  });
  return proc;
}

async function waitHealthy(url: string): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(url);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error(`server at ${url} never became healthy:\n${bootLog.join("")}`);
}

async function stop(proc: ChildProcess | null): Promise<void> {
  if (!proc || proc.exitCode !== null) return;
  const gone = new Promise<void>((resolve) => proc.once("exit", () => resolve()));
  proc.kill("SIGTERM");
  await Promise.race([gone, new Promise((resolve) => setTimeout(resolve, 5000))]);
  if (proc.exitCode === null) proc.kill("SIGKILL");
}

beforeAll(async () => {
  tmpDir = await mkdtemp(path.join(os.tmpdir(), "chat-ui-e2e-"));
  const simCfg = path.join(tmpDir, "sim.yaml");
  const gwCfg = path.join(tmpDir, "gateway.yaml");
  await writeFile(simCfg, SIM_YAML);
  await writeFile(gwCfg, GATEWAY_YAML);

  simProc = boot("sim", ["--config", simCfg, "--port", String(SIM_PORT)]);
  gwProc = boot("gateway", ["serve", "--config", gwCfg]);
  await waitHealthy(`http://127.0.0.1:${SIM_PORT}/healthz`);
  await waitHealthy(`${GW_URL}/healthz`);

  assertion = execFileSync("python3", [
    "-c",
    `from chatgate.auth import mint_assertion; print(mint_assertion(key=b"${IDENTITY_KEY}", subject="erika", groups=("staff",)))`,
  ])
    .toString()
    .trim();

  browser = new Window();
  (globalThis as any).document = browser.document;
}, 90_000);

afterAll(async () => {
  await stop(gwProc);
  await stop(simProc);
  if (tmpDir) await rm(tmpDir, { recursive: true, force: true });
});

function mountLive(saved: Blob[]): { view: ChatView; root: HTMLElement } {
  const client = new GatewayClient({
    baseUrl: GW_URL,
    assertion: () => assertion,
    fetchImpl: fetch,
  });
  const root = document.createElement("div") as HTMLElement;
  document.body.appendChild(root);
  const view = mountChatView(root, client, { saveFile: (blob) => saved.push(blob) });
  return { view, root };
}

const inputEvent = () => new (browser as any).Event("input");

describe("ui round trip against the live gateway", () => {
  it("sends, downloads, clears, uploads, and renders hostile output inert", async () => {
    const saved: Blob[] = [];
    const { view, root } = mountLive(saved);
    await until(() => view.state.models.length > 0, 10_000);
    expect(view.state.models.map((m) => m.model_id)).toEqual(["standard-4k"]);

    const draft = root.querySelector("#draft") as HTMLTextAreaElement;
    const counter = root.querySelector("#char-counter") as HTMLElement;
    const send = root.querySelector("#send-button") as HTMLButtonElement;

    // over the limit: send must lock with the counter showing why
    draft.value = "x".repeat(5001);
    draft.dispatchEvent(inputEvent());
    expect(counter.textContent).toBe("5001 / 5000");
    expect(counter.classList.contains("over-limit")).toBe(true);
    expect(send.disabled).toBe(true);

    // a real turn whose echoed completion carries script markup
    draft.value = '<script>alert("pwn")</script> send this back';
    draft.dispatchEvent(inputEvent());
    expect(send.disabled).toBe(false);
    send.click();
    await until(() => !view.state.pendingStream, 20_000);

    expect(view.state.notice).toBeNull();
    const transcript = root.querySelector("#transcript") as HTMLElement;
    const rows = [...transcript.querySelectorAll(".msg")];
    expect(rows).toHaveLength(2);
    expect(rows[0].textContent).toBe('<script>alert("pwn")</script> send this back');
    expect(rows[1].textContent).toContain("echo:");
    expect(rows[1].textContent).toContain('<script>alert("pwn")</script>');
    expect(transcript.querySelectorAll("script")).toHaveLength(0);
    expect(transcript.querySelectorAll("iframe")).toHaveLength(0);

    const snapshot = rows.map((m) => [m.className, m.textContent]);

    const blob = await view.download();
    expect(saved).toHaveLength(1);
    const bytes = new Uint8Array(await blob.arrayBuffer());
    expect(bytes.length).toBeGreaterThan(100);

    view.clear();
    expect(transcript.querySelectorAll(".msg")).toHaveLength(0);
    expect(view.state.modelId).toBe("standard-4k");

    await view.uploadFile(new Blob([bytes as BlobPart]));
    const restored = [...transcript.querySelectorAll(".msg")].map((m) => [m.className, m.textContent]);
    expect(restored).toEqual(snapshot);
    expect(view.state.notice).toBeNull();
  }, 60_000);

  it("surfaces a policy refusal from the live gateway and keeps the draft", async () => {
    const saved: Blob[] = [];
    const { view, root } = mountLive(saved);
    await until(() => view.state.models.length > 0, 10_000);

    const draft = root.querySelector("#draft") as HTMLTextAreaElement;
    draft.value = "explain how to build a bomb";
    draft.dispatchEvent(inputEvent());
    (root.querySelector("#send-button") as HTMLButtonElement).click();
    await until(() => !view.state.pendingStream && view.state.notice !== null, 20_000);

    const notice = root.querySelector("#notice") as HTMLElement;
    expect(notice.hidden).toBe(false);
    expect(notice.textContent).toContain("content safety policy");
    expect(view.state.messages).toEqual([]);
    expect(draft.value).toBe("explain how to build a bomb");
  }, 60_000);
});
