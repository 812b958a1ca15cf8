// DOM glue: one active session per tab. All rendering goes through the pure
// view-model/render layer; this file only moves data between the API client,
// local UI state (draft text, in-flight flag, accumulated weight history),
// and the document.

import { ApiClient, ApiError } from "./api.js";
import {
  renderHypothesisPanel,
  renderKb,
  renderMessages,
  renderResolveChecklist,
  renderStatusLine,
  renderSymptoms,
} from "./render.js";
import type { SessionSnapshot } from "./types.js";
import { VARIANTS } from "./types.js";
import { accumulateWeights, buildSessionView, type WeightHistory } from "./viewmodel.js";

interface UiState {
  sessionId: string | null;
  snapshot: SessionSnapshot | null;
  weightHistory: WeightHistory;
  lastProposedSteps: string[] | null;
  inFlight: boolean;
  error: string | null;
  retry: (() => void) | null;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(root: Document, baseUrl: string): void {
  const api = new ApiClient(baseUrl);
  const ui: UiState = {
    sessionId: null,
    snapshot: null,
    weightHistory: new Map(),
    lastProposedSteps: null,
    inFlight: false,
    error: null,
    retry: null,
  };

  const variantSelect = el<HTMLSelectElement>("variant");
  for (const v of VARIANTS) {
    const opt = root.createElement("option");
    opt.value = v;
    opt.textContent = v;
    variantSelect.appendChild(opt);
  }

  const input = el<HTMLInputElement>("draft");
  const sendBtn = el<HTMLButtonElement>("send");
  const newBtn = el<HTMLButtonElement>("new-session");
  const refreshBtn = el<HTMLButtonElement>("refresh");
  const errorBox = el<HTMLDivElement>("error");

  function redraw(): void {
    const canType = !!ui.sessionId && !ui.inFlight && !(ui.snapshot?.terminated ?? false);
    input.disabled = !canType;
    sendBtn.disabled = !canType;
    sendBtn.textContent = ui.inFlight ? "..." : "send";
    errorBox.innerHTML = "";
    if (ui.error) {
      const span = root.createElement("span");
      span.textContent = ui.error;
      errorBox.appendChild(span);
      if (ui.retry) {
        const retryBtn = root.createElement("button");
        retryBtn.textContent = "retry";
        retryBtn.onclick = () => ui.retry && ui.retry();
        errorBox.appendChild(retryBtn);
      }
    }
    if (!ui.snapshot) {
      el("status").textContent = "no session - pick a variant and press start";
      return;
    }
    const view = buildSessionView(ui.snapshot, ui.weightHistory, ui.lastProposedSteps);
    el("status").innerHTML = renderStatusLine(view);
    el("messages").innerHTML =
      renderMessages(view) +
      renderResolveChecklist(view) +
      (view.terminated ? '<p class="notice">Session resolved; input disabled.</p>' : "");
    el("hypotheses").innerHTML = renderHypothesisPanel(view);
    el("symptoms").innerHTML = renderSymptoms(view);
    el("kb").innerHTML = renderKb(view);
    const messages = el("messages");
    messages.scrollTop = messages.scrollHeight;
  }

  async function guard(label: string, fn: () => Promise<void>, retry: () => void): Promise<void> {
    ui.error = null;
    ui.retry = null;
    try {
      await fn();
    } catch (err) {
      ui.error = `${label} failed: ${err instanceof ApiError ? err.message : String(err)}`;
      ui.retry = err instanceof ApiError && !err.retryable ? null : retry;
    }
    ui.inFlight = false;
    redraw();
  }

  function createSession(): void {
    void guard(
      "create session",
      async () => {
        ui.inFlight = true;
        redraw();
        const created = await api.createSession(variantSelect.value);
        ui.sessionId = created.session_id;
        ui.weightHistory = new Map();
        ui.lastProposedSteps = null;
        ui.snapshot = await api.getSession(created.session_id);
      },
      createSession,
    );
  }

  function sendTurn(): void {
    const text = input.value.trim();
    if (!text || !ui.sessionId || ui.inFlight) return;
    const sessionId = ui.sessionId;
    void guard(
      "turn",
      async () => {
        ui.inFlight = true;
        redraw();
        const turn = await api.sendTurn(sessionId, text);
        // draft is cleared only after the turn succeeded
        input.value = "";
        ui.weightHistory = accumulateWeights(ui.weightHistory, turn.state);
        ui.lastProposedSteps = turn.action_type === "resolve" ? turn.proposed_steps : null;
        ui.snapshot = await api.getSession(sessionId);
      },
      sendTurn,
    );
  }

  function refresh(): void {
    if (!ui.sessionId) return;
    const sessionId = ui.sessionId;
    void guard(
      "refresh",
      async () => {
        ui.snapshot = await api.getSession(sessionId);
      },
      refresh,
    );
  }

  newBtn.onclick = createSession;
  sendBtn.onclick = sendTurn;
  refreshBtn.onclick = refresh;
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") sendTurn();
  });
  redraw();
}
