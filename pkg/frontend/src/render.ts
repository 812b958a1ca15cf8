// Pure HTML renderers over the view model. No DOM access here, so the whole
// visual layer is testable against recorded fixtures without a browser.

import type { SessionView, WeightBar } from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderMessages(view: SessionView): string {
  if (view.messages.length === 0) {
    return '<p class="empty">No turns yet. Describe the problem to start.</p>';
  }
  return view.messages
    .map((m) => {
      const badge =
        m.role === "agent" && m.actionType
          ? `<span class="badge badge-${m.actionType}">${m.actionType}</span>`
          : "";
      return (
        `<div class="msg msg-${m.role}">` +
        `<div class="msg-meta">t${m.turn} ${m.role}${badge}</div>` +
        `<div class="msg-text">${escapeHtml(m.text)}</div>` +
        `</div>`
      );
    })
    .join("\n");
}

export function renderSparkline(history: number[]): string {
  if (history.length < 2) return "";
  const w = 60;
  const h = 16;
  const step = w / (history.length - 1);
  const points = history
    .map((v, i) => `${(i * step).toFixed(1)},${(h - v * (h - 2) - 1).toFixed(1)}`)
    .join(" ");
  return (
    `<svg class="spark" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}">` +
    `<polyline fill="none" stroke-width="1.5" points="${points}"></polyline></svg>`
  );
}

export function renderBar(bar: WeightBar): string {
  return (
    `<div class="cand" data-cluster="${escapeHtml(bar.clusterId)}">` +
    `<div class="cand-row">` +
    `<span class="cand-label" title="${escapeHtml(bar.clusterId)}">${escapeHtml(bar.label)}</span>` +
    `<span class="cand-weight">${bar.weightDisplay}</span>${renderSparkline(bar.history)}` +
    `</div>` +
    `<div class="bar-track"><div class="bar-fill" style="width:${bar.widthPct.toFixed(1)}%"></div></div>` +
    `</div>`
  );
}

export function renderHypothesisPanel(view: SessionView): string {
  if (view.bars.length === 0) {
    return '<p class="empty">No candidate causes yet.</p>';
  }
  const bars = view.bars.map(renderBar).join("\n");
  return (
    `<p class="hypothesis">${escapeHtml(view.hypothesis)}</p>` +
    bars +
    `<p class="weight-sum">weights sum: ${view.weightSumDisplay}</p>`
  );
}

export function renderSymptoms(view: SessionView): string {
  if (view.symptoms.length === 0) return '<p class="empty">none yet</p>';
  const items = view.symptoms.map((s) => `<li>${escapeHtml(s)}</li>`).join("");
  let attempted = "";
  if (view.attemptedSteps.length > 0) {
    attempted =
      `<h3>already tried</h3><ul class="attempted">` +
      view.attemptedSteps.map((s) => `<li>${escapeHtml(s)}</li>`).join("") +
      `</ul>`;
  }
  return `<ul>${items}</ul>${attempted}`;
}

export function renderKb(view: SessionView): string {
  if (view.kb.length === 0) return '<p class="empty">none yet</p>';
  return (
    "<ol>" +
    view.kb
      .map(
        (a) =>
          `<li><span class="kb-title">${escapeHtml(a.title)}</span>` +
          ` <span class="kb-score">${a.scoreDisplay}</span></li>`,
      )
      .join("") +
    "</ol>"
  );
}

export function renderResolveChecklist(view: SessionView): string {
  if (!view.resolveSteps || view.resolveSteps.length === 0) return "";
  const items = view.resolveSteps
    .map((s, i) => `<li><label><input type="checkbox" data-step="${i}"> ${escapeHtml(s)}</label></li>`)
    .join("");
  return `<div class="checklist"><h3>proposed resolution steps</h3><ul>${items}</ul></div>`;
}

export function renderStatusLine(view: SessionView): string {
  const state = view.terminated ? "resolved - session closed" : "in progress";
  return (
    `session <code>${escapeHtml(view.sessionId.slice(0, 8))}</code> ` +
    `· variant <strong>${escapeHtml(view.variant)}</strong> ` +
    `· turn ${view.turnCount} · ${state}`
  );
}
