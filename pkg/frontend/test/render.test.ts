import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  renderBar,
  renderHypothesisPanel,
  renderKb,
  renderMessages,
  renderResolveChecklist,
  renderStatusLine,
} from "../src/render.js";
import type { SessionSnapshot, TurnResponse } from "../src/types.js";
import { accumulateWeights, buildSessionView, type WeightHistory } from "../src/viewmodel.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = JSON.parse(readFileSync(join(here, "fixtures.json"), "utf-8")) as {
  turns: { response: TurnResponse }[];
  snapshot: SessionSnapshot;
};

function fixtureView() {
  let history: WeightHistory = new Map();
  for (const turn of fixtures.turns) history = accumulateWeights(history, turn.response.state);
  return buildSessionView(fixtures.snapshot, history);
}

describe("renderers", () => {
  it("bar width is the weight as a percentage", () => {
    const html = renderBar({
      clusterId: "c1",
      label: "expired vpn certificate",
      weight: 0.6,
      widthPct: 60,
      weightDisplay: "0.60",
      history: [0.3, 0.6],
    });
    expect(html).toContain("width:60.0%");
    expect(html).toContain("0.60");
    expect(html).toContain("<svg");
  });

  it("fixture snapshot renders bars in weight order with the sum line", () => {
    const html = renderHypothesisPanel(fixtureView());
    const widths = [...html.matchAll(/width:([0-9.]+)%/g)].map((m) => parseFloat(m[1]));
    expect(widths.length).toBeGreaterThan(0);
    expect([...widths].sort((a, b) => b - a)).toEqual(widths);
    expect(html).toContain("weights sum: 1.00");
  });

  it("messages render in order with action badges", () => {
    const view = fixtureView();
    const html = renderMessages(view);
    const metas = [...html.matchAll(/class="msg msg-(user|agent)"/g)].map((m) => m[1]);
    expect(metas).toEqual(fixtures.snapshot.history.map((u) => u.role));
    expect(html).toContain('badge-clarify');
    expect(html).toContain('badge-investigate');
    expect(html).toContain('badge-resolve');
  });

  it("resolve checklist lists every proposed step as a checkbox", () => {
    const html = renderResolveChecklist(fixtureView());
    const steps = fixtures.turns[2].response.proposed_steps;
    expect((html.match(/type="checkbox"/g) ?? []).length).toBe(steps.length);
    for (const step of steps) {
      expect(html).toContain(step);
    }
  });

  it("kb panel shows title and score", () => {
    const html = renderKb(fixtureView());
    for (const [id] of fixtures.snapshot.state!.kb_refs) {
      expect(html).toContain(escapeHtml(fixtures.snapshot.kb_titles[id]));
    }
  });

  it("status line shows turn count and closure", () => {
    const html = renderStatusLine(fixtureView());
    expect(html).toContain("turn 3");
    expect(html).toContain("resolved");
  });

  it("escapes markup in user-controlled text", () => {
    const view = fixtureView();
    view.messages = [
      { role: "user", text: '<script>alert("x")</script>', turn: 1, actionType: null },
    ];
    const html = renderMessages(view);
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});
