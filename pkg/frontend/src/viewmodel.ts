// Pure view-model construction. Everything here is a function of server
// snapshots plus client-side accumulated weight history; no diagnostic
// computation happens on this side of the wire: weights, rankings, and the
// action type are taken verbatim from the server.

import type { HistoryEntry, SessionSnapshot, StateSnapshot } from "./types.js";

export interface MessageView {
  role: "user" | "agent";
  text: string;
  turn: number;
  actionType: string | null;
}

export interface WeightBar {
  clusterId: string;
  label: string;
  weight: number; // verbatim wire weight
  widthPct: number; // proportional bar width
  weightDisplay: string; // 2-decimal label
  history: number[]; // per-turn weights for the sparkline
}

export interface KbView {
  id: string;
  title: string;
  score: number;
  scoreDisplay: string;
}

export interface SessionView {
  sessionId: string;
  variant: string;
  terminated: boolean;
  turnCount: number;
  hypothesis: string;
  messages: MessageView[];
  bars: WeightBar[];
  weightSum: number;
  weightSumDisplay: string;
  symptoms: string[];
  attemptedSteps: string[];
  kb: KbView[];
  resolveSteps: string[] | null;
}

export type WeightHistory = Map<string, number[]>;

/** Record this turn's candidate weights for the per-candidate sparkline.
 * Candidates absent from the current snapshot get a 0 sample so lines stay
 * aligned across turns. Returns a new map; the input is not mutated. */
export function accumulateWeights(
  history: WeightHistory,
  state: StateSnapshot | null,
): WeightHistory {
  const next: WeightHistory = new Map();
  for (const [key, values] of history) next.set(key, [...values]);
  if (!state) return next;
  const seen = new Set<string>();
  for (const cand of state.candidates) {
    const line = next.get(cand.cluster_id) ?? [];
    line.push(cand.weight);
    next.set(cand.cluster_id, line);
    seen.add(cand.cluster_id);
  }
  for (const [key, line] of next) {
    if (!seen.has(key)) line.push(0);
  }
  return next;
}

/** Parse the enumerated step list out of a resolve reply ("... 1. x. 2. y.")
 * so a refreshed view rebuilt purely from GET state still shows the
 * checklist. Presentation-level text extraction, not diagnosis. */
export function parseResolveSteps(text: string): string[] {
  const steps: string[] = [];
  const re = /\d+\.\s+([^.]+)\./g;
  let match: RegExpExecArray | null;
  while ((match = re.exec(text)) !== null) {
    steps.push(match[1].trim());
  }
  return steps;
}

export function messagesOf(history: HistoryEntry[]): MessageView[] {
  // order is exactly the server history order
  return history.map((u) => ({
    role: u.role,
    text: u.text,
    turn: u.turn,
    actionType: u.action_type ?? null,
  }));
}

export function buildBars(state: StateSnapshot | null, history: WeightHistory): WeightBar[] {
  if (!state) return [];
  const bars = state.candidates.map((cand) => ({
    clusterId: cand.cluster_id,
    label: cand.label_text,
    weight: cand.weight,
    widthPct: cand.weight * 100,
    weightDisplay: cand.weight.toFixed(2),
    history: history.get(cand.cluster_id) ?? [cand.weight],
  }));
  bars.sort((a, b) => b.weight - a.weight || a.clusterId.localeCompare(b.clusterId));
  return bars;
}

export function buildSessionView(
  snapshot: SessionSnapshot,
  weightHistory: WeightHistory = new Map(),
  lastProposedSteps: string[] | null = null,
): SessionView {
  const messages = messagesOf(snapshot.history);
  const bars = buildBars(snapshot.state, weightHistory);
  const weightSum = bars.reduce((acc, b) => acc + b.weight, 0);
  const lastAgent = [...messages].reverse().find((m) => m.role === "agent");
  let resolveSteps: string[] | null = null;
  if (lastAgent && lastAgent.actionType === "resolve") {
    resolveSteps = lastProposedSteps ?? parseResolveSteps(lastAgent.text);
  }
  const kb: KbView[] = (snapshot.state?.kb_refs ?? []).map(([id, score]) => ({
    id,
    title: snapshot.kb_titles[id] ?? id,
    score,
    scoreDisplay: score.toFixed(3),
  }));
  return {
    sessionId: snapshot.session_id,
    variant: snapshot.variant,
    terminated: snapshot.terminated,
    turnCount: snapshot.turns,
    hypothesis: snapshot.state?.hypothesis ?? "no state yet",
    messages,
    bars,
    weightSum,
    weightSumDisplay: weightSum === 0 ? "0.00" : weightSum.toFixed(2),
    symptoms: snapshot.state?.symptoms ?? [],
    attemptedSteps: snapshot.state?.attempted_steps ?? [],
    kb,
    resolveSteps,
  };
}
