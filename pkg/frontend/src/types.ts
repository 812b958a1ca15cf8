// Wire types mirroring the service payload schemas (format_version 1).

export interface Candidate {
  cluster_id: string;
  weight: number;
  label_text: string;
  exemplar_ids: string[];
  canonical_resolution: string;
  resolution_steps: string[];
}

export interface StateSnapshot {
  format_version: number;
  hypothesis: string;
  symptoms: string[];
  kb_refs: [string, number][];
  candidates: Candidate[];
  turn: number;
  attempted_steps: string[];
  probed?: Record<string, boolean>;
  asked_terms?: string[];
  last_query?: string;
}

export type ActionType = "clarify" | "investigate" | "resolve";

export interface TurnResponse {
  session_id: string;
  turn: number;
  action_type: ActionType;
  reply: string;
  proposed_steps: string[];
  state: StateSnapshot;
  kb_titles: Record<string, string>;
  terminated: boolean;
}

export interface HistoryEntry {
  role: "user" | "agent";
  text: string;
  turn: number;
  action_type: string | null;
}

export interface SessionSnapshot {
  format_version: number;
  session_id: string;
  variant: string;
  terminated: boolean;
  turns: number;
  state: StateSnapshot | null;
  kb_titles: Record<string, string>;
  history: HistoryEntry[];
}

export interface CreateSessionResponse {
  session_id: string;
  variant: string;
}

export const VARIANTS = ["dqa", "rag_clustering", "rag_baseline", "rag_no_cqr"] as const;
