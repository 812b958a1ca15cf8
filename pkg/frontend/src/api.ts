// Thin client over the session HTTP API. The fetch implementation is
// injectable so tests can exercise the client against recorded fixtures.

import type { CreateSessionResponse, SessionSnapshot, TurnResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public status: number | null = null,
    public retryable = true,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method,
        headers: body === undefined ? {} : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(`server unreachable: ${String(err)}`, null, true);
    }
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { detail?: unknown };
        if (parsed.detail) detail = JSON.stringify(parsed.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(`${resp.status}: ${detail}`, resp.status, resp.status >= 500 || resp.status === 409);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  createSession(variant: string): Promise<CreateSessionResponse> {
    return this.request("POST", "/sessions", { variant });
  }

  sendTurn(sessionId: string, text: string): Promise<TurnResponse> {
    return this.request("POST", `/sessions/${sessionId}/turns`, { text });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/sessions/${sessionId}`);
  }
}
