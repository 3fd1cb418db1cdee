// Thin typed client over the /v1 API. Errors are surfaced as ApiError with
// the server's {code, message, details} body so views can render them inline.

import type {
  CreateFlowResponse,
  CreateSessionResponse,
  EventRecord,
  FlowDoc,
  SessionStateView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details?: unknown,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "HttpError";
  let message = response.statusText;
  let details: unknown;
  try {
    const body = (await response.json()) as { code?: string; message?: string; details?: unknown };
    code = body.code ?? code;
    message = body.message ?? message;
    details = body.details;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message, details);
}

export class LearnFlowClient {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit & { token?: string }): Promise<T> {
    const headers = new Headers(init?.headers);
    if (init?.body !== undefined) headers.set("Content-Type", "application/json");
    if (init?.token) headers.set("Authorization", `Bearer ${init.token}`);
    const response = await fetch(this.url(path), { ...init, headers });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createFlow(doc: FlowDoc): Promise<CreateFlowResponse> {
    return this.request("/v1/flows", { method: "POST", body: JSON.stringify(doc) });
  }

  getFlow(flowId: string): Promise<FlowDoc> {
    return this.request(`/v1/flows/${encodeURIComponent(flowId)}`);
  }

  createSession(
    flowId: string,
    rosterOverrides?: Record<string, "human" | "ai">,
  ): Promise<CreateSessionResponse> {
    return this.request("/v1/sessions", {
      method: "POST",
      body: JSON.stringify({ flow_id: flowId, roster_overrides: rosterOverrides ?? {} }),
    });
  }

  postInput(sessionId: string, token: string, content: string): Promise<{ seq: number }> {
    return this.request(`/v1/sessions/${sessionId}/input`, {
      method: "POST",
      token,
      body: JSON.stringify({ content }),
    });
  }

  control(
    sessionId: string,
    token: string,
    action: "advance" | "skip_step" | "override_response" | "end",
    text?: string,
  ): Promise<{ status: string }> {
    return this.request(`/v1/sessions/${sessionId}/control`, {
      method: "POST",
      token,
      body: JSON.stringify(text === undefined ? { action } : { action, text }),
    });
  }

  async getEvents(
    sessionId: string,
    token: string,
    since: number,
    waitSeconds = 0,
  ): Promise<{ events: EventRecord[]; status: string }> {
    const query = waitSeconds > 0 ? `?since=${since}&wait=${waitSeconds}` : `?since=${since}`;
    return this.request(`/v1/sessions/${sessionId}/events${query}`, { token });
  }

  getState(sessionId: string, token: string): Promise<SessionStateView> {
    return this.request(`/v1/sessions/${sessionId}/state`, { token });
  }

  streamUrl(sessionId: string, since = 0): string {
    return this.url(`/v1/sessions/${sessionId}/stream?since=${since}`);
  }
}
