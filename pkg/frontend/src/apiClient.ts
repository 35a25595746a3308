import type { FeedbackEvent, SessionBody, StatusBody } from "./types.js";

/** Non-2xx response, carrying the service's {error, detail} body. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${status} ${code}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface ApiClientOptions {
  /** Bearer token, when the service was started with one. */
  token?: string;
  /** Injectable fetch for tests; defaults to the global. */
  fetchImpl?: typeof fetch;
}

/**
 * Thin JSON client for the session service. One method per endpoint,
 * nothing cached, nothing computed: every response body is handed back
 * exactly as the server sent it.
 */
export class ApiClient {
  private readonly fetchImpl: typeof fetch;
  private readonly token?: string;

  constructor(
    public readonly baseUrl: string,
    options: ApiClientOptions = {},
  ) {
    this.fetchImpl = options.fetchImpl ?? fetch;
    this.token = options.token;
  }

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const res = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await res.json()) as Record<string, unknown>;
    if (!res.ok) {
      throw new ApiError(
        res.status,
        String(payload["error"] ?? "unknown"),
        String(payload["detail"] ?? ""),
      );
    }
    return payload as T;
  }

  createSession(source: string): Promise<SessionBody> {
    return this.request<SessionBody>("POST", "/v1/sessions", { source });
  }

  getSession(sessionId: string): Promise<SessionBody> {
    return this.request<SessionBody>("GET", `/v1/sessions/${sessionId}`);
  }

  feedback(sessionId: string, event: FeedbackEvent): Promise<SessionBody> {
    return this.request<SessionBody>(
      "POST",
      `/v1/sessions/${sessionId}/feedback`,
      { kind: event.kind, position: event.position, text: event.text },
    );
  }

  accept(sessionId: string, atChar?: number | null): Promise<SessionBody> {
    const body = atChar == null ? {} : { at_char: atChar };
    return this.request<SessionBody>(
      "POST",
      `/v1/sessions/${sessionId}/accept`,
      body,
    );
  }

  status(): Promise<StatusBody> {
    return this.request<StatusBody>("GET", "/v1/status");
  }
}
