/** Typed client for the session service's /v1 HTTP API.
 *
 * Every number shown in the UI originates from one of these responses;
 * the client never computes predictions, scores, or payments itself.
 */

export interface Advice {
  value: number;
  message: string;
}

export interface CreatedSession {
  session_id: string;
  treatment: string;
  series_length: number;
}

export interface CasePrompt {
  period: number;
  total: number;
  text: string;
  question: string;
}

export interface InitialOutcome {
  period: number;
  advice: Advice | null;
  done: boolean;
}

export interface FinalOutcome {
  recorded: boolean;
  period: number;
  done: boolean;
}

export interface PendingAdvice {
  initial: number;
  advice: Advice;
}

export interface SessionState {
  session_id: string;
  treatment: string;
  series_length: number;
  period: number | null;
  phase: string;
  n_records: number;
  pending: PendingAdvice | null;
}

export interface SessionSummary {
  session_id: string;
  treatment: string;
  n_records: number;
  mean_quadratic: number;
  base_payment: number;
  bonus: number;
  total_payment: number;
  bonus_display: string;
  total_display: string;
}

/** Error carrying the HTTP status and the server's detail message. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

const defaultFetch: FetchLike = (url, init) => fetch(url, init);

export class SessionApi {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn: FetchLike = defaultFetch) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `could not reach the server: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `request failed with status ${response.status}`;
      try {
        const body: unknown = await response.json();
        if (
          typeof body === "object" &&
          body !== null &&
          typeof (body as { detail?: unknown }).detail === "string"
        ) {
          detail = (body as { detail: string }).detail;
        }
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, payload?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: payload === undefined ? "{}" : JSON.stringify(payload),
    });
  }

  createSession(treatment?: string | null): Promise<CreatedSession> {
    const payload = treatment ? { treatment } : {};
    return this.post<CreatedSession>("/v1/sessions", payload);
  }

  state(sessionId: string): Promise<SessionState> {
    return this.request<SessionState>(`/v1/sessions/${sessionId}`);
  }

  nextCase(sessionId: string): Promise<CasePrompt> {
    return this.request<CasePrompt>(`/v1/sessions/${sessionId}/next`);
  }

  submitInitial(sessionId: string, value: number): Promise<InitialOutcome> {
    return this.post<InitialOutcome>(`/v1/sessions/${sessionId}/initial`, {
      value,
    });
  }

  submitFinal(sessionId: string, value: number): Promise<FinalOutcome> {
    return this.post<FinalOutcome>(`/v1/sessions/${sessionId}/final`, {
      value,
    });
  }

  summary(sessionId: string): Promise<SessionSummary> {
    return this.request<SessionSummary>(`/v1/sessions/${sessionId}/summary`);
  }
}
