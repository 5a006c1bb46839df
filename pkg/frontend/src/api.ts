/** Typed client for the labeling service HTTP API. */

export interface TrajectorySeries {
  u: number[][];
  y: number[][];
  y_norm: number[];
}

export interface QueryPayload {
  id: string;
  horizon: number;
  initial_state: number[];
  epsilon: number;
  first: TrajectorySeries;
  second: TrajectorySeries;
}

export interface StatusPayload {
  session: string;
  pending: number;
  answered: number;
  iteration: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type SubmitResult = "ok" | "conflict";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class LabelingClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  /** Oldest pending query, or null when the queue is empty. */
  async nextQuery(): Promise<QueryPayload | null> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/query/next`);
    if (!resp.ok) {
      throw new ApiError(`query fetch failed: ${resp.status}`, resp.status);
    }
    const body = await resp.json();
    if (body.empty) {
      return null;
    }
    return body as QueryPayload;
  }

  /**
   * Post a binary preference for a query id.  A 409 means somebody already
   * answered it; the caller should simply advance.
   */
  async submitLabel(id: string, preference: 0 | 1): Promise<SubmitResult> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/api/query/${encodeURIComponent(id)}/label`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ preference }),
      },
    );
    if (resp.status === 409) {
      return "conflict";
    }
    if (!resp.ok) {
      throw new ApiError(`label post failed: ${resp.status}`, resp.status);
    }
    return "ok";
  }

  async status(): Promise<StatusPayload> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/status`);
    if (!resp.ok) {
      throw new ApiError(`status fetch failed: ${resp.status}`, resp.status);
    }
    return (await resp.json()) as StatusPayload;
  }
}
