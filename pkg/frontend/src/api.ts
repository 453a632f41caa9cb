// Typed client for the review service. Every mutation the UI performs goes
// through this module, so the documented HTTP API is the only write path.

import type { Action, InstructionsDoc, ItemSummary, ReviewItem } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`request failed with status ${status}`);
  }
}

export class ConflictError extends ApiError {
  constructor(
    detail: unknown,
    public currentRevision: number,
  ) {
    super(409, detail);
  }
}

export class NetworkError extends Error {
  constructor(public cause_: unknown) {
    super("network failure");
  }
}

type FetchLike = typeof fetch;

async function request<T>(
  fetchImpl: FetchLike,
  url: string,
  init?: RequestInit,
): Promise<T> {
  let response: Response;
  try {
    response = await fetchImpl(url, init);
  } catch (err) {
    throw new NetworkError(err);
  }
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // non-JSON body; leave null
  }
  if (response.status === 409) {
    const detail = (body as { detail?: Record<string, unknown> })?.detail ?? {};
    const current = Number(
      (detail as Record<string, unknown>)["current_revision"] ??
        (detail as Record<string, unknown>)["current_version"] ??
        -1,
    );
    throw new ConflictError(detail, current);
  }
  if (!response.ok) {
    throw new ApiError(response.status, (body as { detail?: unknown })?.detail ?? body);
  }
  return body as T;
}

export class ReviewApi {
  constructor(
    private base = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async listItems(status?: string): Promise<ItemSummary[]> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    const body = await request<{ items: ItemSummary[] }>(
      this.fetchImpl,
      `${this.base}/items${query}`,
    );
    return body.items;
  }

  getItem(id: string): Promise<ReviewItem> {
    return request(this.fetchImpl, `${this.base}/items/${encodeURIComponent(id)}`);
  }

  /** Submit one reviewer action; always names the revision it expects. */
  submitAction(id: string, expectedRevision: number, action: Action): Promise<ReviewItem> {
    return request(this.fetchImpl, `${this.base}/items/${encodeURIComponent(id)}/action`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ expected_revision: expectedRevision, action }),
    });
  }

  getInstructions(): Promise<InstructionsDoc> {
    return request(this.fetchImpl, `${this.base}/instructions`);
  }

  putInstructions(text: string, expectedVersion?: number): Promise<InstructionsDoc> {
    return request(this.fetchImpl, `${this.base}/instructions`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text, expected_version: expectedVersion ?? null }),
    });
  }
}
