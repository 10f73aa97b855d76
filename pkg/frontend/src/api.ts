// Typed client for the review service REST endpoints.

import type {
  BatchDetail,
  BatchExport,
  BatchSummary,
  FetchLike,
  JudgmentBody,
  Progress,
  ReviewItem,
  Verdict,
} from "./types.js";

// A server answer outside the statuses the caller models (404, 5xx).
export class ApiError extends Error {
  readonly status: number;

  constructor(message: string, status: number) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

export type SubmitResult =
  | { kind: "ok"; seq: number }
  | { kind: "conflict"; verdict: Verdict }
  | { kind: "rejected"; errors: Record<string, string> };

export class ReviewApi {
  private readonly fetchImpl: FetchLike;
  private readonly base: string;

  constructor(fetchImpl: FetchLike, base = "") {
    this.fetchImpl = fetchImpl;
    this.base = base;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(this.base + path);
    if (!res.ok) {
      throw new ApiError(`GET ${path} failed with ${res.status}`, res.status);
    }
    return (await res.json()) as T;
  }

  listBatches(): Promise<BatchSummary[]> {
    return this.getJson("/api/batches");
  }

  getBatch(batchId: string): Promise<BatchDetail> {
    return this.getJson(`/api/batches/${encodeURIComponent(batchId)}`);
  }

  getProgress(batchId: string): Promise<Progress> {
    return this.getJson(`/api/batches/${encodeURIComponent(batchId)}/progress`);
  }

  getExport(batchId: string): Promise<BatchExport> {
    return this.getJson(`/api/batches/${encodeURIComponent(batchId)}/export`);
  }

  getItem(itemId: string): Promise<ReviewItem> {
    return this.getJson(`/api/items/${encodeURIComponent(itemId)}`);
  }

  // Resolves for every server answer, success or not; rejects only when the
  // request itself never got through, which is the caller's cue to queue the
  // judgment and retry later.
  async submitJudgment(itemId: string, body: JudgmentBody): Promise<SubmitResult> {
    const res = await this.fetchImpl(
      `${this.base}/api/items/${encodeURIComponent(itemId)}/judgment`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (res.ok) {
      const data = (await res.json()) as { seq: number };
      return { kind: "ok", seq: data.seq };
    }
    if (res.status === 409) {
      const data = (await res.json()) as { verdict: Verdict };
      return { kind: "conflict", verdict: data.verdict };
    }
    if (res.status === 400) {
      const data = (await res.json()) as { errors: Record<string, string> };
      return { kind: "rejected", errors: data.errors };
    }
    throw new ApiError(`POST judgment for ${itemId} failed with ${res.status}`, res.status);
  }
}
