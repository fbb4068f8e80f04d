/** Thin fetch client for the annotation service API. */

import {
  AnswerPayload,
  BatchItem,
  Progress,
  SubmitResult,
  parseBatchItem,
  parseProgress,
} from "./types.js";

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async fetchBatch(annotatorId: string, limit: number): Promise<BatchItem[]> {
    const query = `annotator=${encodeURIComponent(annotatorId)}&limit=${limit}`;
    const resp = await fetch(this.url(`/api/batch?${query}`));
    if (!resp.ok) {
      throw new Error(`batch request failed: HTTP ${resp.status}`);
    }
    const body = (await resp.json()) as { items?: unknown[] };
    return (body.items ?? []).map(parseBatchItem);
  }

  async fetchProgress(annotatorId: string): Promise<Progress> {
    const query = `annotator=${encodeURIComponent(annotatorId)}`;
    const resp = await fetch(this.url(`/api/progress?${query}`));
    if (!resp.ok) {
      throw new Error(`progress request failed: HTTP ${resp.status}`);
    }
    return parseProgress(await resp.json());
  }

  /** POST one answer; 409 and 422 are expected protocol outcomes, not errors. */
  async submitAnswer(payload: AnswerPayload): Promise<SubmitResult> {
    const resp = await fetch(this.url("/api/answer"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (resp.ok) {
      return { kind: "accepted" };
    }
    const message = await resp
      .json()
      .then((body: { error?: string }) => body.error ?? `HTTP ${resp.status}`)
      .catch(() => `HTTP ${resp.status}`);
    if (resp.status === 409) {
      return { kind: "duplicate", message };
    }
    if (resp.status === 422 || resp.status === 400 || resp.status === 404) {
      return { kind: "invalid", message };
    }
    throw new Error(`answer request failed: ${message}`);
  }
}
