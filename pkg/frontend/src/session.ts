/** Annotation session state machine, independent of the DOM.
 *
 * The queue is consumed strictly in server order. Scores live only on the
 * in-flight item; the server is the source of truth for everything answered.
 * One submission is in flight at a time; a duplicate response (409) skips
 * the item with a notice, so retrying after a timeout is safe.
 */

import { ApiClient } from "./api.js";
import { AnswerPayload, BatchItem, Progress, QuestionId, SCALES } from "./types.js";

export type Phase = "loading" | "annotating" | "complete" | "error";

export interface SessionOptions {
  batchSize?: number;
  /** Whether q4 must be answered before submitting (session protocol). */
  requireQ4?: boolean;
}

export class ScoreDraft {
  private values = new Map<QuestionId, number>();

  set(question: QuestionId, value: number): void {
    if (!SCALES[question].includes(value)) {
      throw new RangeError(`${question} cannot take value ${value}`);
    }
    this.values.set(question, value);
  }

  get(question: QuestionId): number | undefined {
    return this.values.get(question);
  }

  complete(requireQ4: boolean): boolean {
    const base = ["q1", "q2", "q3"] as const;
    if (!base.every((question) => this.values.has(question))) {
      return false;
    }
    return !requireQ4 || this.values.has("q4");
  }

  clear(): void {
    this.values.clear();
  }
}

export class AnnotationSession {
  phase: Phase = "loading";
  queue: BatchItem[] = [];
  draft = new ScoreDraft();
  progress: Progress = { answered: 0, total: 0 };
  /** Transient message: skipped duplicates, validation problems. */
  notice: string | null = null;
  /** Network failure banner; submitting again retries. */
  connectionError: string | null = null;

  private submitting = false;
  private listeners: Array<() => void> = [];

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
    private readonly options: SessionOptions = {},
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener();
    }
  }

  current(): BatchItem | null {
    return this.queue[0] ?? null;
  }

  canSubmit(): boolean {
    return (
      this.phase === "annotating" &&
      !this.submitting &&
      this.draft.complete(this.options.requireQ4 ?? false)
    );
  }

  async start(): Promise<void> {
    this.phase = "loading";
    this.emit();
    try {
      this.progress = await this.api.fetchProgress(this.annotatorId);
      await this.refill();
      this.connectionError = null;
    } catch (err) {
      this.phase = "error";
      this.connectionError = String(err);
    }
    this.emit();
  }

  setScore(question: QuestionId, value: number): void {
    this.draft.set(question, value);
    this.emit();
  }

  /** Submit the in-flight item's scores. Resolves when the UI may rerender. */
  async submit(): Promise<void> {
    const item = this.current();
    if (!item || !this.canSubmit()) {
      return;
    }
    const payload: AnswerPayload = {
      instance_id: item.instance_id,
      annotator_id: this.annotatorId,
      q1: this.draft.get("q1")!,
      q2: this.draft.get("q2")!,
      q3: this.draft.get("q3")!,
    };
    const q4 = this.draft.get("q4");
    if (q4 !== undefined) {
      payload.q4 = q4;
    }
    this.submitting = true;
    this.notice = null;
    this.emit();
    try {
      const result = await this.api.submitAnswer(payload);
      this.connectionError = null;
      if (result.kind === "accepted") {
        this.progress = { ...this.progress, answered: this.progress.answered + 1 };
        await this.advance();
      } else if (result.kind === "duplicate") {
        // already answered (e.g. resubmit after a reload): skip forward
        this.notice = `Already answered ${item.instance_id}; skipped.`;
        await this.advance();
      } else {
        this.notice = `Rejected: ${result.message}`;
      }
    } catch (err) {
      // network trouble: keep the draft, let the annotator retry
      this.connectionError = String(err);
    } finally {
      this.submitting = false;
      this.emit();
    }
  }

  private async advance(): Promise<void> {
    this.queue.shift();
    this.draft.clear();
    if (this.queue.length === 0) {
      await this.refill();
    } else {
      this.phase = "annotating";
    }
  }

  private async refill(): Promise<void> {
    const items = await this.api.fetchBatch(
      this.annotatorId,
      this.options.batchSize ?? 10,
    );
    this.queue = items;
    this.phase = items.length === 0 ? "complete" : "annotating";
  }
}
