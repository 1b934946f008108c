// Label-queue flow for active-learning sessions.
//
// Answers are staged locally (persisted through an injected storage, so a
// page reload restores in-progress work) and submitted in one POST carrying
// the server's batch token. A stale token means another client advanced the
// session: the flow refetches and reports it instead of silently dropping
// anything. Network failures keep the staged answers.

import { ApiClient, ApiError } from "./api.js";
import type { QueryBatch, SessionSummary } from "./types.js";

export interface KeyValueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class MemoryStorage implements KeyValueStorage {
  private store = new Map<string, string>();
  getItem(key: string): string | null {
    return this.store.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.store.set(key, value);
  }
  removeItem(key: string): void {
    this.store.delete(key);
  }
}

export type SubmitResult =
  | { status: "applied"; summary: SessionSummary }
  | { status: "incomplete"; missing: string[] }
  | { status: "stale"; batch: QueryBatch | null }
  | { status: "finished" }
  | { status: "offline"; error: Error };

interface SavedAnswers {
  batchToken: string;
  answers: Record<string, number>;
}

export class LabelQueueFlow {
  batch: QueryBatch | null = null;
  answers = new Map<string, number>();
  finished = false;

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    private readonly storage: KeyValueStorage = new MemoryStorage(),
  ) {}

  private get storageKey(): string {
    return `upass.labels.${this.sessionId}`;
  }

  /** Fetch the current batch and restore any locally saved answers for it. */
  async refresh(): Promise<QueryBatch | null> {
    try {
      this.batch = await this.api.getQueries(this.sessionId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.finished = true;
        this.batch = null;
        return null;
      }
      throw err;
    }
    this.answers.clear();
    const raw = this.storage.getItem(this.storageKey);
    if (raw !== null) {
      const saved = JSON.parse(raw) as SavedAnswers;
      if (saved.batchToken === this.batch.batch_token) {
        const inBatch = new Set(this.batch.items.map((i) => i.sample_id));
        for (const [sid, label] of Object.entries(saved.answers)) {
          if (inBatch.has(sid)) this.answers.set(sid, label);
        }
      } else {
        this.storage.removeItem(this.storageKey);
      }
    }
    return this.batch;
  }

  setAnswer(sampleId: string, classIndex: number): void {
    if (this.batch === null) throw new Error("no batch fetched");
    if (!this.batch.items.some((i) => i.sample_id === sampleId)) {
      throw new Error(`sample ${sampleId} is not in the current batch`);
    }
    this.answers.set(sampleId, classIndex);
    this.persist();
  }

  clearAnswer(sampleId: string): void {
    this.answers.delete(sampleId);
    this.persist();
  }

  private persist(): void {
    if (this.batch === null) return;
    const saved: SavedAnswers = {
      batchToken: this.batch.batch_token,
      answers: Object.fromEntries(this.answers),
    };
    this.storage.setItem(this.storageKey, JSON.stringify(saved));
  }

  get missing(): string[] {
    if (this.batch === null) return [];
    return this.batch.items
      .map((i) => i.sample_id)
      .filter((sid) => !this.answers.has(sid));
  }

  get complete(): boolean {
    return this.batch !== null && this.missing.length === 0;
  }

  async submit(): Promise<SubmitResult> {
    if (this.batch === null) throw new Error("no batch fetched");
    if (!this.complete) {
      return { status: "incomplete", missing: this.missing };
    }
    let summary: SessionSummary;
    try {
      summary = await this.api.submitLabels(
        this.sessionId,
        this.batch.batch_token,
        Object.fromEntries(this.answers),
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // stale token or finished session: refetch, keep nothing silently
        const batch = await this.refresh();
        return this.finished ? { status: "finished" } : { status: "stale", batch };
      }
      if (err instanceof ApiError) throw err;
      return { status: "offline", error: err as Error };
    }
    this.storage.removeItem(this.storageKey);
    this.batch = null;
    this.answers.clear();
    if (summary.status === "finished") this.finished = true;
    return { status: "applied", summary };
  }
}
