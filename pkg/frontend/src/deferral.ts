// Deferral-review flow: the server's most-uncertain queue, resolved one
// sample at a time. Queue order, scores and explanation factors are taken
// verbatim from the server; a resolved or in-flight item cannot be resolved
// again.

import { ApiClient, ApiError } from "./api.js";
import type { DeferralDecision, DeferralItem, DeferralQueue, ResolveResponse } from "./types.js";

export class DeferralReviewFlow {
  queue: DeferralQueue | null = null;
  correctedAccuracy: number | null = null;
  private inFlight = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
  ) {}

  async load(): Promise<DeferralQueue> {
    this.queue = await this.api.getDeferrals(this.sessionId);
    return this.queue;
  }

  get items(): DeferralItem[] {
    return this.queue?.items ?? [];
  }

  get remaining(): number {
    return this.queue?.remaining ?? 0;
  }

  item(sampleId: string): DeferralItem | undefined {
    return this.items.find((i) => i.sample_id === sampleId);
  }

  canResolve(sampleId: string): boolean {
    const item = this.item(sampleId);
    return item !== undefined && !item.resolved && !this.inFlight.has(sampleId);
  }

  /** Resolve one queued sample; updates the local queue without a reload. */
  async resolve(
    sampleId: string,
    decision: DeferralDecision,
    label?: number,
  ): Promise<ResolveResponse> {
    if (!this.canResolve(sampleId)) {
      throw new Error(`sample ${sampleId} cannot be resolved (unknown, resolved, or in flight)`);
    }
    if (decision === "relabel" && label === undefined) {
      throw new Error("relabel requires a stage");
    }
    this.inFlight.add(sampleId);
    try {
      const res = await this.api.resolveDeferral(this.sessionId, sampleId, decision, label);
      const item = this.item(sampleId)!;
      item.resolved = true;
      item.decision = decision;
      item.expert_label = decision === "relabel" ? (label as number) : null;
      if (this.queue !== null) this.queue.remaining = res.remaining;
      this.correctedAccuracy = res.corrected_accuracy;
      return res;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else resolved it; re-sync rather than diverge
        await this.load();
      }
      throw err;
    } finally {
      this.inFlight.delete(sampleId);
    }
  }
}
