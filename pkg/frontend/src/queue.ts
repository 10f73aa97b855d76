// Judgments that could not reach the server. An entry leaves the queue only
// once the server answers it (success, conflict, or rejection); a transport
// failure keeps it for the next attempt, so nothing is ever dropped.

import type { SubmitResult } from "./api.js";
import type { JudgmentBody } from "./types.js";

export interface QueuedJudgment {
  itemId: string;
  body: JudgmentBody;
}

export interface FlushOutcome {
  delivered: { entry: QueuedJudgment; result: SubmitResult }[];
  remaining: number;
}

export class RetryQueue {
  private entries: QueuedJudgment[] = [];

  get length(): number {
    return this.entries.length;
  }

  snapshot(): readonly QueuedJudgment[] {
    return [...this.entries];
  }

  // One judgment per item: the service is first-write-wins, so a newer local
  // judgment for the same item replaces the older undelivered one.
  enqueue(entry: QueuedJudgment): void {
    this.entries = this.entries.filter((e) => e.itemId !== entry.itemId);
    this.entries.push(entry);
  }

  async flush(
    submit: (itemId: string, body: JudgmentBody) => Promise<SubmitResult>,
  ): Promise<FlushOutcome> {
    const delivered: FlushOutcome["delivered"] = [];
    while (this.entries.length > 0) {
      const entry = this.entries[0];
      let result: SubmitResult;
      try {
        result = await submit(entry.itemId, entry.body);
      } catch {
        // Still unreachable: keep this entry and everything behind it.
        break;
      }
      this.entries.shift();
      delivered.push({ entry, result });
    }
    return { delivered, remaining: this.entries.length };
  }
}
