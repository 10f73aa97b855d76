// Client-side review session: the served item order, which items are already
// judged, and the draft (checklist toggles plus note) for the item on screen.

import type { Checklist, ChecklistKey, ItemVerdict, Progress, Verdict } from "./types.js";
import { allChecked, emptyChecklist } from "./types.js";

export interface Draft {
  checklist: Checklist;
  note: string;
}

export function emptyDraft(): Draft {
  return { checklist: emptyChecklist(), note: "" };
}

export class ReviewSession {
  readonly itemIds: string[];
  draft: Draft = emptyDraft();
  private readonly verdicts: Map<string, Verdict>;
  private position = 0;

  constructor(itemIds: string[], judged: Iterable<[string, Verdict]> = []) {
    if (itemIds.length === 0) {
      throw new Error("a review session needs at least one item");
    }
    this.itemIds = [...itemIds];
    this.verdicts = new Map(judged);
  }

  get index(): number {
    return this.position;
  }

  get currentId(): string {
    return this.itemIds[this.position];
  }

  verdictOf(itemId: string): ItemVerdict {
    return this.verdicts.get(itemId) ?? "pending";
  }

  get currentJudged(): boolean {
    return this.verdicts.has(this.currentId);
  }

  // The pass control stays off until every checklist entry is on.
  canPass(): boolean {
    return !this.currentJudged && allChecked(this.draft.checklist);
  }

  canFail(): boolean {
    return !this.currentJudged;
  }

  toggle(key: ChecklistKey): void {
    this.draft.checklist[key] = !this.draft.checklist[key];
  }

  setNote(text: string): void {
    this.draft.note = text;
  }

  recordVerdict(itemId: string, verdict: Verdict): void {
    this.verdicts.set(itemId, verdict);
  }

  progress(): Progress {
    const counts: Progress = { total: this.itemIds.length, pending: 0, pass: 0, fail: 0 };
    for (const id of this.itemIds) {
      counts[this.verdictOf(id)] += 1;
    }
    return counts;
  }

  // First pending item at or after `from`, wrapping once past the end. The
  // scan goes in served order, so every item between the starting point and
  // the result is already judged: nothing pending gets skipped.
  nextPendingFrom(from: number): number | null {
    const n = this.itemIds.length;
    for (let step = 0; step < n; step += 1) {
      const i = (((from + step) % n) + n) % n;
      if (!this.verdicts.has(this.itemIds[i])) {
        return i;
      }
    }
    return null;
  }

  nextPending(): number | null {
    return this.nextPendingFrom(this.position + 1);
  }

  firstPending(): number | null {
    return this.nextPendingFrom(0);
  }

  // Moving to a different item discards the draft; re-selecting the current
  // item (say, reloading after a failed fetch) keeps it.
  goTo(index: number): void {
    if (index < 0 || index >= this.itemIds.length) {
      throw new Error(`item index ${index} out of range`);
    }
    if (index !== this.position) {
      this.position = index;
      this.draft = emptyDraft();
    }
  }

  advanceToNextPending(): boolean {
    const target = this.nextPending();
    if (target === null) {
      return false;
    }
    this.goTo(target);
    return true;
  }
}
