// Review screen controller: loads the batch, renders the current item, and
// routes checklist toggles, verdict submissions, and keyboard input.
//
// Judgments are optimistic: a submission that never reaches the server is
// queued and retried while the annotator keeps working; a 409 means someone
// judged the item first, so the server's verdict is reloaded and shown.

import type { ReviewApi, SubmitResult } from "./api.js";
import { originalRows, profileRows } from "./diff.js";
import { actionForKey } from "./keys.js";
import { RetryQueue } from "./queue.js";
import { el, renderChecklist, renderPane, renderProgress, verdictBadge } from "./render.js";
import { ReviewSession } from "./state.js";
import type { JudgmentBody, ReviewItem, Verdict } from "./types.js";
import { CHECKLIST_KEYS } from "./types.js";

export interface AppOptions {
  annotator?: string;
  retryDelayMs?: number;
}

type Banner =
  | { kind: "none" }
  | { kind: "load-failed"; message: string }
  | { kind: "queued"; count: number }
  | { kind: "rejected"; message: string };

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export class ReviewApp {
  readonly api: ReviewApi;
  readonly queue = new RetryQueue();
  session: ReviewSession | null = null;
  private readonly root: HTMLElement;
  private readonly annotator: string;
  private readonly retryDelayMs: number;
  private batchId = "";
  private currentItem: ReviewItem | null = null;
  private banner: Banner = { kind: "none" };
  private submitting = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(root: HTMLElement, api: ReviewApi, options: AppOptions = {}) {
    this.root = root;
    this.api = api;
    this.annotator = options.annotator ?? "reviewer";
    this.retryDelayMs = options.retryDelayMs ?? 3000;
    root.ownerDocument.addEventListener("keydown", this.onKeyDown);
  }

  dispose(): void {
    this.root.ownerDocument.removeEventListener("keydown", this.onKeyDown);
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
  }

  // The service serves a single batch; progress and verdicts always come
  // from it, so a browser refresh resumes exactly where the journal says.
  async start(): Promise<void> {
    try {
      const batches = await this.api.listBatches();
      if (batches.length === 0) {
        this.banner = { kind: "load-failed", message: "no batches on the server" };
        this.render();
        return;
      }
      this.batchId = batches[0].batch_id;
      const detail = await this.api.getBatch(this.batchId);
      const ids = detail.items.map((item) => item.item_id);
      const judged: [string, Verdict][] = [];
      for (const item of detail.items) {
        if (item.verdict !== "pending") {
          judged.push([item.item_id, item.verdict]);
        }
      }
      this.session = new ReviewSession(ids, judged);
      const first = this.session.firstPending();
      if (first !== null) {
        this.session.goTo(first);
      }
    } catch (err) {
      this.banner = { kind: "load-failed", message: describe(err) };
      this.render();
      return;
    }
    await this.loadCurrent();
  }

  // Fetch the current item's payload. Failure keeps the session draft
  // untouched and shows a retry banner instead of a pane.
  async loadCurrent(): Promise<void> {
    if (!this.session) {
      return;
    }
    try {
      this.currentItem = await this.api.getItem(this.session.currentId);
      if (this.banner.kind === "load-failed") {
        this.banner =
          this.queue.length > 0 ? { kind: "queued", count: this.queue.length } : { kind: "none" };
      }
    } catch (err) {
      this.currentItem = null;
      this.banner = { kind: "load-failed", message: describe(err) };
    }
    this.render();
  }

  async submit(verdict: Verdict): Promise<void> {
    const session = this.session;
    if (!session || this.submitting) {
      return;
    }
    if (verdict === "pass" ? !session.canPass() : !session.canFail()) {
      return;
    }
    const itemId = session.currentId;
    const body: JudgmentBody = {
      verdict,
      checklist: { ...session.draft.checklist },
      annotator: this.annotator,
    };
    const note = session.draft.note.trim();
    if (note) {
      body.note = note;
    }
    this.submitting = true;
    this.render();
    let result: SubmitResult | null = null;
    try {
      result = await this.api.submitJudgment(itemId, body);
    } catch {
      // Transport failure: keep the judgment locally, count the item as
      // judged, and move on; the queue retries until the server answers.
      this.queue.enqueue({ itemId, body });
      session.recordVerdict(itemId, verdict);
      this.banner = { kind: "queued", count: this.queue.length };
      this.scheduleRetry();
    }
    this.submitting = false;
    if (result === null) {
      session.advanceToNextPending();
      await this.loadCurrent();
      return;
    }
    await this.applySubmitResult(itemId, verdict, result);
  }

  private async applySubmitResult(
    itemId: string,
    verdict: Verdict,
    result: SubmitResult,
  ): Promise<void> {
    const session = this.session;
    if (!session) {
      return;
    }
    if (result.kind === "ok") {
      session.recordVerdict(itemId, verdict);
      this.banner =
        this.queue.length > 0 ? { kind: "queued", count: this.queue.length } : { kind: "none" };
      session.advanceToNextPending();
      await this.loadCurrent();
      return;
    }
    if (result.kind === "conflict") {
      // First write won elsewhere: adopt the server's verdict and reload the
      // item so the stored judgment is what's on screen.
      session.recordVerdict(itemId, result.verdict);
      await this.loadCurrent();
      return;
    }
    const message = Object.entries(result.errors)
      .map(([field, error]) => `${field}: ${error}`)
      .join("; ");
    this.banner = { kind: "rejected", message };
    this.render();
  }

  async flushQueue(): Promise<void> {
    if (this.queue.length === 0) {
      return;
    }
    const outcome = await this.queue.flush((itemId, body) =>
      this.api.submitJudgment(itemId, body),
    );
    for (const { entry, result } of outcome.delivered) {
      if (result.kind === "conflict" && this.session) {
        this.session.recordVerdict(entry.itemId, result.verdict);
      } else if (result.kind === "rejected") {
        const message = Object.entries(result.errors)
          .map(([field, error]) => `${field}: ${error}`)
          .join("; ");
        this.banner = { kind: "rejected", message };
      }
    }
    if (outcome.remaining > 0) {
      this.banner = { kind: "queued", count: outcome.remaining };
      this.scheduleRetry();
    } else if (this.banner.kind === "queued") {
      this.banner = { kind: "none" };
    }
    this.render();
  }

  private scheduleRetry(): void {
    if (this.retryTimer !== null) {
      return;
    }
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      void this.flushQueue();
    }, this.retryDelayMs);
  }

  private readonly onKeyDown = (event: KeyboardEvent): void => {
    const target = event.target;
    // Typing in the note field must not trigger shortcuts.
    if (target instanceof HTMLTextAreaElement) {
      return;
    }
    if (target instanceof HTMLInputElement && target.type === "text") {
      return;
    }
    const action = actionForKey(event.key);
    const session = this.session;
    if (!action || !session) {
      return;
    }
    switch (action.kind) {
      case "toggle":
        if (!session.currentJudged) {
          session.toggle(action.key);
          this.render();
        }
        break;
      case "pass":
        void this.submit("pass");
        break;
      case "fail":
        void this.submit("fail");
        break;
      case "next-pending":
        if (session.advanceToNextPending()) {
          void this.loadCurrent();
        }
        break;
      case "next-item":
        session.goTo(Math.min(session.index + 1, session.itemIds.length - 1));
        void this.loadCurrent();
        break;
      case "prev-item":
        session.goTo(Math.max(session.index - 1, 0));
        void this.loadCurrent();
        break;
    }
  };

  render(): void {
    const shell = el("div", "review");
    shell.append(this.renderHeader());
    const banner = this.renderBanner();
    if (banner) {
      shell.append(banner);
    }
    if (this.session && this.currentItem) {
      shell.append(this.renderItem(this.currentItem));
    } else if (this.session && this.banner.kind !== "load-failed") {
      shell.append(el("p", "placeholder", "loading item..."));
    }
    this.root.replaceChildren(shell);
  }

  private renderHeader(): HTMLElement {
    const header = el("header", "topbar");
    header.append(el("span", "batch-id", this.batchId || "review"));
    if (this.session) {
      header.append(renderProgress(this.session.progress(), this.session.index));
    }
    return header;
  }

  private renderBanner(): HTMLElement | null {
    if (this.banner.kind === "none") {
      return null;
    }
    const box = el("div", `banner banner-${this.banner.kind}`);
    if (this.banner.kind === "load-failed") {
      box.append(el("span", "banner-text", `load failed: ${this.banner.message}`));
      const retry = el("button", "btn btn-retry", "Retry");
      retry.addEventListener("click", () => {
        void this.loadCurrent();
      });
      box.append(retry);
      return box;
    }
    if (this.banner.kind === "queued") {
      const n = this.banner.count;
      box.append(
        el("span", "banner-text", `${n} judgment${n === 1 ? "" : "s"} queued offline, retrying`),
      );
      const retry = el("button", "btn btn-retry", "Retry now");
      retry.addEventListener("click", () => {
        void this.flushQueue();
      });
      box.append(retry);
      return box;
    }
    box.append(el("span", "banner-text", `judgment rejected: ${this.banner.message}`));
    return box;
  }

  private renderItem(item: ReviewItem): HTMLElement {
    const main = el("div", "item");
    const meta = el("div", "item-meta");
    meta.append(
      el("span", "item-id mono", item.item_id),
      el("span", "item-domain", item.domain),
      el("span", "item-dataset", item.dataset),
    );
    main.append(meta);
    const panes = el("div", "panes");
    panes.append(
      renderPane("original", originalRows(item.original)),
      renderPane("tool_profile", profileRows(item.profile, item.original)),
    );
    main.append(panes);
    main.append(this.renderControls(item));
    return main;
  }

  private renderControls(item: ReviewItem): HTMLElement {
    const session = this.session as ReviewSession;
    const box = el("div", "controls");
    const serverVerdict = item.verdict !== "pending" ? item.verdict : null;
    const localVerdict = session.verdictOf(item.item_id);
    const verdict = serverVerdict ?? (localVerdict !== "pending" ? localVerdict : null);

    if (verdict) {
      // Already judged: show the stored judgment, nothing is editable.
      const done = el("div", "judged");
      done.append(el("span", "judged-label", "verdict"), verdictBadge(verdict));
      if (item.checklist) {
        done.append(renderChecklist(item.checklist, true).root);
      }
      if (item.note) {
        done.append(el("p", "note-text", item.note));
      }
      if (!serverVerdict) {
        done.append(el("span", "queued-hint", "awaiting delivery"));
      }
      box.append(done);
    } else {
      const checklist = renderChecklist(session.draft.checklist, false);
      for (const key of CHECKLIST_KEYS) {
        checklist.boxes[key].addEventListener("change", () => {
          session.toggle(key);
          this.render();
        });
      }
      box.append(checklist.root);

      const note = el("textarea", "note-input");
      note.placeholder = "note (optional)";
      note.value = session.draft.note;
      note.addEventListener("input", () => {
        session.setNote(note.value);
      });
      box.append(note);

      const buttons = el("div", "buttons");
      const pass = el("button", "btn btn-pass", "Pass (p)");
      pass.disabled = !session.canPass() || this.submitting;
      pass.addEventListener("click", () => {
        void this.submit("pass");
      });
      const fail = el("button", "btn btn-fail", "Fail (f)");
      fail.disabled = !session.canFail() || this.submitting;
      fail.addEventListener("click", () => {
        void this.submit("fail");
      });
      buttons.append(pass, fail);
      box.append(buttons);
    }

    const next = el("button", "btn btn-next", "Next pending (n)");
    next.addEventListener("click", () => {
      if (session.advanceToNextPending()) {
        void this.loadCurrent();
      }
    });
    box.append(next);
    return box;
  }
}
