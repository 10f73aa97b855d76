// Wire types for the review service REST API.

export const CHECKLIST_KEYS = [
  "faithfulness",
  "completeness",
  "hallucination_free",
  "consistency",
] as const;

export type ChecklistKey = (typeof CHECKLIST_KEYS)[number];

export type Checklist = Record<ChecklistKey, boolean>;

export type Verdict = "pass" | "fail";

export type ItemVerdict = Verdict | "pending";

export interface Progress {
  total: number;
  pending: number;
  pass: number;
  fail: number;
}

export interface BatchSummary {
  batch_id: string;
  total: number;
  progress: Progress;
}

export interface BatchItemRef {
  item_id: string;
  verdict: ItemVerdict;
}

export interface BatchDetail {
  batch_id: string;
  items: BatchItemRef[];
}

export interface ReviewItem {
  item_id: string;
  dataset: string;
  domain: string;
  provenance: string;
  original: Record<string, unknown>;
  profile: Record<string, unknown>;
  verdict: ItemVerdict;
  checklist: Checklist | null;
  note: string | null;
  annotator: string | null;
  judged_at: number | null;
}

export interface JudgmentBody {
  verdict: Verdict;
  checklist: Checklist;
  note?: string;
  annotator?: string;
}

export interface ExportRecord {
  item_id: string;
  verdict: Verdict;
  checklist: Checklist;
  note: string | null;
  annotator: string | null;
  judged_at: number | null;
}

export interface BatchExport {
  batch_id: string;
  judged: ExportRecord[];
  pending: string[];
}

// Structural subset of the browser fetch API, so tests can stand in a fake
// server without a Response polyfill. A transport failure rejects; any
// answer from the server resolves.
export interface ResponseLike {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export interface RequestOptions {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}

export type FetchLike = (url: string, init?: RequestOptions) => Promise<ResponseLike>;

export function emptyChecklist(): Checklist {
  return {
    faithfulness: false,
    completeness: false,
    hallucination_free: false,
    consistency: false,
  };
}

export function allChecked(checklist: Checklist): boolean {
  return CHECKLIST_KEYS.every((key) => checklist[key]);
}
