// DOM construction for the review screen. Pure builders: data in, elements
// out; event wiring stays in the controller.

import type { PaneRow } from "./diff.js";
import { formatValue } from "./diff.js";
import type { Checklist, ChecklistKey, ItemVerdict, Progress } from "./types.js";
import { CHECKLIST_KEYS } from "./types.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

export function renderProgress(progress: Progress, position: number): HTMLElement {
  const judged = progress.pass + progress.fail;
  const box = el("div", "progress");
  box.append(
    el("span", "progress-position", `item ${position + 1} of ${progress.total}`),
    el(
      "span",
      "progress-counts",
      `${judged} judged · ${progress.pass} pass · ${progress.fail} fail · ` +
        `${progress.pending} pending`,
    ),
  );
  return box;
}

function renderValue(row: PaneRow): HTMLElement {
  // Tag lists become chips; everything else renders as text, multi-line
  // values (nested objects, parameter lists) in a preformatted block.
  if (row.key === "tags" && Array.isArray(row.value)) {
    const wrap = el("span", "chips");
    for (const tag of row.value) {
      wrap.append(el("span", "chip", String(tag)));
    }
    return wrap;
  }
  const text = formatValue(row.value);
  if (text.includes("\n")) {
    return el("pre", "value mono", text);
  }
  return el("span", "value", text);
}

export function renderPane(title: string, rows: PaneRow[]): HTMLElement {
  const pane = el("section", "pane");
  pane.append(el("h3", "pane-title", title));
  const list = el("dl", "rows");
  for (const row of rows) {
    const entry = el("div", row.added ? "row added" : "row");
    entry.dataset.key = row.key;
    const term = el("dt", "key", row.key);
    if (row.added) {
      term.append(el("span", "added-badge", "added"));
    }
    const cell = el("dd", "cell");
    cell.append(renderValue(row));
    entry.append(term, cell);
    list.append(entry);
  }
  pane.append(list);
  return pane;
}

export interface ChecklistView {
  root: HTMLElement;
  boxes: Record<ChecklistKey, HTMLInputElement>;
}

export function renderChecklist(checklist: Checklist, disabled: boolean): ChecklistView {
  const root = el("div", "checklist");
  const boxes = {} as Record<ChecklistKey, HTMLInputElement>;
  CHECKLIST_KEYS.forEach((key, i) => {
    const label = el("label", "check");
    const box = el("input");
    box.type = "checkbox";
    box.checked = checklist[key];
    box.disabled = disabled;
    box.dataset.key = key;
    label.append(box, el("span", "check-label", `${i + 1} ${key}`));
    boxes[key] = box;
    root.append(label);
  });
  return { root, boxes };
}

export function verdictBadge(verdict: ItemVerdict): HTMLElement {
  return el("span", `badge badge-${verdict}`, verdict);
}
