// Keyboard bindings: digits flip the checklist toggles, letters drive the
// verdict buttons and navigation.

import { CHECKLIST_KEYS, type ChecklistKey } from "./types.js";

export type KeyAction =
  | { kind: "toggle"; key: ChecklistKey }
  | { kind: "pass" }
  | { kind: "fail" }
  | { kind: "next-pending" }
  | { kind: "next-item" }
  | { kind: "prev-item" };

export function actionForKey(key: string): KeyAction | null {
  const digit = Number.parseInt(key, 10);
  if (digit >= 1 && digit <= CHECKLIST_KEYS.length) {
    return { kind: "toggle", key: CHECKLIST_KEYS[digit - 1] };
  }
  switch (key) {
    case "p":
      return { kind: "pass" };
    case "f":
      return { kind: "fail" };
    case "n":
      return { kind: "next-pending" };
    case "j":
      return { kind: "next-item" };
    case "k":
      return { kind: "prev-item" };
    default:
      return null;
  }
}
