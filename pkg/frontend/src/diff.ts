// Rows for the two review panes. A profile field counts as an addition when
// its key is absent from the original document's key set; original keys are
// shown verbatim, never renamed on the client.

export interface PaneRow {
  key: string;
  value: unknown;
  added: boolean;
}

export function additionKeys(
  original: Record<string, unknown>,
  profile: Record<string, unknown>,
): Set<string> {
  const originalKeys = new Set(Object.keys(original));
  return new Set(Object.keys(profile).filter((key) => !originalKeys.has(key)));
}

export function originalRows(original: Record<string, unknown>): PaneRow[] {
  return Object.entries(original).map(([key, value]) => ({ key, value, added: false }));
}

export function profileRows(
  profile: Record<string, unknown>,
  original: Record<string, unknown>,
): PaneRow[] {
  const added = additionKeys(original, profile);
  return Object.entries(profile).map(([key, value]) => ({
    key,
    value,
    added: added.has(key),
  }));
}

export function formatValue(value: unknown): string {
  if (typeof value === "string") {
    return value;
  }
  if (value === null || value === undefined) {
    return "";
  }
  if (typeof value === "number" || typeof value === "boolean") {
    return String(value);
  }
  return JSON.stringify(value, null, 2);
}
