import { describe, expect, it } from "vitest";

import { additionKeys, formatValue, originalRows, profileRows } from "../src/diff.js";

describe("additionKeys", () => {
  it("is the key-set difference of profile against original", () => {
    const original = { function: "x", url: "https://a" };
    const profile = { function: "y", tags: ["a"], when_to_use: "w" };
    expect(additionKeys(original, profile)).toEqual(new Set(["tags", "when_to_use"]));
  });

  it("is empty when every profile key exists in the original", () => {
    const original = { function: "x", tags: [] };
    expect(additionKeys(original, { function: "y" })).toEqual(new Set());
  });

  it("compares keys only, never values", () => {
    const original = { description: "long text" };
    expect(additionKeys(original, { description: "different text" })).toEqual(new Set());
  });
});

describe("originalRows", () => {
  it("keeps raw field names verbatim and in served order", () => {
    const original = {
      name_for_human: "Weather",
      func_description: "forecasts",
      api_arguments: { city: "string" },
    };
    const rows = originalRows(original);
    expect(rows.map((r) => r.key)).toEqual([
      "name_for_human",
      "func_description",
      "api_arguments",
    ]);
    expect(rows.every((r) => !r.added)).toBe(true);
  });
});

describe("profileRows", () => {
  it("flags profile-only keys as additions, shared keys not", () => {
    const original = { function: "raw text", url: "https://a" };
    const profile = { function: "cleaned", tags: ["t"], limitation: "slow" };
    const rows = profileRows(profile, original);
    expect(rows.map((r) => [r.key, r.added])).toEqual([
      ["function", false],
      ["tags", true],
      ["limitation", true],
    ]);
  });

  it("has no row for an optional field missing from the profile", () => {
    const profile = { function: "f", tags: ["t"] };
    const keys = profileRows(profile, {}).map((r) => r.key);
    expect(keys).toEqual(["function", "tags"]);
    expect(keys).not.toContain("when_to_use");
    expect(keys).not.toContain("limitation");
  });
});

describe("formatValue", () => {
  it("returns strings unchanged", () => {
    expect(formatValue("plain text")).toBe("plain text");
  });

  it("stringifies scalars and empties nulls", () => {
    expect(formatValue(3)).toBe("3");
    expect(formatValue(true)).toBe("true");
    expect(formatValue(null)).toBe("");
  });

  it("pretty-prints nested structures", () => {
    expect(formatValue({ q: "string" })).toBe('{\n  "q": "string"\n}');
    expect(formatValue([1, 2])).toBe("[\n  1,\n  2\n]");
  });
});
