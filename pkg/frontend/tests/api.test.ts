import { describe, expect, it } from "vitest";

import { ApiError, ReviewApi } from "../src/api.js";
import type { FetchLike, JudgmentBody, RequestOptions, ResponseLike } from "../src/types.js";

function canned(status: number, body: unknown) {
  const calls: { url: string; init?: RequestOptions }[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const res: ResponseLike = {
      ok: status >= 200 && status < 300,
      status,
      json: async () => body,
    };
    return res;
  };
  return { calls, api: new ReviewApi(fetchImpl) };
}

function fullChecklist() {
  return {
    faithfulness: true,
    completeness: true,
    hallucination_free: true,
    consistency: true,
  };
}

describe("GET endpoints", () => {
  it("hit the documented paths and return the parsed body", async () => {
    const { calls, api } = canned(200, []);
    await api.listBatches();
    await api.getBatch("rb-1");
    await api.getProgress("rb-1");
    await api.getExport("rb-1");
    expect(calls.map((c) => c.url)).toEqual([
      "/api/batches",
      "/api/batches/rb-1",
      "/api/batches/rb-1/progress",
      "/api/batches/rb-1/export",
    ]);
    expect(calls.every((c) => c.init === undefined)).toBe(true);
  });

  it("getItem encodes the id", async () => {
    const { calls, api } = canned(200, {});
    await api.getItem("it 1/2");
    expect(calls[0].url).toBe("/api/items/it%201%2F2");
  });

  it("raise ApiError with the status on a non-ok answer", async () => {
    const { api } = canned(404, { error: "unknown item" });
    await expect(api.getItem("nope")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
    });
  });

  it("prefixes a base URL when configured", async () => {
    const calls: string[] = [];
    const api = new ReviewApi(async (url) => {
      calls.push(url);
      return { ok: true, status: 200, json: async () => [] };
    }, "http://localhost:8100");
    await api.listBatches();
    expect(calls).toEqual(["http://localhost:8100/api/batches"]);
  });
});

describe("submitJudgment", () => {
  const body: JudgmentBody = { verdict: "pass", checklist: fullChecklist(), note: "ok" };

  it("POSTs JSON and maps 200 to ok with the sequence number", async () => {
    const { calls, api } = canned(200, { item_id: "it0", verdict: "pass", seq: 7 });
    const result = await api.submitJudgment("it0", body);
    expect(result).toEqual({ kind: "ok", seq: 7 });
    expect(calls[0].url).toBe("/api/items/it0/judgment");
    expect(calls[0].init?.method).toBe("POST");
    expect(calls[0].init?.headers).toEqual({ "Content-Type": "application/json" });
    expect(JSON.parse(calls[0].init?.body ?? "")).toEqual(body);
  });

  it("maps 409 to conflict carrying the server verdict", async () => {
    const { api } = canned(409, { error: "item already judged", verdict: "fail" });
    expect(await api.submitJudgment("it0", body)).toEqual({ kind: "conflict", verdict: "fail" });
  });

  it("maps 400 to rejected carrying the field errors", async () => {
    const errors = { verdict: "pass requires every checklist entry true" };
    const { api } = canned(400, { errors });
    expect(await api.submitJudgment("it0", body)).toEqual({ kind: "rejected", errors });
  });

  it("throws ApiError on unexpected statuses", async () => {
    const { api } = canned(500, { error: "boom" });
    await expect(api.submitJudgment("it0", body)).rejects.toBeInstanceOf(ApiError);
  });

  it("propagates transport failures for the caller to queue", async () => {
    const api = new ReviewApi(async () => {
      throw new TypeError("network down");
    });
    await expect(api.submitJudgment("it0", body)).rejects.toThrow("network down");
  });
});
