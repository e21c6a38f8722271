import { describe, expect, test } from "vitest";

import { ApiError, SessionApi } from "../src/api.js";
import type { FetchLike } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  body: unknown;
}

function recordingFetch(
  responder: (url: string, init?: RequestInit) => Response,
): { calls: Recorded[]; fetchFn: FetchLike } {
  const calls: Recorded[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    calls.push({
      url,
      method: init?.method ?? "GET",
      body:
        typeof init?.body === "string" ? JSON.parse(init.body) : undefined,
    });
    return responder(url, init);
  };
  return { calls, fetchFn };
}

const ok = (payload: unknown): Response =>
  new Response(JSON.stringify(payload), {
    status: 200,
    headers: { "content-type": "application/json" },
  });

describe("SessionApi", () => {
  test("createSession posts the treatment and strips trailing slashes", async () => {
    const { calls, fetchFn } = recordingFetch(() =>
      ok({ session_id: "s1", treatment: "Learned", series_length: 5 }),
    );
    const api = new SessionApi("http://example.test:9///", fetchFn);
    const created = await api.createSession("Learned");
    expect(created.session_id).toBe("s1");
    expect(calls).toHaveLength(1);
    expect(calls[0]!.url).toBe("http://example.test:9/v1/sessions");
    expect(calls[0]!.method).toBe("POST");
    expect(calls[0]!.body).toEqual({ treatment: "Learned" });
  });

  test("createSession without a treatment sends an empty object", async () => {
    const { calls, fetchFn } = recordingFetch(() =>
      ok({ session_id: "s2", treatment: "Random", series_length: 5 }),
    );
    const api = new SessionApi("http://h", fetchFn);
    await api.createSession(null);
    expect(calls[0]!.body).toEqual({});
  });

  test("each endpoint hits its documented path", async () => {
    const { calls, fetchFn } = recordingFetch(() => ok({}));
    const api = new SessionApi("http://h", fetchFn);
    await api.state("sid");
    await api.nextCase("sid");
    await api.submitInitial("sid", 3);
    await api.submitFinal("sid", 7);
    await api.summary("sid");
    expect(calls.map((c) => `${c.method} ${c.url}`)).toEqual([
      "GET http://h/v1/sessions/sid",
      "GET http://h/v1/sessions/sid/next",
      "POST http://h/v1/sessions/sid/initial",
      "POST http://h/v1/sessions/sid/final",
      "GET http://h/v1/sessions/sid/summary",
    ]);
    expect(calls[2]!.body).toEqual({ value: 3 });
    expect(calls[3]!.body).toEqual({ value: 7 });
  });

  test("non-2xx responses raise ApiError with the server detail", async () => {
    const { fetchFn } = recordingFetch(
      () =>
        new Response(JSON.stringify({ detail: "phase is awaiting_final" }), {
          status: 409,
          headers: { "content-type": "application/json" },
        }),
    );
    const api = new SessionApi("http://h", fetchFn);
    const err = await api.nextCase("sid").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).message).toBe("phase is awaiting_final");
  });

  test("a non-JSON error body falls back to a status message", async () => {
    const { fetchFn } = recordingFetch(
      () => new Response("boom", { status: 502 }),
    );
    const api = new SessionApi("http://h", fetchFn);
    const err = await api.summary("sid").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(502);
    expect((err as ApiError).message).toContain("502");
  });

  test("a network failure surfaces as ApiError with status 0", async () => {
    const api = new SessionApi("http://h", async () => {
      throw new TypeError("connect ECONNREFUSED");
    });
    const err = await api.state("sid").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).message).toContain("could not reach the server");
  });
});
