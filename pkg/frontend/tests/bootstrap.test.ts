// @vitest-environment jsdom
import { beforeEach, describe, expect, test, vi } from "vitest";

import { bootstrap } from "../src/main.js";

describe("bootstrap", () => {
  beforeEach(() => {
    document.body.textContent = "";
    window.location.hash = "";
  });

  test("throws without a mount point", () => {
    expect(() => bootstrap()).toThrow("missing #app mount point");
  });

  test("renders the welcome screen on a fresh page", () => {
    const app = document.createElement("div");
    app.id = "app";
    document.body.appendChild(app);
    bootstrap();
    expect(app.querySelector(".welcome-screen")).not.toBeNull();
    expect(app.querySelector(".begin-button")).not.toBeNull();
    expect(app.querySelector(".tutorial")).not.toBeNull();
  });

  test("a session id in the fragment triggers a resume against the server", () => {
    const app = document.createElement("div");
    app.id = "app";
    document.body.appendChild(app);
    const fetchSpy = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValue(
        new Response(JSON.stringify({ detail: "unknown session" }), {
          status: 404,
          headers: { "content-type": "application/json" },
        }),
      );
    try {
      window.location.hash = "#s=s000123-abc";
      const win = {
        location: {
          search: "?server=http://resume.test",
          hash: window.location.hash,
        },
        document,
      } as unknown as Window;
      bootstrap(win);
      expect(fetchSpy).toHaveBeenCalledWith(
        "http://resume.test/v1/sessions/s000123-abc",
        undefined,
      );
    } finally {
      fetchSpy.mockRestore();
    }
  });
});
