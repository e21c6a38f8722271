/** Entry point: wires query-string configuration to the controller.
 *
 * ?server=http://host:port  base URL of the session service
 * ?treatment=Learned        pin an arm instead of server-side assignment
 * ?debug                    show the session id and arm on screen
 *
 * The session id lives in the URL fragment (#s=...), so reloading the page
 * resumes the session in place.
 */

import { SessionApi } from "./api.js";
import { SessionController } from "./controller.js";

export function bootstrap(win: Window = window): SessionController {
  const params = new URLSearchParams(win.location.search);
  const base = params.get("server") ?? "http://127.0.0.1:8000";
  const root = win.document.getElementById("app");
  if (root === null) {
    throw new Error("missing #app mount point");
  }
  const api = new SessionApi(base);
  const controller = new SessionController(root, api, {
    debug: params.has("debug"),
  });
  const fragment = new URLSearchParams(win.location.hash.replace(/^#/, ""));
  const existing = fragment.get("s");
  if (existing !== null && existing !== "") {
    void controller.resume(existing);
  } else {
    controller.welcome(params.get("treatment"));
  }
  return controller;
}

// Module scripts run after parsing, so the mount point exists when the page
// loads this file; tests import bootstrap() and call it against their own DOM.
if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  bootstrap();
}
