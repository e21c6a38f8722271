/** Screen flow for one advising session.
 *
 * The controller talks to the server through SessionApi and renders into a
 * root element. It enforces a single in-flight request, keeps the session id
 * in the URL fragment so a reload can resume, and reconciles with the
 * server's state endpoint after any failure inside a session.
 */

import { ApiError, SessionApi } from "./api.js";
import type { Advice, CasePrompt, SessionState } from "./api.js";
import {
  GridControl,
  buildTutorial,
  button,
  el,
  progressLabel,
  summaryScreen,
} from "./view.js";

export interface ControllerOptions {
  /** Show the treatment label on screen. Off by default: participants are
   * not told which arm they are in. */
  debug?: boolean;
}

const PHASE_DONE = "done";
const PHASE_AWAITING_FINAL = "awaiting_final";

export class SessionController {
  private readonly screen: HTMLElement;
  private readonly badge: HTMLElement;
  private sessionId = "";
  private total = 0;
  private busy = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: SessionApi,
    private readonly opts: ControllerOptions = {},
  ) {
    this.root.textContent = "";
    this.badge = el("div", "debug-badge");
    this.badge.hidden = true;
    this.screen = el("main", "screen");
    const layout = el("div", "layout");
    layout.append(this.screen, buildTutorial());
    this.root.append(this.badge, layout);
  }

  /** Landing screen with a single button that begins a session. */
  welcome(treatment?: string | null): void {
    this.swap(el("section", "welcome-screen"), (section) => {
      section.appendChild(el("h2", "welcome-title", "Prediction task"));
      section.appendChild(
        el(
          "p",
          "welcome-text",
          "You will be asked to make a series of predictions. " +
            "The panel alongside explains the task and how payment works.",
        ),
      );
      section.appendChild(
        button("begin-button", "Begin", () => {
          void this.start(treatment);
        }),
      );
    });
  }

  async start(treatment?: string | null): Promise<void> {
    await this.guard(async () => {
      const created = await this.api.createSession(treatment);
      this.adopt(created.session_id, created.treatment, created.series_length);
      window.location.hash = `s=${created.session_id}`;
      await this.loadCase();
    }, () => void this.start(treatment));
  }

  /** Rebuild the right screen for an existing session (page reload). */
  async resume(sessionId: string): Promise<void> {
    await this.guard(async () => {
      const state = await this.api.state(sessionId);
      this.adopt(state.session_id, state.treatment, state.series_length);
      await this.restoreFrom(state);
    }, () => void this.resume(sessionId));
  }

  private async restoreFrom(state: SessionState): Promise<void> {
    if (state.phase === PHASE_DONE) {
      await this.loadSummary();
    } else if (state.phase === PHASE_AWAITING_FINAL && state.pending) {
      this.renderAdvice(
        state.pending.advice,
        state.pending.initial,
        state.period ?? 0,
      );
    } else {
      await this.loadCase();
    }
  }

  private adopt(sessionId: string, treatment: string, total: number): void {
    this.sessionId = sessionId;
    this.total = total;
    if (this.opts.debug) {
      this.badge.hidden = false;
      this.badge.textContent = `session ${sessionId} · arm ${treatment}`;
    }
  }

  // --- screens ---------------------------------------------------------

  private async loadCase(): Promise<void> {
    const prompt = await this.api.nextCase(this.sessionId);
    this.renderCase(prompt);
  }

  private renderCase(prompt: CasePrompt): void {
    this.swap(el("section", "case-screen"), (section) => {
      section.appendChild(progressLabel(prompt.period, prompt.total));
      section.appendChild(el("p", "vignette", prompt.text));
      section.appendChild(el("p", "question", prompt.question));
      const submit = button("submit-initial", "Submit prediction", () => {
        const value = grid.value;
        if (value === null) {
          return;
        }
        void this.guard(
          () => this.afterInitial(value),
          () => void this.resume(this.sessionId),
        );
      });
      submit.disabled = true;
      const grid = new GridControl(() => {
        submit.disabled = false;
      });
      section.append(grid.root, submit);
    });
  }

  private async afterInitial(value: number): Promise<void> {
    const outcome = await this.api.submitInitial(this.sessionId, value);
    if (outcome.advice !== null) {
      this.renderAdvice(outcome.advice, value, outcome.period);
    } else if (outcome.done) {
      await this.loadSummary();
    } else {
      await this.loadCase();
    }
  }

  private renderAdvice(advice: Advice, initial: number, period: number): void {
    this.swap(el("section", "advice-screen"), (section) => {
      section.appendChild(progressLabel(period, this.total));
      section.appendChild(el("p", "advice-message", advice.message));
      const actions = el("div", "advice-actions");
      actions.appendChild(
        button("accept-advice", "Accept advice", () => {
          void this.guard(
            () => this.afterFinal(advice.value),
            () => void this.resume(this.sessionId),
          );
        }),
      );
      actions.appendChild(
        button("edit-prediction", "Edit prediction", () => {
          editor.hidden = false;
          actions.hidden = true;
        }),
      );
      section.appendChild(actions);

      const editor = el("div", "advice-editor");
      editor.hidden = true;
      const submit = button("submit-final", "Submit final prediction", () => {
        const value = grid.value;
        if (value === null) {
          return;
        }
        void this.guard(
          () => this.afterFinal(value),
          () => void this.resume(this.sessionId),
        );
      });
      const grid = new GridControl();
      grid.select(initial);
      editor.append(grid.root, submit);
      section.appendChild(editor);
    });
  }

  private async afterFinal(value: number): Promise<void> {
    const outcome = await this.api.submitFinal(this.sessionId, value);
    if (outcome.done) {
      await this.loadSummary();
    } else {
      await this.loadCase();
    }
  }

  private async loadSummary(): Promise<void> {
    const summary = await this.api.summary(this.sessionId);
    this.swap(summaryScreen(summary), () => undefined);
  }

  // --- plumbing --------------------------------------------------------

  private swap(
    next: HTMLElement,
    fill: (section: HTMLElement) => void,
  ): void {
    fill(next);
    this.screen.textContent = "";
    this.screen.appendChild(next);
  }

  private renderError(err: unknown, retry: () => void): void {
    const message =
      err instanceof ApiError
        ? `The server reported a problem: ${err.message}`
        : `Something went wrong: ${String(err)}`;
    this.swap(el("section", "error-screen"), (section) => {
      section.appendChild(el("p", "error-message", message));
      section.appendChild(button("retry-button", "Try again", retry));
    });
  }

  /** Run one server-backed action; ignore input while it is in flight. */
  private async guard(
    action: () => Promise<void>,
    retry: () => void,
  ): Promise<void> {
    if (this.busy) {
      return;
    }
    this.busy = true;
    this.setControlsEnabled(false);
    try {
      await action();
    } catch (err) {
      this.renderError(err, retry);
    } finally {
      this.busy = false;
    }
  }

  private setControlsEnabled(enabled: boolean): void {
    for (const node of this.screen.querySelectorAll("button")) {
      node.disabled = !enabled;
    }
  }
}
