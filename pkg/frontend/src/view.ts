/** DOM building blocks for the session screens.
 *
 * Everything here is presentation-only: the text of vignettes, questions,
 * advice messages, scores, and payments arrives verbatim from the server.
 */

import type { SessionSummary } from "./api.js";

/** The only selectable prediction values, as integer tenths of probability. */
export const GRID_TENTHS: readonly number[] = Object.freeze(
  Array.from({ length: 11 }, (_, i) => i),
);

/** Row of eleven buttons, 0% through 100% in steps of ten. */
export class GridControl {
  readonly root: HTMLDivElement;
  private readonly buttons = new Map<number, HTMLButtonElement>();
  private selected: number | null = null;

  constructor(private readonly onSelect?: (tenths: number) => void) {
    this.root = document.createElement("div");
    this.root.className = "grid-control";
    for (const tenths of GRID_TENTHS) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = "grid-value";
      button.dataset.tenths = String(tenths);
      button.textContent = `${tenths * 10}%`;
      button.addEventListener("click", () => this.select(tenths));
      this.buttons.set(tenths, button);
      this.root.appendChild(button);
    }
  }

  /** Mark one of the eleven values as chosen. */
  select(tenths: number): void {
    const target = this.buttons.get(tenths);
    if (target === undefined) {
      throw new Error(`not a selectable value: ${tenths}`);
    }
    this.selected = tenths;
    for (const [value, button] of this.buttons) {
      button.classList.toggle("selected", value === tenths);
      button.setAttribute("aria-pressed", String(value === tenths));
    }
    this.onSelect?.(tenths);
  }

  get value(): number | null {
    return this.selected;
  }

  setEnabled(enabled: boolean): void {
    for (const button of this.buttons.values()) {
      button.disabled = !enabled;
    }
  }
}

export const TUTORIAL_TITLE = "How this study works";

export const TUTORIAL_SECTIONS: readonly { heading: string; body: string }[] = [
  {
    heading: "Your task",
    body:
      "You will review a short series of defendant profiles. For each one, " +
      "estimate the chance that the defendant fails to appear in court, " +
      "using the scale from 0% to 100% in steps of 10%.",
  },
  {
    heading: "Advice",
    body:
      "On some cases an algorithmic assistant may suggest a revised " +
      "estimate after you enter your own. You can accept the suggestion " +
      "as-is or edit your prediction before it is recorded. On other " +
      "cases your first answer is recorded directly.",
  },
  {
    heading: "Key terms",
    body:
      "“Fail to appear” means the defendant misses a scheduled " +
      "court date. Your “prediction” is the percentage chance you " +
      "assign to that outcome for the profile shown.",
  },
  {
    heading: "Payment",
    body:
      "You earn a base payment plus an accuracy bonus. The bonus is " +
      "computed so that reporting your honest best estimate maximizes " +
      "your expected earnings — there is no way to game it by " +
      "shading your answers.",
  },
];

/** Side panel that stays on screen throughout the prediction task. */
export function buildTutorial(): HTMLElement {
  const aside = document.createElement("aside");
  aside.className = "tutorial";
  const title = document.createElement("h2");
  title.textContent = TUTORIAL_TITLE;
  aside.appendChild(title);
  for (const section of TUTORIAL_SECTIONS) {
    const heading = document.createElement("h3");
    heading.textContent = section.heading;
    const body = document.createElement("p");
    body.textContent = section.body;
    aside.append(heading, body);
  }
  return aside;
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function button(
  className: string,
  label: string,
  onClick: () => void,
): HTMLButtonElement {
  const node = el("button", className, label);
  node.type = "button";
  node.addEventListener("click", onClick);
  return node;
}

export function progressLabel(period: number, total: number): HTMLElement {
  return el("div", "progress", `Case ${period} of ${total}`);
}

export function summaryScreen(summary: SessionSummary): HTMLElement {
  const section = el("section", "summary-screen");
  section.appendChild(el("h2", "summary-title", "Session complete"));
  const list = el("dl", "summary-facts");
  const fact = (label: string, value: string, className: string) => {
    list.appendChild(el("dt", "summary-label", label));
    list.appendChild(el("dd", className, value));
  };
  fact("Cases completed", String(summary.n_records), "summary-cases");
  fact(
    "Accuracy score",
    summary.mean_quadratic.toFixed(3),
    "summary-score",
  );
  fact(
    "Base payment",
    `$${summary.base_payment.toFixed(2)}`,
    "summary-base",
  );
  fact("Accuracy bonus", `$${summary.bonus_display}`, "summary-bonus");
  fact("Total payment", `$${summary.total_display}`, "summary-total");
  section.appendChild(list);
  return section;
}
