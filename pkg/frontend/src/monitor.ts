// Instructor monitor: the unfiltered feed with hidden-from-learners badges
// and the four control actions, mapped one-to-one onto the control endpoint.

import { ApiError, LearnFlowClient } from "./api.js";
import { clear, el } from "./dom.js";
import type { ViewStore } from "./store.js";
import type { EventRecord } from "./types.js";

export interface MonitorOptions {
  sessionId: string;
  token: string;
  learnerSlots: string[];
}

export function hiddenFromLearners(event: EventRecord, learnerSlots: string[]): boolean {
  return learnerSlots.length > 0 && learnerSlots.every((slot) => !event.visibility.includes(slot));
}

export class MonitorView {
  readonly root: HTMLElement;
  private feed: HTMLElement;
  private statusLine: HTMLElement;
  private controlError: HTMLElement;
  private overrideText: HTMLTextAreaElement;

  constructor(
    container: HTMLElement,
    private client: LearnFlowClient,
    private store: ViewStore,
    private options: MonitorOptions,
  ) {
    this.feed = el("div", { class: "feed" });
    this.statusLine = el("div", { class: "status" });
    this.controlError = el("div", { class: "control-error" });
    this.overrideText = el("textarea", {
      class: "override-text",
      rows: "2",
      placeholder: "Override text",
    });

    const buttons = el("div", { class: "controls" }, [
      this.controlButton("advance", "Advance"),
      this.controlButton("skip_step", "Skip step"),
      this.overrideButton(),
      this.controlButton("end", "End session"),
    ]);
    this.root = el("div", { class: "monitor" }, [
      this.statusLine,
      buttons,
      this.overrideText,
      this.controlError,
      this.feed,
    ]);
    container.append(this.root);
    store.subscribe(() => this.render());
    this.render();
  }

  private controlButton(action: "advance" | "skip_step" | "end", label: string): HTMLButtonElement {
    const button = el("button", { class: `control-${action}` }, [label]) as HTMLButtonElement;
    button.addEventListener("click", () => void this.control(action));
    return button;
  }

  private overrideButton(): HTMLButtonElement {
    const button = el("button", { class: "control-override_response" }, [
      "Override response",
    ]) as HTMLButtonElement;
    button.addEventListener("click", () => void this.control("override_response", this.overrideText.value));
    return button;
  }

  async control(
    action: "advance" | "skip_step" | "override_response" | "end",
    text?: string,
  ): Promise<void> {
    this.controlError.textContent = "";
    try {
      const { status } = await this.client.control(this.options.sessionId, this.options.token, action, text);
      this.statusLine.textContent = `status: ${status}`;
      const view = await this.client.getState(this.options.sessionId, this.options.token);
      this.store.setView(view);
    } catch (error) {
      this.controlError.textContent =
        error instanceof ApiError ? `${error.code}: ${error.message}` : "Network error";
    }
  }

  render(): void {
    this.statusLine.textContent = `status: ${this.store.status()} (${this.store.connection})`;
    clear(this.feed);
    for (const event of this.store.events) {
      const node = el(
        "div",
        {
          class: `event kind-${event.kind}`,
          "data-seq": String(event.seq),
          "data-step": event.step_id,
        },
        [
          el("span", { class: "sender" }, [event.sender]),
          el("span", { class: "content" }, [event.content]),
        ],
      );
      if (hiddenFromLearners(event, this.options.learnerSlots)) {
        node.append(el("span", { class: "badge-hidden" }, ["hidden from learners"]));
      }
      this.feed.append(node);
    }
  }
}
