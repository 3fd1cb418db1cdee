// Learner chat view: visibility-filtered transcript grouped into loop
// rounds, plus a composer that can only submit when the server says it is
// this slot's turn and the draft is within the word limit.

import { ApiError, LearnFlowClient } from "./api.js";
import { clear, countWords, el } from "./dom.js";
import { groupByRound, ViewStore } from "./store.js";
import type { EventRecord } from "./types.js";

export interface ChatOptions {
  sessionId: string;
  token: string;
  slot: string;
  loopStepIds: Set<string>;
}

function describe(event: EventRecord): string {
  if (event.kind === "system") {
    try {
      const payload = JSON.parse(event.content) as { type?: string };
      return `[${payload.type ?? "system"}]`;
    } catch {
      return "[system]";
    }
  }
  return event.content;
}

function eventNode(event: EventRecord): HTMLElement {
  return el(
    "div",
    {
      class: `event kind-${event.kind}`,
      "data-seq": String(event.seq),
      "data-step": event.step_id,
      "data-kind": event.kind,
    },
    [
      el("span", { class: "sender" }, [event.sender]),
      el("span", { class: "content" }, [describe(event)]),
    ],
  );
}

export class ChatView {
  readonly root: HTMLElement;
  private transcript: HTMLElement;
  private banner: HTMLElement;
  private composer: HTMLTextAreaElement;
  private counter: HTMLElement;
  private send: HTMLButtonElement;
  private errorLine: HTMLElement;

  constructor(
    container: HTMLElement,
    private client: LearnFlowClient,
    private store: ViewStore,
    private options: ChatOptions,
  ) {
    this.transcript = el("div", { class: "transcript" });
    this.banner = el("div", { class: "banner", hidden: "hidden" });
    this.composer = el("textarea", { class: "composer", rows: "3" });
    this.counter = el("span", { class: "word-counter" });
    this.send = el("button", { class: "send" }, ["Send"]) as HTMLButtonElement;
    this.errorLine = el("div", { class: "composer-error" });
    this.root = el("div", { class: "chat" }, [
      this.banner,
      this.transcript,
      el("div", { class: "composer-row" }, [this.composer, this.counter, this.send]),
      this.errorLine,
    ]);
    container.append(this.root);

    this.composer.addEventListener("input", () => this.refreshComposer());
    this.send.addEventListener("click", () => void this.submit());
    store.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    clear(this.transcript);
    for (const group of groupByRound(this.store.events, this.options.loopStepIds)) {
      if (group.round === 0) {
        for (const event of group.events) this.transcript.append(eventNode(event));
        continue;
      }
      // Loop iterations fold into collapsible rounds; the latest stays open.
      const details = el("details", { class: "round", "data-round": String(group.round) }, [
        el("summary", {}, [`Round ${group.round}`]),
        ...group.events.map(eventNode),
      ]) as HTMLDetailsElement;
      details.open = true;
      this.transcript.append(details);
    }

    const status = this.store.status();
    if (status === "ended_by_instructor" || status === "completed") {
      this.banner.hidden = false;
      this.banner.textContent =
        status === "completed" ? "Session complete." : "Session ended by the instructor.";
    } else if (this.store.connection === "offline") {
      this.banner.hidden = false;
      this.banner.textContent = "Connection lost; retrying.";
    } else {
      this.banner.hidden = true;
    }
    this.refreshComposer();
  }

  pending(): { step_id: string; max_words: number | null } | null {
    return this.store.pendingTurn(this.options.slot);
  }

  refreshComposer(): void {
    const pending = this.pending();
    const status = this.store.status();
    const over = this.overLimit();
    const limit = pending?.max_words;
    this.counter.textContent =
      limit != null ? `${countWords(this.composer.value)}/${limit}` : `${countWords(this.composer.value)}`;
    this.counter.classList.toggle("over", over);
    const enabled =
      pending !== null && !over && status !== "completed" && status !== "ended_by_instructor";
    this.send.disabled = !enabled;
    this.composer.disabled = pending === null;
    this.composer.placeholder = pending ? `Your turn (step ${pending.step_id})` : "Waiting for your turn";
  }

  overLimit(): boolean {
    const limit = this.pending()?.max_words;
    return limit != null && countWords(this.composer.value) > limit;
  }

  async submit(): Promise<void> {
    const pending = this.pending();
    if (!pending || this.overLimit()) return;
    this.errorLine.textContent = "";
    try {
      await this.client.postInput(this.options.sessionId, this.options.token, this.composer.value);
      this.composer.value = "";
      await this.refreshState();
    } catch (error) {
      if (error instanceof ApiError) {
        // Server-side counts win over the client counter.
        const details = error.details as { limit?: number; actual?: number } | undefined;
        this.errorLine.textContent =
          error.code === "WordLimitExceeded" && details
            ? `Too long: ${details.actual} words, limit ${details.limit}.`
            : error.code === "NotYourTurn"
              ? "It is not your turn."
              : error.message;
        await this.refreshState();
      } else {
        this.errorLine.textContent = "Network error; try again.";
      }
    }
  }

  async refreshState(): Promise<void> {
    const view = await this.client.getState(this.options.sessionId, this.options.token);
    this.store.setView(view);
  }
}
