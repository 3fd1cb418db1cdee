// Client-side session view: server-provided events only, deduplicated and
// strictly seq-ordered. The store never widens access and never fabricates
// events; everything rendered came off the wire.

import type { ConnectionState, EventRecord, SessionStateView } from "./types.js";

export class ViewStore {
  events: EventRecord[] = [];
  connection: ConnectionState = "offline";
  view: SessionStateView | null = null;

  private seen = new Set<number>();
  private listeners = new Set<() => void>();

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  lastSeq(): number {
    const last = this.events[this.events.length - 1];
    return last ? last.seq : 0;
  }

  /** Add events, dropping duplicates by seq. Returns how many were new. */
  addEvents(incoming: EventRecord[]): number {
    let added = 0;
    for (const event of incoming) {
      if (this.seen.has(event.seq)) continue;
      this.seen.add(event.seq);
      this.events.push(event);
      added += 1;
    }
    if (added > 0) {
      this.events.sort((a, b) => a.seq - b.seq);
      this.notify();
    }
    return added;
  }

  setConnection(connection: ConnectionState): void {
    if (this.connection !== connection) {
      this.connection = connection;
      this.notify();
    }
  }

  setView(view: SessionStateView): void {
    this.view = view;
    this.notify();
  }

  status(): string {
    return this.view?.status ?? "running";
  }

  /** The composer is enabled only when the server says this slot is awaited. */
  pendingTurn(slot: string): { step_id: string; max_words: number | null } | null {
    const awaiting = this.view?.awaiting;
    if (!awaiting || awaiting.slot_id !== slot) return null;
    return { step_id: awaiting.step_id, max_words: awaiting.max_words };
  }
}

export interface EventGroup {
  round: number; // 0 = outside any loop
  events: EventRecord[];
}

/**
 * Group events for rendering: consecutive events sharing a loop round
 * collapse into one group, so drill flows read as round 1, round 2, ...
 * Loop membership comes from the flow document (steps covered by a range).
 */
export function groupByRound(events: EventRecord[], loopStepIds: Set<string>): EventGroup[] {
  const groups: EventGroup[] = [];
  for (const event of events) {
    const round = loopStepIds.has(event.step_id) ? event.iteration + 1 : 0;
    const current = groups[groups.length - 1];
    if (current && current.round === round) {
      current.events.push(event);
    } else {
      groups.push({ round, events: [event] });
    }
  }
  return groups;
}

/** Ids of all steps covered by repetition ranges, variants included. */
export function loopStepIdsOf(flow: {
  steps: Array<Record<string, unknown> & { no: string; kind: string }>;
}): Set<string> {
  const ids = new Set<string>();
  const byNo = flow.steps.map((s) => s.no);
  for (const step of flow.steps) {
    if (step.kind !== "repetition") continue;
    const range = step.range as [string, string];
    const first = byNo.indexOf(range[0]);
    const last = byNo.indexOf(range[1]);
    if (first < 0 || last < 0) continue;
    for (const covered of flow.steps.slice(first, last + 1)) {
      ids.add(covered.no);
      const human = covered.human_variant as { no?: string } | undefined;
      if (human?.no) ids.add(human.no);
      const pair = covered.ai_variant as Array<{ no?: string }> | undefined;
      for (const sub of pair ?? []) if (sub.no) ids.add(sub.no);
    }
  }
  return ids;
}
