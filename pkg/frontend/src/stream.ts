// Event feed: SSE first, long-poll fallback, resuming from the last seen
// seq so reconnects never duplicate or drop events.

import type { LearnFlowClient } from "./api.js";
import type { EventRecord } from "./types.js";
import type { ViewStore } from "./store.js";

const TERMINAL = new Set(["completed", "ended_by_instructor"]);
const OFFLINE_AFTER_FAILURES = 3;
const RETRY_DELAY_MS = 500;

/** Parse complete SSE frames out of a buffer; returns leftover bytes. */
export function parseSseChunk(
  buffer: string,
  onFrame: (data: string, eventName: string | null) => void,
): string {
  const frames = buffer.split("\n\n");
  const leftover = frames.pop() ?? "";
  for (const frame of frames) {
    let eventName: string | null = null;
    const dataLines: string[] = [];
    for (const line of frame.split("\n")) {
      if (line.startsWith("event: ")) eventName = line.slice(7);
      else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
      else if (line.startsWith("data:")) dataLines.push(line.slice(5));
    }
    if (dataLines.length > 0) onFrame(dataLines.join("\n"), eventName);
  }
  return leftover;
}

export interface FeedHandle {
  stop(): void;
  done: Promise<void>;
}

/**
 * Subscribe to a session's visible events. Tries the SSE stream; any
 * failure falls back to long-polling from the last seen seq. Repeated
 * failures flip the connection to "offline" and keep retrying.
 */
export function startFeed(
  client: LearnFlowClient,
  sessionId: string,
  token: string,
  store: ViewStore,
): FeedHandle {
  const controller = new AbortController();
  let stopped = false;

  async function consumeSse(): Promise<"ended" | "failed"> {
    const response = await fetch(client.streamUrl(sessionId, store.lastSeq()), {
      headers: { Authorization: `Bearer ${token}`, Accept: "text/event-stream" },
      signal: controller.signal,
    });
    if (!response.ok || !response.body) return "failed";
    store.setConnection("live");
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    let sawEnd = false;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      buffer = parseSseChunk(buffer, (data, eventName) => {
        if (eventName === "end") {
          sawEnd = true;
          return;
        }
        store.addEvents([JSON.parse(data) as EventRecord]);
      });
    }
    return sawEnd ? "ended" : "failed";
  }

  async function pollOnce(): Promise<"ended" | "ok"> {
    const { events, status } = await client.getEvents(sessionId, token, store.lastSeq(), 20);
    store.addEvents(events);
    if (TERMINAL.has(status) && events.length === 0) return "ended";
    return "ok";
  }

  const done = (async () => {
    let failures = 0;
    while (!stopped) {
      try {
        const outcome = await consumeSse();
        if (outcome === "ended") break;
        failures += 1;
      } catch (error) {
        if (stopped) break;
        failures += 1;
      }
      // SSE unavailable: fall back to long-polling until it ends or we stop.
      store.setConnection(failures >= OFFLINE_AFTER_FAILURES ? "offline" : "polling");
      try {
        const outcome = await pollOnce();
        failures = 0;
        if (store.connection !== "live") store.setConnection("polling");
        if (outcome === "ended") break;
      } catch {
        failures += 1;
        if (failures >= OFFLINE_AFTER_FAILURES) store.setConnection("offline");
        await new Promise((resolve) => setTimeout(resolve, RETRY_DELAY_MS));
      }
    }
  })();

  return {
    stop() {
      stopped = true;
      controller.abort();
    },
    done,
  };
}
