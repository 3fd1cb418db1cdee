// Entry point: read ?view=&session=&token=&slot=&flow=&api= from the URL
// and mount the matching view.

import { LearnFlowClient } from "./api.js";
import { ChatView } from "./chat.js";
import { DesignerView } from "./designer.js";
import { MonitorView } from "./monitor.js";
import { loopStepIdsOf, ViewStore } from "./store.js";
import { startFeed } from "./stream.js";

async function mount(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const api = params.get("api") ?? "";
  const client = new LearnFlowClient(api);
  const container = document.getElementById("app");
  if (!container) throw new Error("missing #app container");

  const view = params.get("view") ?? "designer";
  if (view === "designer") {
    new DesignerView(container, client);
    return;
  }

  const sessionId = params.get("session");
  const token = params.get("token");
  const slot = params.get("slot");
  const flowId = params.get("flow");
  if (!sessionId || !token || !slot || !flowId) {
    container.textContent = "Missing ?session=&token=&slot=&flow= parameters.";
    return;
  }

  const flow = await client.getFlow(flowId);
  const store = new ViewStore();
  store.setView(await client.getState(sessionId, token));

  if (view === "monitor") {
    const learnerSlots = flow.roster.filter((s) => s.role === "learner").map((s) => s.slot_id);
    new MonitorView(container, client, store, { sessionId, token, learnerSlots });
  } else {
    new ChatView(container, client, store, {
      sessionId,
      token,
      slot,
      loopStepIds: loopStepIdsOf(flow),
    });
  }

  const feed = startFeed(client, sessionId, token, store);
  // Re-check the awaited turn whenever new events land.
  let lastSeen = 0;
  store.subscribe(() => {
    const seq = store.lastSeq();
    if (seq !== lastSeen) {
      lastSeen = seq;
      void client.getState(sessionId, token).then((v) => store.setView(v));
    }
  });
  window.addEventListener("beforeunload", () => feed.stop());
}

void mount();
