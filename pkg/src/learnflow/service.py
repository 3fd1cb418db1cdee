"""HTTP service: flows, live sessions, event feeds, instructor controls.

Capability-token auth: creating a session mints one opaque bearer token per
human slot, and a token authorizes exactly that slot in exactly that
session. Event feeds are visibility-filtered server-side, as a poll
endpoint (optionally long-polling via ``?wait=seconds``) and as an SSE
stream. Agent invocations run server-side: after any stimulus the session
is pumped until it needs a human, calling the configured provider and
feeding replies back in; clients only ever see events.

State-changing endpoints are idempotent under retry when the client sends
the same ``request-id`` header.
"""

from __future__ import annotations

import asyncio
import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Header, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from . import engine
from .content import ContentStore
from .errors import (
    ControlNotApplicable,
    IllegalToggle,
    LearnFlowError,
    NotYourTurn,
    WordLimitExceeded,
)
from .eventlog import EventLog
from .model import Event, FlowDefinition
from .parsing import flow_to_doc, parse_flow_document
from .validation import validate_flow

logger = logging.getLogger(__name__)

TOKEN_BYTES = 24  # 192 bits of entropy per participant token
POLL_INTERVAL = 0.05
MAX_WAIT_SECONDS = 30.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details


@dataclass
class SessionHandle:
    state: engine.SessionState
    lock: threading.RLock = field(default_factory=threading.RLock)
    tokens: dict[str, str] = field(default_factory=dict)  # token -> slot_id
    logged_upto: int = 0


class Registry:
    def __init__(self, data_dir: str | Path, provider=None, content_store: ContentStore | None = None):
        self.data_dir = Path(data_dir)
        self.provider = provider
        self.content_store = content_store
        self.flows: dict[str, FlowDefinition] = {}
        self.sessions: dict[str, SessionHandle] = {}
        self.log = EventLog(self.data_dir)
        self.lock = threading.Lock()
        self.idempotency: dict[tuple[str, str], tuple[int, dict]] = {}


def _visible(state: engine.SessionState, slot: str, since: int = 0) -> list[Event]:
    return [e for e in state.events if slot in e.visibility and e.seq > since]


def create_app(
    data_dir: str | Path,
    provider=None,
    content_store: ContentStore | None = None,
) -> FastAPI:
    app = FastAPI(title="learnflow", version="0.1.0")
    # The web console is served as static files from any origin; tokens are
    # the sole authority, so permissive CORS is safe here.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    reg = Registry(data_dir, provider=provider, content_store=content_store)
    app.state.registry = reg

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        body: dict = {"code": exc.code, "message": exc.message}
        if exc.details:
            body["details"] = exc.details
        return JSONResponse(status_code=exc.status, content=body)

    def _sync_log(handle: SessionHandle) -> None:
        # Caller holds the session lock.
        for event in handle.state.events[handle.logged_upto:]:
            reg.log.append(handle.state.session_id, event)
        handle.logged_upto = len(handle.state.events)

    def _pump(handle: SessionHandle) -> None:
        """Advance the session until it blocks, dispatching agent calls.

        The provider is called outside the session lock so instructors can
        override or end the session while generation is in flight; stale
        replies are dropped via the invocation nonce.
        """
        while True:
            with handle.lock:
                try:
                    state, action = engine.next_action(
                        handle.state, content_store=reg.content_store
                    )
                except engine.InternalBlocked:
                    return
                if isinstance(action, (engine.AwaitInput, engine.Complete)):
                    handle.state = state
                    _sync_log(handle)
                    return
                handle.state = state
                _sync_log(handle)
                if isinstance(action, engine.Deliver):
                    continue
                invocation = action  # InvokeAgent

            if reg.provider is None:
                logger.warning(
                    "session %s: no provider configured; awaiting instructor override",
                    handle.state.session_id,
                )
                return
            try:
                text = reg.provider.generate(
                    invocation.prompt_bundle,
                    invocation_id=f"{handle.state.session_id}:{invocation.nonce}",
                )
            except LearnFlowError as exc:
                logger.warning(
                    "session %s: provider failed (%s); awaiting instructor override",
                    handle.state.session_id,
                    exc,
                )
                return
            with handle.lock:
                pending = handle.state.pending_invocation
                if (
                    handle.state.status != engine.AWAITING_AGENT
                    or pending is None
                    or pending.nonce != invocation.nonce
                ):
                    continue  # overridden or ended while generating
                handle.state, _events = engine.apply_agent_response(
                    handle.state, invocation.agent_id, text
                )
                _sync_log(handle)

    def _session(session_id: str) -> SessionHandle:
        handle = reg.sessions.get(session_id)
        if handle is None:
            raise ApiError(404, "UnknownSession", f"no session {session_id!r}")
        return handle

    def _auth(session_id: str, authorization: str | None) -> tuple[SessionHandle, str]:
        handle = _session(session_id)
        if not authorization or not authorization.startswith("Bearer "):
            raise ApiError(401, "Unauthorized", "missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        slot = handle.tokens.get(token)
        if slot is None:
            raise ApiError(401, "Unauthorized", "unknown token for this session")
        return handle, slot

    def _idempotent(request_id: str | None, path: str, compute):
        if not request_id:
            status, body = compute()
            return JSONResponse(status_code=status, content=body)
        key = (path, request_id)
        with reg.lock:
            cached = reg.idempotency.get(key)
        if cached is not None:
            return JSONResponse(status_code=cached[0], content=cached[1])
        status, body = compute()
        with reg.lock:
            reg.idempotency[key] = (status, body)
        return JSONResponse(status_code=status, content=body)

    # --- flows ---------------------------------------------------------------

    @app.post("/v1/flows")
    def create_flow(body: dict, request_id: str | None = Header(None)):
        def compute():
            try:
                flow = parse_flow_document(body)
            except LearnFlowError as exc:
                return 422, {
                    "code": exc.code,
                    "message": str(exc),
                    "details": {"ok": False, "diagnostics": []},
                }
            if flow.id in reg.flows:
                return 409, {"code": "DuplicateFlow", "message": f"flow {flow.id!r} already exists"}
            report = validate_flow(flow)
            if not report.ok:
                return 422, {
                    "code": "ValidationFailed",
                    "message": "flow does not validate",
                    "details": report.to_doc(),
                }
            reg.flows[flow.id] = flow
            flows_dir = reg.data_dir / "flows"
            flows_dir.mkdir(parents=True, exist_ok=True)
            (flows_dir / f"{flow.id}.json").write_text(
                json.dumps(flow_to_doc(flow), ensure_ascii=False, indent=2) + "\n",
                encoding="utf-8",
            )
            return 201, {"flow_id": flow.id, "report": report.to_doc()}

        return _idempotent(request_id, "/v1/flows", compute)

    @app.get("/v1/flows/{flow_id}")
    def get_flow(flow_id: str):
        flow = reg.flows.get(flow_id)
        if flow is None:
            raise ApiError(404, "UnknownFlow", f"no flow {flow_id!r}")
        return flow_to_doc(flow)

    # --- sessions -------------------------------------------------------------

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict, request_id: str | None = Header(None)):
        def compute():
            flow_id = body.get("flow_id")
            flow = reg.flows.get(flow_id)
            if flow is None:
                return 404, {"code": "UnknownFlow", "message": f"no flow {flow_id!r}"}
            overrides = body.get("roster_overrides") or {}
            session_id = f"s-{secrets.token_hex(8)}"
            try:
                state = engine.start_session(flow, overrides, session_id=session_id)
            except IllegalToggle as exc:
                return 422, {"code": exc.code, "message": str(exc)}
            handle = SessionHandle(state=state)
            tokens: dict[str, str] = {}
            for slot in flow.roster:
                if state.sources.get(slot.slot_id) == "human":
                    token = secrets.token_urlsafe(TOKEN_BYTES)
                    handle.tokens[token] = slot.slot_id
                    tokens[slot.slot_id] = token
            reg.sessions[session_id] = handle
            with handle.lock:
                _sync_log(handle)
            _pump(handle)
            return 201, {"session_id": session_id, "tokens": tokens}

        return _idempotent(request_id, "/v1/sessions", compute)

    @app.post("/v1/sessions/{session_id}/input")
    def post_input(
        session_id: str,
        body: dict,
        authorization: str | None = Header(None),
        request_id: str | None = Header(None),
    ):
        handle, slot = _auth(session_id, authorization)

        def compute():
            content = body.get("content", "")
            with handle.lock:
                try:
                    handle.state, events = engine.submit_input(handle.state, slot, content)
                except NotYourTurn as exc:
                    return 409, {"code": exc.code, "message": str(exc)}
                except WordLimitExceeded as exc:
                    return 422, {
                        "code": exc.code,
                        "message": str(exc),
                        "details": {"limit": exc.limit, "actual": exc.actual},
                    }
                _sync_log(handle)
                seq = events[-1].seq
            _pump(handle)
            return 200, {"seq": seq}

        return _idempotent(request_id, f"/v1/sessions/{session_id}/input", compute)

    @app.post("/v1/sessions/{session_id}/control")
    def control(
        session_id: str,
        body: dict,
        authorization: str | None = Header(None),
        request_id: str | None = Header(None),
    ):
        handle, slot = _auth(session_id, authorization)
        if slot != handle.state.flow.instructor_slot():
            raise ApiError(403, "Forbidden", "control actions require the instructor token")

        def compute():
            action = body.get("action")
            with handle.lock:
                try:
                    if action == "advance":
                        handle.state, _ = engine.control_advance(handle.state)
                    elif action == "skip_step":
                        handle.state, _ = engine.control_skip(handle.state)
                    elif action == "override_response":
                        handle.state, _ = engine.control_override(handle.state, body.get("text", ""))
                    elif action == "end":
                        handle.state, _ = engine.control_end(handle.state)
                    else:
                        return 422, {"code": "UnknownAction", "message": f"unknown action {action!r}"}
                except ControlNotApplicable as exc:
                    return 409, {"code": exc.code, "message": str(exc)}
                _sync_log(handle)
            _pump(handle)
            return 200, {"status": handle.state.status}

        return _idempotent(request_id, f"/v1/sessions/{session_id}/control", compute)

    @app.get("/v1/sessions/{session_id}/events")
    def get_events(
        session_id: str,
        since: int = 0,
        wait: float = 0,
        authorization: str | None = Header(None),
    ):
        handle, slot = _auth(session_id, authorization)
        deadline = time.monotonic() + min(max(wait, 0.0), MAX_WAIT_SECONDS)
        while True:
            with handle.lock:
                events = _visible(handle.state, slot, since)
                status = handle.state.status
            terminal = status in (engine.COMPLETED, engine.ENDED_BY_INSTRUCTOR)
            if events or terminal or time.monotonic() >= deadline:
                return {"events": [e.to_doc() for e in events], "status": status}
            time.sleep(POLL_INTERVAL)

    @app.get("/v1/sessions/{session_id}/stream")
    async def stream(
        session_id: str,
        request: Request,
        since: int = 0,
        authorization: str | None = Header(None),
    ):
        handle, slot = _auth(session_id, authorization)

        async def generate():
            last = since
            while True:
                with handle.lock:
                    events = _visible(handle.state, slot, last)
                    status = handle.state.status
                for event in events:
                    last = event.seq
                    yield f"data: {json.dumps(event.to_doc(), ensure_ascii=False)}\n\n"
                if status in (engine.COMPLETED, engine.ENDED_BY_INSTRUCTOR):
                    yield "event: end\ndata: {}\n\n"
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(POLL_INTERVAL)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/v1/sessions/{session_id}/state")
    def get_state(session_id: str, authorization: str | None = Header(None)):
        handle, slot = _auth(session_id, authorization)
        with handle.lock:
            state = handle.state
            awaiting = None
            if state.status == engine.AWAITING_INPUT:
                step = state.flow.steps[state.cursor]
                if hasattr(step, "human_variant"):
                    awaiting = {
                        "slot_id": step.slot,
                        "step_id": step.human_variant.id,
                        "max_words": step.human_variant.max_words,
                    }
                else:
                    awaiting = {
                        "slot_id": step.from_slot,
                        "step_id": step.id,
                        "max_words": step.max_words,
                    }
            view = {
                "session_id": state.session_id,
                "status": state.status,
                "slot_id": slot,
                "awaiting": awaiting,
                "your_turn": bool(awaiting and awaiting["slot_id"] == slot),
                "last_seq": len(state.events),
            }
            if slot == state.flow.instructor_slot():
                view["tallies"] = {
                    k: {"correct": v.correct, "total_graded": v.total_graded}
                    for k, v in state.tallies.items()
                }
        return view

    return app
