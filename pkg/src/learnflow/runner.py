"""Drive a session against a provider until it blocks or finishes.

Shared by the CLI and by tests. The HTTP service implements its own pump
because it interleaves locking with provider calls; the transition rules
are identical.
"""

from __future__ import annotations

from collections import deque
from typing import Callable

from . import engine
from .errors import LearnFlowError
from .model import Event, FlowDefinition


class InputsExhausted(LearnFlowError):
    """The scripted inputs ran out while a turn was still awaited."""

    code = "InputsExhausted"


def pump(
    state: engine.SessionState,
    *,
    provider,
    content_store=None,
    sink: Callable[[Event], None] | None = None,
) -> tuple[engine.SessionState, engine.EngineAction]:
    """Advance until the session needs a human or is over.

    Deliveries go to ``sink``; agent invocations are dispatched to
    ``provider`` and their replies applied inline.
    """
    emit = sink or (lambda event: None)
    while True:
        state, action = engine.next_action(state, content_store=content_store)
        if isinstance(action, engine.Deliver):
            emit(action.event)
            continue
        if isinstance(action, engine.InvokeAgent):
            text = provider.generate(
                action.prompt_bundle,
                invocation_id=f"{state.session_id}:{action.nonce}",
            )
            state, events = engine.apply_agent_response(state, action.agent_id, text)
            for event in events:
                emit(event)
            continue
        return state, action


def run_session(
    flow: FlowDefinition,
    *,
    provider,
    inputs: list[dict] | None = None,
    on_await: Callable[[engine.AwaitInput], str] | None = None,
    roster_overrides: dict[str, str] | None = None,
    content_store=None,
    session_id: str = "session",
    sink: Callable[[Event], None] | None = None,
) -> engine.SessionState:
    """Execute a whole session with scripted (or interactive) human turns.

    ``inputs`` entries are ``{"slot": ..., "content": ...}`` consumed in
    AwaitInput order; ``on_await`` is the fallback when the script is empty.
    """
    emit = sink or (lambda event: None)
    state = engine.start_session(flow, roster_overrides, session_id=session_id)
    for event in state.events:
        emit(event)

    queue = deque(inputs or [])
    while True:
        state, action = pump(state, provider=provider, content_store=content_store, sink=emit)
        if isinstance(action, engine.Complete):
            return state
        assert isinstance(action, engine.AwaitInput)
        if queue:
            entry = queue.popleft()
            state, events = engine.submit_input(state, entry["slot"], entry["content"])
        elif on_await is not None:
            state, events = engine.submit_input(state, action.slot_id, on_await(action))
        else:
            raise InputsExhausted(
                f"no scripted input left while awaiting {action.slot_id!r} at step {action.step_id!r}"
            )
        for event in events:
            emit(event)
