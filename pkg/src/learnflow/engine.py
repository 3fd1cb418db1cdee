"""Deterministic session state machine.

A session executes a validated flow step by step. Transitions are pure:
every operation takes a state and returns a fresh successor plus whatever
it produced (an action to perform or events to record), so replay and
concurrent snapshot reads are safe by construction. External callers drive
the machine through four stimuli:

- ``next_action``     advance until the engine needs something
- ``submit_input``    a human turn arrived
- ``apply_agent_response``  a provider (or the instructor) answered
- the ``control_*``   instructor interventions (advance, skip, override, end)

Scheduling rules: persona/material/instruction steps deliver an event and
auto-advance; instruction_ai interpolates, queues an invocation, and the
following call dispatches it; user_input blocks until submitted;
ai_response delivers the last undelivered reply (generating on demand from
the most recent user input addressed to that agent); repetition and branch
steps are silent control flow; alternatives resolve by the slot's source
toggle fixed at session start.

Every emitted event includes the instructor in recipients and visibility.
Event ``seq`` starts at 1 and is gapless. System events carry a JSON
payload in ``content`` (types: session_started, agent_reply,
ungraded_response, step_skipped, session_ended) — these make the event log
self-contained for replay.
"""

from __future__ import annotations

import base64
import copy
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Union

from .errors import (
    AgentMismatch,
    ControlNotApplicable,
    FlowExecutionError,
    IllegalToggle,
    InternalBlocked,
    InvalidFlow,
    NoPendingInvocation,
    NoResponseInScope,
    NotYourTurn,
    UnboundRuntimePlaceholder,
    UnknownTarget,
    UnpairedResponse,
    WordLimitExceeded,
)
from .gateway import ORIGIN_INSTRUCTOR, ORIGIN_LEARNER, PromptBundle, assemble_prompt
from .model import (
    ROLE_INSTRUCTOR,
    SOURCE_AI,
    SOURCE_HUMAN,
    VISIBILITY_ALL,
    AgentPromptStep,
    AiResponseStep,
    AlternativeStep,
    BranchStep,
    Event,
    FlowDefinition,
    InstructionAiStep,
    InstructionLearnerStep,
    ReferenceMaterialsStep,
    RepetitionStep,
    UserInputStep,
)
from .parsing import PLACEHOLDER_RE, flow_to_doc
from .validation import triggerable_agents, validate_flow

ENGINE_SENDER = "engine"

RUNNING = "running"
AWAITING_INPUT = "awaiting_input"
AWAITING_AGENT = "awaiting_agent"
COMPLETED = "completed"
ENDED_BY_INSTRUCTOR = "ended_by_instructor"

GRADE_CORRECT = "CORRECT"
GRADE_INCORRECT = "INCORRECT"

ADVANCE_PLACEHOLDER = "[no response; advanced by instructor]"

# Material chunks fetched per invocation when a content store is attached.
RETRIEVAL_K = 3

_BRANCH_TOKEN_RE = re.compile(r"[a-z0-9']+")


def now_rfc3339() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class Tally:
    correct: int = 0
    total_graded: int = 0


@dataclass
class LoopFrame:
    first_idx: int
    last_idx: int
    bottom_idx: int
    count: int
    iteration: int = 0  # 0-based pass currently executing
    correct_streak: int = 0
    consecutive_correct: int | None = None


@dataclass
class PendingInvocation:
    agent_id: str
    prompt_bundle: PromptBundle
    triggering_step_id: str
    grade: bool
    dispatched: bool = False
    nonce: int = 0


@dataclass
class AgentReply:
    agent_id: str
    content: str
    triggering_step_id: str
    delivered: bool = False


@dataclass
class SessionState:
    session_id: str
    flow: FlowDefinition
    sources: dict[str, str]
    cursor: int = 0
    status: str = RUNNING
    loop_frames: list[LoopFrame] = field(default_factory=list)
    bindings: dict[str, str] = field(default_factory=dict)
    pending_invocation: PendingInvocation | None = None
    last_reply: AgentReply | None = None
    tallies: dict[str, Tally] = field(default_factory=dict)
    active_respondent: str | None = None
    personas: dict[str, str] = field(default_factory=dict)
    agent_materials: dict[str, list[str]] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list)

    def frame(self) -> LoopFrame | None:
        return self.loop_frames[-1] if self.loop_frames else None


@dataclass
class AwaitInput:
    slot_id: str
    step_id: str
    max_words: int | None = None


@dataclass
class InvokeAgent:
    agent_id: str
    prompt_bundle: PromptBundle
    step_id: str
    nonce: int = 0


@dataclass
class Deliver:
    event: Event


@dataclass
class Complete:
    status: str


EngineAction = Union[AwaitInput, InvokeAgent, Deliver, Complete]


# --- helpers ----------------------------------------------------------------


def interpolate(text: str, bindings: dict[str, str]) -> str:
    """Replace every {{...}} from bindings; the result never contains '{{'."""

    def sub(match: re.Match) -> str:
        name = match.group(1).strip()
        if name not in bindings:
            raise UnboundRuntimePlaceholder(name)
        return bindings[name]

    out = PLACEHOLDER_RE.sub(sub, text)
    if "{{" in out:
        raise UnboundRuntimePlaceholder(out[out.index("{{") : out.index("{{") + 24])
    return out


def evaluate_branch(step: BranchStep, latest: str | None) -> str | None:
    """Return the goto target on a token match, None to continue.

    Matching is whole-token containment over the normalized response:
    lowercased, punctuation stripped, split on whitespace.
    """
    if latest is None:
        raise NoResponseInScope("branch evaluated before any agent response")
    tokens = set(_BRANCH_TOKEN_RE.findall(latest.lower()))
    return step.goto if step.contains_token.lower() in tokens else None


def _fork(state: SessionState) -> SessionState:
    # The flow itself is never mutated, so it is shared between generations;
    # events are immutable once emitted, so the list is copied shallowly.
    return SessionState(
        session_id=state.session_id,
        flow=state.flow,
        sources=dict(state.sources),
        cursor=state.cursor,
        status=state.status,
        loop_frames=[copy.copy(f) for f in state.loop_frames],
        bindings=dict(state.bindings),
        pending_invocation=copy.deepcopy(state.pending_invocation),
        last_reply=copy.copy(state.last_reply),
        tallies={k: Tally(v.correct, v.total_graded) for k, v in state.tallies.items()},
        active_respondent=state.active_respondent,
        personas=dict(state.personas),
        agent_materials={k: list(v) for k, v in state.agent_materials.items()},
        events=list(state.events),
    )


def _dedup(items: list[str]) -> list[str]:
    return list(dict.fromkeys(items))


def _iteration_at(state: SessionState, step_idx: int) -> int:
    frame = state.frame()
    if frame is not None and frame.first_idx <= step_idx <= frame.last_idx:
        return frame.iteration
    return 0


def _emit(
    state: SessionState,
    *,
    step_id: str,
    kind: str,
    sender: str,
    recipients: list[str],
    content: str,
    visibility: list[str] | None = None,
    step_idx: int | None = None,
) -> Event:
    instructor = state.flow.instructor_slot()
    recipients = _dedup(list(recipients) + [instructor])
    if visibility is None:
        visibility = list(recipients)
    else:
        visibility = _dedup(list(visibility) + [instructor])
    if sender != ENGINE_SENDER and sender not in visibility:
        visibility = _dedup(visibility + [sender])
    event = Event(
        seq=len(state.events) + 1,
        step_id=step_id,
        iteration=_iteration_at(state, state.cursor if step_idx is None else step_idx),
        kind=kind,
        sender=sender,
        recipients=recipients,
        visibility=visibility,
        content=content,
        ts=now_rfc3339(),
    )
    state.events.append(event)
    return event


def _system_event(state: SessionState, step_id: str, payload: dict, *,
                  visibility: list[str] | None = None, step_idx: int | None = None) -> Event:
    instructor = state.flow.instructor_slot()
    return _emit(
        state,
        step_id=step_id,
        kind="system",
        sender=ENGINE_SENDER,
        recipients=[instructor],
        content=json.dumps(payload, ensure_ascii=False),
        visibility=visibility,
        step_idx=step_idx,
    )


def system_payload(event: Event) -> dict | None:
    """Decode a system event's JSON payload; None for other kinds."""
    if event.kind != "system":
        return None
    try:
        return json.loads(event.content)
    except ValueError:
        return None


def _resolve_visibility(state: SessionState, visibility: list[str] | str) -> list[str]:
    if visibility == VISIBILITY_ALL:
        return state.flow.slot_ids()
    return list(visibility)


def _agent_recipients(state: SessionState, agent_id: str) -> list[str]:
    return [agent_id] if state.flow.slot(agent_id) is not None else []


def _assemble(
    state: SessionState,
    agent_id: str,
    instruction: str,
    content_store,
    *,
    origin: str = ORIGIN_INSTRUCTOR,
    origin_slot: str | None = None,
    history: list[Event] | None = None,
) -> PromptBundle:
    config = state.flow.agent(agent_id)
    if config is None:
        raise FlowExecutionError(f"agent {agent_id!r} is not configured")
    retrieved: list[str] = []
    materials = state.agent_materials.get(agent_id) or []
    if content_store is not None and materials:
        results = content_store.retrieve(instruction, k=RETRIEVAL_K, material_ids=materials)
        retrieved = content_store.chunk_texts(results)
    return assemble_prompt(
        config,
        history=state.events if history is None else history,
        instruction=instruction,
        retrieved=retrieved,
        persona=state.personas.get(agent_id, config.persona_prompt),
        instructor_slot=state.flow.instructor_slot(),
        instruction_origin=origin,
        instruction_slot=origin_slot,
    )


def _queue_invocation(
    state: SessionState,
    agent_id: str,
    instruction: str,
    trigger_step_id: str,
    grade: bool,
    content_store,
    *,
    origin: str = ORIGIN_INSTRUCTOR,
    origin_slot: str | None = None,
    history: list[Event] | None = None,
) -> None:
    bundle = _assemble(
        state,
        agent_id,
        instruction,
        content_store,
        origin=origin,
        origin_slot=origin_slot,
        history=history,
    )
    state.pending_invocation = PendingInvocation(
        agent_id=agent_id,
        prompt_bundle=bundle,
        triggering_step_id=trigger_step_id,
        grade=grade,
        dispatched=False,
        nonce=len(state.events),
    )


def _push_frame_if_entering(state: SessionState) -> None:
    if state.frame() is not None:
        return
    for idx, step in enumerate(state.flow.steps):
        if isinstance(step, RepetitionStep):
            first_idx = state.flow.step_index(step.first)
            last_idx = state.flow.step_index(step.last)
            if first_idx == state.cursor and first_idx is not None and last_idx is not None:
                count = step.count if isinstance(step.count, int) else 0
                state.loop_frames.append(
                    LoopFrame(
                        first_idx=first_idx,
                        last_idx=last_idx,
                        bottom_idx=idx,
                        count=count,
                        consecutive_correct=step.exit.consecutive_correct if step.exit else None,
                    )
                )
                state.bindings["loop_index"] = "1"
                return


def _pop_frame(state: SessionState) -> None:
    state.loop_frames.pop()
    state.bindings.pop("loop_index", None)


def advance_loop(state: SessionState) -> SessionState:
    """Process the repetition step at the cursor: loop back or fall through."""
    step = state.flow.steps[state.cursor]
    assert isinstance(step, RepetitionStep)
    frame = state.frame()
    if frame is None or frame.bottom_idx != state.cursor:
        # Entered mid-range via a branch: the pass that just finished counts.
        first_idx = state.flow.step_index(step.first)
        last_idx = state.flow.step_index(step.last)
        frame = LoopFrame(
            first_idx=first_idx,
            last_idx=last_idx,
            bottom_idx=state.cursor,
            count=step.count if isinstance(step.count, int) else 0,
            consecutive_correct=step.exit.consecutive_correct if step.exit else None,
        )
        state.loop_frames = [frame]
    passes_done = frame.iteration + 1
    mastery_met = (
        frame.consecutive_correct is not None
        and frame.correct_streak >= frame.consecutive_correct
    )
    if passes_done >= frame.count or mastery_met:
        _pop_frame(state)
        state.cursor += 1
    else:
        frame.iteration += 1
        state.bindings["loop_index"] = str(frame.iteration + 1)
        state.cursor = frame.first_idx
    return state


def _latest_input_to_agent(state: SessionState, agent_id: str) -> Event | None:
    for event in reversed(state.events):
        if event.kind == "user_input" and agent_id in event.recipients:
            return event
    return None


def _role_description(state: SessionState, slot_id: str) -> str:
    slot = state.flow.slot(slot_id)
    if slot is not None and slot.team:
        return f"{slot_id} (team {slot.team})"
    return slot_id


# --- session lifecycle -------------------------------------------------------


def start_session(
    flow: FlowDefinition,
    roster_overrides: dict[str, str] | None = None,
    *,
    session_id: str = "session",
) -> SessionState:
    """Validate, resolve source toggles, and emit the session-start record."""
    report = validate_flow(flow)
    if not report.ok:
        codes = ", ".join(sorted({d.code for d in report.errors()}))
        raise InvalidFlow(f"flow does not validate: {codes}")

    # A toggle is legal only when every speaking turn of the slot is an
    # alternative; a slot with plain input steps cannot be replaced by an AI.
    alternative_slots = {s.slot for s in flow.steps if isinstance(s, AlternativeStep)}
    plain_speakers = {s.from_slot for s in flow.steps if isinstance(s, UserInputStep)}
    overrides = roster_overrides or {}
    for slot_id, source in overrides.items():
        slot = flow.slot(slot_id)
        if slot is None:
            raise IllegalToggle(slot_id, "not in the roster")
        if slot.role != "learner" or slot_id not in alternative_slots:
            raise IllegalToggle(slot_id, "only learner slots used in alternative steps can be toggled")
        if slot_id in plain_speakers:
            raise IllegalToggle(slot_id, "the slot also speaks through plain input steps")
        if source not in (SOURCE_HUMAN, SOURCE_AI):
            raise IllegalToggle(slot_id, f"unknown source {source!r}")

    sources = {s.slot_id: s.source for s in flow.roster}
    sources.update(overrides)

    state = SessionState(
        session_id=session_id,
        flow=flow,
        sources=sources,
        personas={a.agent_id: a.persona_prompt for a in flow.agents},
        agent_materials={a.agent_id: list(a.material_refs) for a in flow.agents},
    )
    # The flow document is embedded base64-encoded: it makes the log
    # self-contained for replay without putting raw placeholder syntax
    # into event content.
    flow_blob = base64.b64encode(
        json.dumps(flow_to_doc(flow), ensure_ascii=False).encode("utf-8")
    ).decode("ascii")
    _system_event(
        state,
        "",
        {"type": "session_started", "sources": sources, "flow_b64": flow_blob},
    )
    _push_frame_if_entering(state)
    return state


def decode_flow_blob(payload: dict) -> dict:
    """Recover the flow document from a session_started payload."""
    return json.loads(base64.b64decode(payload["flow_b64"]).decode("utf-8"))


def next_action(state: SessionState, *, content_store=None) -> tuple[SessionState, EngineAction]:
    """Advance through silent control steps and return the next visible need.

    Returns the successor state alongside the action: transitions are pure,
    so auto-advancing steps hand back a state whose cursor already moved.
    Raises InternalBlocked while an input or agent response is outstanding.
    """
    if state.status in (COMPLETED, ENDED_BY_INSTRUCTOR):
        return state, Complete(state.status)
    if state.status == AWAITING_INPUT:
        raise InternalBlocked("awaiting a human input; call submit_input first")
    if state.status == AWAITING_AGENT:
        raise InternalBlocked("awaiting an agent response; call apply_agent_response first")

    s = _fork(state)

    if s.pending_invocation is not None and not s.pending_invocation.dispatched:
        s.pending_invocation.dispatched = True
        s.status = AWAITING_AGENT
        p = s.pending_invocation
        return s, InvokeAgent(
            agent_id=p.agent_id,
            prompt_bundle=p.prompt_bundle,
            step_id=p.triggering_step_id,
            nonce=p.nonce,
        )

    while True:
        if s.cursor >= len(s.flow.steps):
            s.status = COMPLETED
            return s, Complete(COMPLETED)
        _push_frame_if_entering(s)
        step = s.flow.steps[s.cursor]

        if isinstance(step, AgentPromptStep):
            text = interpolate(step.text, s.bindings)
            s.personas[step.agent] = text
            event = _emit(
                s,
                step_id=step.id,
                kind="instruction",
                sender=s.flow.instructor_slot(),
                recipients=_agent_recipients(s, step.agent),
                content=text,
            )
            s.cursor += 1
            return s, Deliver(event)

        if isinstance(step, ReferenceMaterialsStep):
            merged = _dedup(s.agent_materials.get(step.agent, []) + list(step.materials))
            s.agent_materials[step.agent] = merged
            content = f"Reference materials for {step.agent}: " + ", ".join(step.materials)
            event = _emit(
                s,
                step_id=step.id,
                kind="instruction",
                sender=s.flow.instructor_slot(),
                recipients=list(step.audience),
                content=content,
            )
            s.cursor += 1
            return s, Deliver(event)

        if isinstance(step, InstructionLearnerStep):
            text = interpolate(step.text, s.bindings)
            event = _emit(
                s,
                step_id=step.id,
                kind="instruction",
                sender=s.flow.instructor_slot(),
                recipients=list(step.to),
                content=text,
            )
            s.cursor += 1
            return s, Deliver(event)

        if isinstance(step, InstructionAiStep):
            text = interpolate(step.text, s.bindings)
            # Queue before emitting so the bundle's history does not repeat
            # the instruction, which is already the bundle's final message.
            _queue_invocation(s, step.agent, text, step.id, step.grade, content_store)
            event = _emit(
                s,
                step_id=step.id,
                kind="instruction",
                sender=s.flow.instructor_slot(),
                recipients=_agent_recipients(s, step.agent),
                content=text,
            )
            s.cursor += 1
            return s, Deliver(event)

        if isinstance(step, UserInputStep):
            s.status = AWAITING_INPUT
            return s, AwaitInput(slot_id=step.from_slot, step_id=step.id, max_words=step.max_words)

        if isinstance(step, AiResponseStep):
            reply = s.last_reply
            if reply is not None and not reply.delivered and reply.agent_id == step.agent:
                event = _emit(
                    s,
                    step_id=step.id,
                    kind="agent_response",
                    sender=step.agent,
                    recipients=_resolve_visibility(s, step.visibility),
                    visibility=_resolve_visibility(s, step.visibility),
                    content=reply.content,
                )
                s.last_reply.delivered = True
                s.cursor += 1
                return s, Deliver(event)
            source_event = _latest_input_to_agent(s, step.agent)
            if source_event is None:
                raise UnpairedResponse(
                    f"step {step.id!r}: nothing to deliver for agent {step.agent!r}"
                )
            sender_slot = s.flow.slot(source_event.sender)
            origin = (
                ORIGIN_INSTRUCTOR
                if sender_slot is not None and sender_slot.role == ROLE_INSTRUCTOR
                else ORIGIN_LEARNER
            )
            _queue_invocation(
                s,
                step.agent,
                source_event.content,
                step.id,
                False,
                content_store,
                origin=origin,
                origin_slot=source_event.sender,
                # The input is the bundle's final message; keep it out of
                # the history to avoid sending it twice.
                history=[e for e in s.events if e.seq != source_event.seq],
            )
            s.pending_invocation.dispatched = True
            s.status = AWAITING_AGENT
            p = s.pending_invocation
            return s, InvokeAgent(
                agent_id=p.agent_id,
                prompt_bundle=p.prompt_bundle,
                step_id=p.triggering_step_id,
                nonce=p.nonce,
            )

        if isinstance(step, RepetitionStep):
            advance_loop(s)
            continue

        if isinstance(step, BranchStep):
            latest = s.last_reply.content if s.last_reply is not None else None
            target = evaluate_branch(step, latest)
            if target is None:
                s.cursor += 1
            else:
                target_idx = s.flow.step_index(target)
                if target_idx is None:
                    raise UnknownTarget(f"branch target {target!r} does not exist")
                frame = s.frame()
                if frame is not None and not (frame.first_idx <= target_idx <= frame.last_idx):
                    _pop_frame(s)
                s.cursor = target_idx
            continue

        if isinstance(step, AlternativeStep):
            if s.sources.get(step.slot) == SOURCE_AI:
                reply = s.last_reply
                if reply is not None and not reply.delivered and reply.triggering_step_id == step.id:
                    resp = step.ai_response
                    event = _emit(
                        s,
                        step_id=resp.id,
                        kind="agent_response",
                        sender=resp.agent,
                        recipients=_resolve_visibility(s, resp.visibility),
                        visibility=_resolve_visibility(s, resp.visibility),
                        content=reply.content,
                    )
                    s.last_reply.delivered = True
                    s.cursor += 1
                    return s, Deliver(event)
                bindings = dict(s.bindings)
                bindings["role"] = _role_description(s, step.slot)
                text = interpolate(step.ai_instruction.text, bindings)
                _queue_invocation(
                    s, step.ai_instruction.agent, text, step.id, step.ai_instruction.grade, content_store
                )
                event = _emit(
                    s,
                    step_id=step.ai_instruction.id,
                    kind="instruction",
                    sender=s.flow.instructor_slot(),
                    recipients=_agent_recipients(s, step.ai_instruction.agent),
                    content=text,
                )
                return s, Deliver(event)
            variant = step.human_variant
            s.status = AWAITING_INPUT
            return s, AwaitInput(
                slot_id=step.slot, step_id=variant.id, max_words=variant.max_words
            )

        raise FlowExecutionError(f"unhandled step kind at index {s.cursor}")


def _supersede_reply(state: SessionState, to: list[str]) -> None:
    """A fresh input addressed to an agent starts a new exchange.

    Any undelivered reply from that agent answered an older stimulus, so it
    must not be presented later; the content stays readable for branches.
    """
    reply = state.last_reply
    if (
        reply is not None
        and not reply.delivered
        and reply.agent_id in triggerable_agents(state.flow, to)
    ):
        reply.delivered = True


def _awaited_variant(state: SessionState) -> UserInputStep:
    step = state.flow.steps[state.cursor]
    if isinstance(step, AlternativeStep):
        return step.human_variant
    assert isinstance(step, UserInputStep)
    return step


def submit_input(state: SessionState, slot_id: str, content: str) -> tuple[SessionState, list[Event]]:
    """Record an awaited human turn; rejected inputs leave the state untouched."""
    if state.status != AWAITING_INPUT:
        raise NotYourTurn(slot_id, "no input is awaited right now")
    variant = _awaited_variant(state)
    awaited = state.flow.steps[state.cursor]
    awaited_slot = awaited.slot if isinstance(awaited, AlternativeStep) else variant.from_slot
    if slot_id != awaited_slot:
        raise NotYourTurn(slot_id)
    if variant.max_words is not None:
        words = len(content.split())
        if words > variant.max_words:
            raise WordLimitExceeded(variant.max_words, words)

    s = _fork(state)
    event = _emit(
        s,
        step_id=variant.id,
        kind="user_input",
        sender=slot_id,
        recipients=list(variant.to),
        content=content,
    )
    s.bindings[f"input:{variant.id}"] = content
    s.active_respondent = awaited_slot
    _supersede_reply(s, variant.to)
    s.status = RUNNING
    s.cursor += 1
    return s, [event]


def _first_token(content: str) -> str:
    parts = content.split()
    if not parts:
        return ""
    return parts[0].strip(".,:;!?—-*\"'()[]").upper()


def apply_agent_response(
    state: SessionState,
    agent_id: str,
    content: str,
    *,
    overridden: bool = False,
) -> tuple[SessionState, list[Event]]:
    """Resolve the outstanding invocation with the provider's (or instructor's) text.

    Grading-tagged invocations parse the leading token as CORRECT/INCORRECT
    to update tallies, the mastery streak, and the {{score}} binding;
    anything else is recorded as an ungraded-response warning.
    """
    if state.status != AWAITING_AGENT or state.pending_invocation is None:
        raise NoPendingInvocation("no agent invocation is outstanding")
    pending = state.pending_invocation
    if pending.agent_id != agent_id:
        raise AgentMismatch(f"awaiting {pending.agent_id!r}, got {agent_id!r}")

    s = _fork(state)
    trigger_idx = s.flow.step_index(pending.triggering_step_id)
    events: list[Event] = []
    payload = {"type": "agent_reply", "agent": agent_id, "content": content}
    if overridden:
        payload["overridden"] = True
    events.append(
        _system_event(s, pending.triggering_step_id, payload, step_idx=trigger_idx)
    )

    if pending.grade:
        token = _first_token(content)
        if token in (GRADE_CORRECT, GRADE_INCORRECT):
            correct = token == GRADE_CORRECT
            frame = s.frame()
            if frame is not None:
                frame.correct_streak = frame.correct_streak + 1 if correct else 0
            if s.active_respondent is not None:
                tally = s.tallies.setdefault(s.active_respondent, Tally())
                tally.total_graded += 1
                if correct:
                    tally.correct += 1
        else:
            events.append(
                _system_event(
                    s,
                    pending.triggering_step_id,
                    {"type": "ungraded_response", "agent": agent_id},
                    step_idx=trigger_idx,
                )
            )
        # The score binding refreshes on every graded invocation, parseable
        # or not, so later {{score}} uses never dangle.
        if s.active_respondent is not None:
            tally = s.tallies.setdefault(s.active_respondent, Tally())
            s.bindings["score"] = f"{tally.correct} out of {tally.total_graded}"

    s.last_reply = AgentReply(
        agent_id=agent_id, content=content, triggering_step_id=pending.triggering_step_id
    )
    s.pending_invocation = None
    s.status = RUNNING
    return s, events


# --- instructor controls ------------------------------------------------------


def control_advance(state: SessionState) -> tuple[SessionState, list[Event]]:
    """Resolve a stuck input with an instructor-supplied placeholder event."""
    if state.status != AWAITING_INPUT:
        raise ControlNotApplicable("advance only applies while awaiting an input")
    variant = _awaited_variant(state)
    awaited = state.flow.steps[state.cursor]
    awaited_slot = awaited.slot if isinstance(awaited, AlternativeStep) else variant.from_slot

    s = _fork(state)
    event = _emit(
        s,
        step_id=variant.id,
        kind="user_input",
        sender=s.flow.instructor_slot(),
        recipients=list(variant.to),
        content=ADVANCE_PLACEHOLDER,
    )
    s.bindings[f"input:{variant.id}"] = ADVANCE_PLACEHOLDER
    s.active_respondent = awaited_slot
    _supersede_reply(s, variant.to)
    s.status = RUNNING
    s.cursor += 1
    return s, [event]


def control_skip(state: SessionState) -> tuple[SessionState, list[Event]]:
    """Skip the awaited input step without recording a turn or binding."""
    if state.status != AWAITING_INPUT:
        raise ControlNotApplicable("skip only applies while awaiting an input")
    s = _fork(state)
    step_id = s.flow.steps[s.cursor].id
    event = _system_event(s, step_id, {"type": "step_skipped", "step": step_id})
    s.status = RUNNING
    s.cursor += 1
    return s, [event]


def control_override(state: SessionState, text: str) -> tuple[SessionState, list[Event]]:
    """Substitute the pending agent response with instructor-authored text."""
    if state.status != AWAITING_AGENT or state.pending_invocation is None:
        raise ControlNotApplicable("override only applies while awaiting an agent")
    return apply_agent_response(state, state.pending_invocation.agent_id, text, overridden=True)


def control_end(state: SessionState) -> tuple[SessionState, list[Event]]:
    """Stop the session; no further stimuli are accepted."""
    if state.status in (COMPLETED, ENDED_BY_INSTRUCTOR):
        raise ControlNotApplicable("session is already over")
    s = _fork(state)
    event = _system_event(
        s,
        "",
        {"type": "session_ended", "by": "instructor"},
        visibility=s.flow.slot_ids(),
    )
    s.pending_invocation = None
    s.status = ENDED_BY_INSTRUCTOR
    return s, [event]


# --- snapshots ---------------------------------------------------------------


def state_snapshot(state: SessionState) -> dict:
    """A comparable view of the state with wall-clock timestamps removed."""

    def event_key(e: Event) -> tuple:
        return (e.seq, e.step_id, e.iteration, e.kind, e.sender,
                tuple(e.recipients), tuple(e.visibility), e.content)

    pending = None
    if state.pending_invocation is not None:
        p = state.pending_invocation
        pending = {
            "agent_id": p.agent_id,
            "triggering_step_id": p.triggering_step_id,
            "grade": p.grade,
            "dispatched": p.dispatched,
            "nonce": p.nonce,
            "system_text": p.prompt_bundle.system_text,
            "messages": [(m.origin, m.text, m.slot) for m in p.prompt_bundle.messages],
        }
    return {
        "session_id": state.session_id,
        "flow_id": state.flow.id,
        "sources": dict(state.sources),
        "cursor": state.cursor,
        "status": state.status,
        "loop_frames": [
            (f.first_idx, f.last_idx, f.bottom_idx, f.count, f.iteration,
             f.correct_streak, f.consecutive_correct)
            for f in state.loop_frames
        ],
        "bindings": dict(state.bindings),
        "pending_invocation": pending,
        "last_reply": None
        if state.last_reply is None
        else (
            state.last_reply.agent_id,
            state.last_reply.content,
            state.last_reply.triggering_step_id,
            state.last_reply.delivered,
        ),
        "tallies": {k: (v.correct, v.total_graded) for k, v in state.tallies.items()},
        "active_respondent": state.active_respondent,
        "personas": dict(state.personas),
        "agent_materials": {k: list(v) for k, v in state.agent_materials.items()},
        "events": [event_key(e) for e in state.events],
    }
