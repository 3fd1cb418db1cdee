"""Static validation of parsed flows.

Two layers:

1. Structural checks: reference integrity (agents, participants, branch
   targets, range endpoints), loop-range geometry, alternative-slot rules,
   mastery prerequisites, word limits, and uninstantiated templates.

2. A symbolic walk of every feasible execution order. Branches fork the
   walk, loops are explored with capped pass counts, and alternatives fork
   into their human and AI resolutions. The walk tracks which runtime
   bindings definitely exist, whether an undelivered agent reply is
   available, and which agents have a persona, so it can flag:

   - ai_response steps that can be reached with nothing to deliver
     (UnpairedResponse),
   - placeholder uses that some execution order leaves unbound
     (UnresolvablePlaceholder),
   - branches that can run before any agent has ever replied
     (BranchWithoutResponse),
   - agents invoked before any persona is set (MissingPersona, warning).

A flow whose report says ok=true executes to completion (or instructor end)
without those runtime faults for any input sequence: the walk's successor
relation mirrors the engine's transition rules exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    ROLE_AI_AGENT,
    ROLE_INSTRUCTOR,
    ROLE_LEARNER,
    VISIBILITY_ALL,
    AgentPromptStep,
    AiResponseStep,
    AlternativeStep,
    BranchStep,
    Diagnostic,
    FlowDefinition,
    InstructionAiStep,
    InstructionLearnerStep,
    ReferenceMaterialsStep,
    RepetitionStep,
    UserInputStep,
    ValidationReport,
)
from .parsing import PLACEHOLDER_RE

# Bound on distinct (position, fact) states explored by the symbolic walk.
_WALK_BUDGET = 50_000
# Loop passes beyond this count are merged into one "many" state.
_PASS_CAP = 3


@dataclass
class _LoopInfo:
    step: RepetitionStep
    first_idx: int
    last_idx: int
    bottom_idx: int


class _Diags:
    def __init__(self) -> None:
        self.items: list[Diagnostic] = []
        self._seen: set[tuple] = set()

    def add(self, severity: str, code: str, message: str, step_id: str | None = None) -> None:
        key = (severity, code, step_id)
        if key in self._seen:
            return
        self._seen.add(key)
        self.items.append(Diagnostic(severity=severity, code=code, message=message, step_id=step_id))

    def error(self, code: str, message: str, step_id: str | None = None) -> None:
        self.add("error", code, message, step_id)

    def warning(self, code: str, message: str, step_id: str | None = None) -> None:
        self.add("warning", code, message, step_id)


def triggerable_agents(flow: FlowDefinition, to: list[str]) -> list[str]:
    """Agents a user_input addressed to ``to`` could satisfy on demand.

    A recipient triggers on-demand generation when it is an ai-agent roster
    slot whose id matches a configured agent. The engine uses the same rule.
    """
    out = []
    for slot_id in to:
        slot = flow.slot(slot_id)
        if slot is not None and slot.role == ROLE_AI_AGENT and flow.agent(slot_id) is not None:
            out.append(slot_id)
    return out


def _check_roster(flow: FlowDefinition, diags: _Diags) -> None:
    instructors = [s for s in flow.roster if s.role == ROLE_INSTRUCTOR]
    if len(instructors) != 1:
        diags.error(
            "InstructorSlotRequired",
            f"flow must have exactly one instructor slot, found {len(instructors)}",
        )
    for slot in flow.roster:
        if slot.role == ROLE_AI_AGENT and flow.agent(slot.slot_id) is None:
            diags.warning(
                "AgentSlotWithoutConfig",
                f"ai-agent slot {slot.slot_id!r} has no matching agent config",
            )


def _check_participant(flow: FlowDefinition, slot_id: str, step_id: str, diags: _Diags) -> None:
    if flow.slot(slot_id) is None:
        diags.error("UnknownParticipant", f"slot {slot_id!r} is not in the roster", step_id)


def _check_agent(flow: FlowDefinition, agent_id: str, step_id: str, diags: _Diags) -> None:
    if flow.agent(agent_id) is None:
        diags.error("UnknownAgent", f"agent {agent_id!r} is not configured", step_id)


def _check_refs(flow: FlowDefinition, diags: _Diags) -> None:
    for step in flow.steps:
        if isinstance(step, AgentPromptStep):
            _check_agent(flow, step.agent, step.id, diags)
        elif isinstance(step, ReferenceMaterialsStep):
            _check_agent(flow, step.agent, step.id, diags)
            for slot_id in step.audience:
                _check_participant(flow, slot_id, step.id, diags)
        elif isinstance(step, InstructionLearnerStep):
            for slot_id in step.to:
                _check_participant(flow, slot_id, step.id, diags)
        elif isinstance(step, InstructionAiStep):
            _check_agent(flow, step.agent, step.id, diags)
        elif isinstance(step, UserInputStep):
            _check_user_input(flow, step, diags)
        elif isinstance(step, AiResponseStep):
            _check_ai_response(flow, step, diags)
        elif isinstance(step, AlternativeStep):
            slot = flow.slot(step.slot)
            if slot is None:
                diags.error("UnknownParticipant", f"slot {step.slot!r} is not in the roster", step.id)
            elif slot.role != ROLE_LEARNER:
                diags.error(
                    "IllegalAlternativeSlot",
                    f"alternative slot {step.slot!r} must be a learner slot to carry a source toggle",
                    step.id,
                )
            if step.human_variant.from_slot != step.slot:
                diags.error(
                    "AlternativeVariantMismatch",
                    f"human variant sender {step.human_variant.from_slot!r} must equal the alternative slot {step.slot!r}",
                    step.id,
                )
            _check_user_input(flow, step.human_variant, diags)
            _check_agent(flow, step.ai_instruction.agent, step.ai_instruction.id, diags)
            _check_ai_response(flow, step.ai_response, diags)


def _check_user_input(flow: FlowDefinition, step: UserInputStep, diags: _Diags) -> None:
    _check_participant(flow, step.from_slot, step.id, diags)
    for slot_id in step.to:
        _check_participant(flow, slot_id, step.id, diags)
    if step.max_words is not None:
        if isinstance(step.max_words, str):
            diags.error(
                "UnresolvedTemplatePlaceholder",
                f"max_words is an uninstantiated placeholder {step.max_words!r}",
                step.id,
            )
        elif step.max_words < 1:
            diags.error("InvalidWordLimit", "max_words must be a positive integer", step.id)


def _check_ai_response(flow: FlowDefinition, step: AiResponseStep, diags: _Diags) -> None:
    _check_agent(flow, step.agent, step.id, diags)
    if step.visibility != VISIBILITY_ALL:
        for slot_id in step.visibility:
            _check_participant(flow, slot_id, step.id, diags)


def _collect_loops(flow: FlowDefinition, diags: _Diags) -> list[_LoopInfo]:
    loops: list[_LoopInfo] = []
    for idx, step in enumerate(flow.steps):
        if not isinstance(step, RepetitionStep):
            continue
        if isinstance(step.count, str):
            diags.error(
                "UnresolvedTemplatePlaceholder",
                f"loop count is an uninstantiated placeholder {step.count!r}",
                step.id,
            )
            continue
        if step.count < 1:
            diags.error("InvalidLoopCount", "loop count must be a positive integer", step.id)
            continue
        first_idx = flow.step_index(step.first)
        last_idx = flow.step_index(step.last)
        if first_idx is None or last_idx is None:
            missing = step.first if first_idx is None else step.last
            diags.error("UnknownRangeEndpoint", f"range endpoint {missing!r} is not a step", step.id)
            continue
        if first_idx > last_idx:
            diags.error("ReversedRange", f"range [{step.first}, {step.last}] runs backward", step.id)
            continue
        if first_idx <= idx <= last_idx:
            diags.error("RangeContainsLoopStep", "repetition range may not contain the repetition step", step.id)
            continue
        if idx != last_idx + 1:
            diags.error(
                "LoopStepNotAfterRange",
                "the repetition step must immediately follow its range",
                step.id,
            )
            continue
        loops.append(_LoopInfo(step=step, first_idx=first_idx, last_idx=last_idx, bottom_idx=idx))

    for i, a in enumerate(loops):
        for b in loops[i + 1:]:
            if a.first_idx <= b.bottom_idx and b.first_idx <= a.bottom_idx:
                diags.error(
                    "OverlappingRanges",
                    f"ranges of {a.step.id!r} and {b.step.id!r} overlap (nesting is not supported)",
                    b.step.id,
                )
    return loops


def _enclosing_loop(loops: list[_LoopInfo], idx: int) -> _LoopInfo | None:
    for info in loops:
        if info.first_idx <= idx <= info.last_idx:
            return info
    return None


def _check_branches(flow: FlowDefinition, loops: list[_LoopInfo], diags: _Diags) -> None:
    for idx, step in enumerate(flow.steps):
        if not isinstance(step, BranchStep):
            continue
        target_idx = flow.step_index(step.goto)
        if target_idx is None:
            diags.error("UnknownTarget", f"branch target {step.goto!r} is not a step", step.id)
            continue
        if isinstance(flow.steps[target_idx], RepetitionStep):
            diags.error("BranchIntoLoopHeader", "a repetition step cannot be a branch target", step.id)
            continue
        if step.goto == step.id:
            diags.error("BranchSelfTarget", "a branch cannot target itself", step.id)
            continue
        enclosing = _enclosing_loop(loops, idx)
        if enclosing is not None and target_idx < enclosing.last_idx:
            diags.error(
                "BranchBeforeRangeEnd",
                f"branch inside range [{enclosing.step.first}, {enclosing.step.last}] "
                f"must target a step at or after the range end",
                step.id,
            )


def _check_mastery(flow: FlowDefinition, loops: list[_LoopInfo], diags: _Diags) -> None:
    for info in loops:
        if info.step.exit is None:
            continue
        graded = False
        for step in flow.steps[info.first_idx : info.last_idx + 1]:
            if isinstance(step, InstructionAiStep) and step.grade:
                graded = True
            if isinstance(step, AlternativeStep) and step.ai_instruction.grade:
                graded = True
        if not graded:
            diags.error(
                "MasteryWithoutGrading",
                "mastery exit rule requires a grade=true instruction inside the range",
                info.step.id,
            )


# --- symbolic execution -----------------------------------------------------


@dataclass(frozen=True)
class _Facts:
    """Path facts at a program position; hashable for memoization."""

    undelivered: str | None  # agent with a completed, undelivered reply
    has_response: bool  # any agent reply ever produced
    bound: frozenset[str]  # definitely-bound "input:<id>" names, plus "score"
    has_respondent: bool  # some user input has been recorded
    input_seen: frozenset[str]  # agents a past user input was addressed to
    personas: frozenset[str]  # agents with a persona set
    frame: tuple[int, int] | None  # (bottom index, passes so far, capped)


def _placeholder_names(text: str) -> list[str]:
    return [m.group(1).strip() for m in PLACEHOLDER_RE.finditer(text)]


def _check_text(
    flow: FlowDefinition,
    text: str,
    facts: _Facts,
    step_id: str,
    diags: _Diags,
    allow_role: bool = False,
) -> None:
    declared = flow.templates or {}
    for name in _placeholder_names(text):
        if name in declared:
            diags.error(
                "UninstantiatedTemplate",
                f"template placeholder {{{{{name}}}}} must be bound via instantiation before the flow can run",
                step_id,
            )
        elif name.startswith("input:"):
            if name not in facts.bound:
                diags.error(
                    "UnresolvablePlaceholder",
                    f"{{{{{name}}}}} is not bound in every execution order reaching this step",
                    step_id,
                )
        elif name == "score":
            if "score" not in facts.bound:
                diags.error(
                    "UnresolvablePlaceholder",
                    "{{score}} is only bound after a graded agent reply follows a user input",
                    step_id,
                )
        elif name == "loop_index":
            if facts.frame is None:
                diags.error(
                    "UnresolvablePlaceholder",
                    "{{loop_index}} is only bound inside a repetition range",
                    step_id,
                )
        elif name == "role":
            if not allow_role:
                diags.error(
                    "UnresolvablePlaceholder",
                    "{{role}} is only bound inside an alternative step's AI instruction",
                    step_id,
                )
        else:
            diags.error("UnresolvablePlaceholder", f"unknown placeholder {{{{{name}}}}}", step_id)


def _check_persona(flow: FlowDefinition, agent_id: str, facts: _Facts, step_id: str, diags: _Diags) -> None:
    if agent_id not in facts.personas and flow.agent(agent_id) is not None:
        diags.warning(
            "MissingPersona",
            f"agent {agent_id!r} may be invoked before any persona is set",
            step_id,
        )


def _walk(flow: FlowDefinition, loops: list[_LoopInfo], diags: _Diags) -> None:
    loops_by_first = {info.first_idx: info for info in loops}
    loops_by_bottom = {info.bottom_idx: info for info in loops}

    start = _Facts(
        undelivered=None,
        has_response=False,
        bound=frozenset(),
        has_respondent=False,
        input_seen=frozenset(),
        personas=frozenset(a.agent_id for a in flow.agents if a.persona_prompt),
        frame=None,
    )

    def enter(pos: int, facts: _Facts) -> _Facts:
        info = loops_by_first.get(pos)
        if info is not None and facts.frame is None:
            return _replace(facts, frame=(info.bottom_idx, 1))
        return facts

    def user_input_effect(facts: _Facts, step: UserInputStep) -> _Facts:
        triggered = triggerable_agents(flow, step.to)
        # A fresh input to an agent supersedes its undelivered reply,
        # mirroring the engine's exchange-freshness rule.
        undelivered = None if facts.undelivered in triggered else facts.undelivered
        return _replace(
            facts,
            undelivered=undelivered,
            bound=facts.bound | {f"input:{step.id}"},
            has_respondent=True,
            input_seen=facts.input_seen | set(triggered),
        )

    seen: set[tuple[int, _Facts]] = set()
    work: list[tuple[int, _Facts]] = [(0, enter(0, start))]

    while work:
        if len(seen) > _WALK_BUDGET:
            diags.warning("AnalysisBudgetExceeded", "symbolic walk truncated; flow is unusually large")
            return
        pos, facts = work.pop()
        if pos >= len(flow.steps):
            continue
        if (pos, facts) in seen:
            continue
        seen.add((pos, facts))

        step = flow.steps[pos]
        successors: list[tuple[int, _Facts]] = []

        if isinstance(step, AgentPromptStep):
            _check_text(flow, step.text, facts, step.id, diags)
            successors.append((pos + 1, _replace(facts, personas=facts.personas | {step.agent})))
        elif isinstance(step, ReferenceMaterialsStep):
            successors.append((pos + 1, facts))
        elif isinstance(step, InstructionLearnerStep):
            _check_text(flow, step.text, facts, step.id, diags)
            successors.append((pos + 1, facts))
        elif isinstance(step, InstructionAiStep):
            _check_text(flow, step.text, facts, step.id, diags)
            _check_persona(flow, step.agent, facts, step.id, diags)
            bound = facts.bound
            if step.grade and facts.has_respondent:
                bound = bound | {"score"}
            successors.append(
                (pos + 1, _replace(facts, undelivered=step.agent, has_response=True, bound=bound))
            )
        elif isinstance(step, UserInputStep):
            successors.append((pos + 1, user_input_effect(facts, step)))
        elif isinstance(step, AiResponseStep):
            nxt = facts
            if facts.undelivered == step.agent:
                nxt = _replace(facts, undelivered=None)
            elif step.agent in facts.input_seen:
                # On-demand generation from the most recent input to this agent.
                _check_persona(flow, step.agent, facts, step.id, diags)
                nxt = _replace(facts, undelivered=None, has_response=True)
            else:
                diags.error(
                    "UnpairedResponse",
                    f"no instruction or user input addressed to {step.agent!r} precedes this "
                    f"step in every execution order",
                    step.id,
                )
                nxt = _replace(facts, undelivered=None, has_response=True)
            successors.append((pos + 1, nxt))
        elif isinstance(step, RepetitionStep):
            info = loops_by_bottom.get(pos)
            if info is None:
                # Structurally rejected loop; stop this path.
                continue
            frame = facts.frame
            if frame is None or frame[0] != pos:
                frame = (pos, 1)
            passes = frame[1]
            count = info.step.count
            may_exit = passes >= min(count, _PASS_CAP) or info.step.exit is not None
            may_continue = passes < count
            if may_exit:
                successors.append((pos + 1, _replace(facts, frame=None)))
            if may_continue:
                nxt_frame = (pos, min(passes + 1, _PASS_CAP))
                successors.append((info.first_idx, _replace(facts, frame=nxt_frame)))
        elif isinstance(step, BranchStep):
            if not facts.has_response:
                diags.error(
                    "BranchWithoutResponse",
                    "branch can run before any agent response exists",
                    step.id,
                )
            successors.append((pos + 1, facts))
            target_idx = flow.step_index(step.goto)
            if target_idx is not None:
                jumped = facts
                if facts.frame is not None:
                    bottom = facts.frame[0]
                    info = loops_by_bottom.get(bottom)
                    if info is not None and not (info.first_idx <= target_idx <= info.last_idx):
                        jumped = _replace(facts, frame=None)
                successors.append((target_idx, jumped))
        elif isinstance(step, AlternativeStep):
            successors.append((pos + 1, user_input_effect(facts, step.human_variant)))
            _check_text(flow, step.ai_instruction.text, facts, step.ai_instruction.id, diags, allow_role=True)
            _check_persona(flow, step.ai_instruction.agent, facts, step.ai_instruction.id, diags)
            successors.append(
                (pos + 1, _replace(facts, undelivered=None, has_response=True))
            )

        for nxt_pos, nxt_facts in successors:
            work.append((nxt_pos, enter(nxt_pos, nxt_facts)))


def _replace(facts: _Facts, **changes) -> _Facts:
    values = {
        "undelivered": facts.undelivered,
        "has_response": facts.has_response,
        "bound": facts.bound,
        "has_respondent": facts.has_respondent,
        "input_seen": facts.input_seen,
        "personas": facts.personas,
        "frame": facts.frame,
    }
    values.update(changes)
    return _Facts(**values)


def validate_flow(flow: FlowDefinition) -> ValidationReport:
    """Run every static check; diagnostics are data, never exceptions."""
    diags = _Diags()
    _check_roster(flow, diags)
    _check_refs(flow, diags)
    loops = _collect_loops(flow, diags)
    _check_branches(flow, loops, diags)
    _check_mastery(flow, loops, diags)

    # The walk interprets the step graph, so only run it on structurally
    # sound flows; structural errors already make the report fail.
    if not any(d.severity == "error" for d in diags.items):
        _walk(flow, loops, diags)

    ok = not any(d.severity == "error" for d in diags.items)
    return ValidationReport(ok=ok, diagnostics=diags.items)
