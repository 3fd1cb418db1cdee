"""Flow-document parsing, serialization, and template instantiation.

The external format is a JSON object (UTF-8) with top-level keys ``id``,
``title``, ``objectives``, ``roster``, ``agents``, ``steps`` and optional
``templates``. Steps carry ``no`` (the step id) and ``kind`` plus the
kind-specific keys. Unknown keys anywhere are an error: flows are authored
by hand and by the web console, and silent key drops hide typos.

Serialization is canonical: keys are emitted in a fixed order so documents
diff cleanly, and parse -> serialize -> parse is structurally stable.
"""

from __future__ import annotations

import json
import logging
import re

from .errors import (
    DuplicateStepId,
    MalformedDocument,
    MissingField,
    UnboundPlaceholder,
    UnknownStepKind,
)
from .model import (
    ROLES,
    ROLE_AI_AGENT,
    ROLE_INSTRUCTOR,
    SOURCES,
    SOURCE_AI,
    SOURCE_HUMAN,
    VISIBILITY_ALL,
    AgentConfig,
    AgentPromptStep,
    AiResponseStep,
    AlternativeStep,
    BranchStep,
    FlowDefinition,
    InstructionAiStep,
    InstructionLearnerStep,
    MasteryRule,
    ParticipantSlot,
    ReferenceMaterialsStep,
    RepetitionStep,
    Step,
    UserInputStep,
)

logger = logging.getLogger(__name__)

PLACEHOLDER_RE = re.compile(r"\{\{([^{}]*)\}\}")

_TOP_KEYS = ("id", "title", "objectives", "roster", "agents", "steps", "templates")
_ROSTER_KEYS = ("slot_id", "role", "team", "source")
_AGENT_KEYS = ("agent_id", "persona_prompt", "material_refs", "params", "context_budget_words")

# Required / optional document keys per step kind, beyond "no" and "kind".
_STEP_KEYS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "agent_prompt": (("agent", "text"), ()),
    "reference_materials": (("agent", "materials", "audience"), ()),
    "instruction_learner": (("to", "text"), ()),
    "instruction_ai": (("agent", "text"), ("grade",)),
    "user_input": (("from", "to"), ("max_words",)),
    "ai_response": (("agent", "visibility"), ()),
    "repetition": (("range", "count"), ("exit",)),
    "branch": (("on", "contains_token", "goto"), ()),
    "alternative": (("slot", "human_variant", "ai_variant"), ()),
}


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise MissingField(f"{where}: missing {key!r}")
    return obj[key]


def _check_keys(obj: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = [k for k in obj if k not in allowed]
    if unknown:
        raise MalformedDocument(f"{where}: unknown key {unknown[0]!r}")


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise MalformedDocument(f"{where}: expected a string, got {type(value).__name__}")
    return value


def _as_str_list(value, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedDocument(f"{where}: expected a list of strings")
    return list(value)


def _as_count(value, where: str) -> int | str:
    """Accept an int, a digit string, or an uninstantiated {{placeholder}}."""
    if isinstance(value, bool):
        raise MalformedDocument(f"{where}: expected an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        if value.isdigit():
            return int(value)
        if PLACEHOLDER_RE.fullmatch(value.strip()):
            return value
        raise MalformedDocument(f"{where}: expected an integer or a template placeholder")
    raise MalformedDocument(f"{where}: expected an integer")


def _parse_slot(obj, idx: int) -> ParticipantSlot:
    where = f"roster[{idx}]"
    if not isinstance(obj, dict):
        raise MalformedDocument(f"{where}: expected an object")
    _check_keys(obj, _ROSTER_KEYS, where)
    slot_id = _as_str(_require(obj, "slot_id", where), f"{where}.slot_id")
    role = _as_str(_require(obj, "role", where), f"{where}.role")
    if role not in ROLES:
        raise MalformedDocument(f"{where}: unknown role {role!r}")
    team = obj.get("team")
    if team is not None:
        team = _as_str(team, f"{where}.team")
    source = obj.get("source")
    if source is None:
        source = SOURCE_AI if role == ROLE_AI_AGENT else SOURCE_HUMAN
    elif source not in SOURCES:
        raise MalformedDocument(f"{where}: unknown source {source!r}")
    if role == ROLE_AI_AGENT and source != SOURCE_AI:
        raise MalformedDocument(f"{where}: ai-agent slots must have source 'ai'")
    if role == ROLE_INSTRUCTOR and source != SOURCE_HUMAN:
        raise MalformedDocument(f"{where}: the instructor slot must have source 'human'")
    return ParticipantSlot(slot_id=slot_id, role=role, team=team, source=source)


def _parse_agent(obj, idx: int) -> AgentConfig:
    where = f"agents[{idx}]"
    if not isinstance(obj, dict):
        raise MalformedDocument(f"{where}: expected an object")
    _check_keys(obj, _AGENT_KEYS, where)
    agent_id = _as_str(_require(obj, "agent_id", where), f"{where}.agent_id")
    persona = obj.get("persona_prompt", "")
    persona = _as_str(persona, f"{where}.persona_prompt")
    refs = obj.get("material_refs", [])
    refs = _as_str_list(refs, f"{where}.material_refs")
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise MalformedDocument(f"{where}.params: expected an object")
    budget = obj.get("context_budget_words", 4000)
    if isinstance(budget, bool) or not isinstance(budget, int) or budget < 1:
        raise MalformedDocument(f"{where}.context_budget_words: expected a positive integer")
    return AgentConfig(
        agent_id=agent_id,
        persona_prompt=persona,
        material_refs=refs,
        params=params,
        context_budget_words=budget,
    )


def _parse_visibility(value, where: str) -> list[str] | str:
    if value == VISIBILITY_ALL:
        return VISIBILITY_ALL
    return _as_str_list(value, where)


def _parse_step(obj, where: str, expect_kind: str | None = None) -> Step:
    if not isinstance(obj, dict):
        raise MalformedDocument(f"{where}: expected an object")
    step_id = _as_str(_require(obj, "no", where), f"{where}.no")
    if not step_id:
        raise MalformedDocument(f"{where}: step id must be non-empty")
    kind = _as_str(_require(obj, "kind", where), f"{where}.kind")
    if kind not in _STEP_KEYS:
        raise UnknownStepKind(f"{where}: unknown step kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise MalformedDocument(f"{where}: expected kind {expect_kind!r}, got {kind!r}")
    required, optional = _STEP_KEYS[kind]
    _check_keys(obj, ("no", "kind") + required + optional, where)
    for key in required:
        _require(obj, key, where)

    if kind == "agent_prompt":
        return AgentPromptStep(
            id=step_id,
            agent=_as_str(obj["agent"], f"{where}.agent"),
            text=_as_str(obj["text"], f"{where}.text"),
        )
    if kind == "reference_materials":
        return ReferenceMaterialsStep(
            id=step_id,
            agent=_as_str(obj["agent"], f"{where}.agent"),
            materials=_as_str_list(obj["materials"], f"{where}.materials"),
            audience=_as_str_list(obj["audience"], f"{where}.audience"),
        )
    if kind == "instruction_learner":
        return InstructionLearnerStep(
            id=step_id,
            to=_as_str_list(obj["to"], f"{where}.to"),
            text=_as_str(obj["text"], f"{where}.text"),
        )
    if kind == "instruction_ai":
        grade = obj.get("grade", False)
        if not isinstance(grade, bool):
            raise MalformedDocument(f"{where}.grade: expected a boolean")
        return InstructionAiStep(
            id=step_id,
            agent=_as_str(obj["agent"], f"{where}.agent"),
            text=_as_str(obj["text"], f"{where}.text"),
            grade=grade,
        )
    if kind == "user_input":
        max_words = obj.get("max_words")
        if max_words is not None:
            max_words = _as_count(max_words, f"{where}.max_words")
        return UserInputStep(
            id=step_id,
            from_slot=_as_str(obj["from"], f"{where}.from"),
            to=_as_str_list(obj["to"], f"{where}.to"),
            max_words=max_words,
        )
    if kind == "ai_response":
        return AiResponseStep(
            id=step_id,
            agent=_as_str(obj["agent"], f"{where}.agent"),
            visibility=_parse_visibility(obj["visibility"], f"{where}.visibility"),
        )
    if kind == "repetition":
        rng = obj["range"]
        if not isinstance(rng, list) or len(rng) != 2 or not all(isinstance(v, str) for v in rng):
            raise MalformedDocument(f"{where}.range: expected [first_step_id, last_step_id]")
        exit_rule = None
        if obj.get("exit") is not None:
            exit_obj = obj["exit"]
            if not isinstance(exit_obj, dict):
                raise MalformedDocument(f"{where}.exit: expected an object")
            _check_keys(exit_obj, ("consecutive_correct",), f"{where}.exit")
            cc = _require(exit_obj, "consecutive_correct", f"{where}.exit")
            if isinstance(cc, bool) or not isinstance(cc, int) or cc < 1:
                raise MalformedDocument(f"{where}.exit.consecutive_correct: expected a positive integer")
            exit_rule = MasteryRule(consecutive_correct=cc)
        return RepetitionStep(
            id=step_id,
            first=rng[0],
            last=rng[1],
            count=_as_count(obj["count"], f"{where}.count"),
            exit=exit_rule,
        )
    if kind == "branch":
        on = _as_str(obj["on"], f"{where}.on")
        if on != "last_agent_response":
            raise MalformedDocument(f"{where}.on: only 'last_agent_response' is supported")
        return BranchStep(
            id=step_id,
            contains_token=_as_str(obj["contains_token"], f"{where}.contains_token"),
            goto=_as_str(obj["goto"], f"{where}.goto"),
            on=on,
        )
    # alternative
    human = _parse_step(obj["human_variant"], f"{where}.human_variant", expect_kind="user_input")
    pair = obj["ai_variant"]
    if not isinstance(pair, list) or len(pair) != 2:
        raise MalformedDocument(f"{where}.ai_variant: expected [instruction_ai step, ai_response step]")
    ai_instr = _parse_step(pair[0], f"{where}.ai_variant[0]", expect_kind="instruction_ai")
    ai_resp = _parse_step(pair[1], f"{where}.ai_variant[1]", expect_kind="ai_response")
    return AlternativeStep(
        id=step_id,
        slot=_as_str(obj["slot"], f"{where}.slot"),
        human_variant=human,
        ai_instruction=ai_instr,
        ai_response=ai_resp,
    )


def _all_step_ids(step: Step) -> list[str]:
    if isinstance(step, AlternativeStep):
        return [step.id, step.human_variant.id, step.ai_instruction.id, step.ai_response.id]
    return [step.id]


def parse_flow_document(doc: dict) -> FlowDefinition:
    """Parse an already-decoded flow document object."""
    if not isinstance(doc, dict):
        raise MalformedDocument("flow document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "flow")
    flow_id = _as_str(_require(doc, "id", "flow"), "flow.id")
    title = _as_str(_require(doc, "title", "flow"), "flow.title")
    objectives = _as_str_list(_require(doc, "objectives", "flow"), "flow.objectives")

    roster_raw = _require(doc, "roster", "flow")
    if not isinstance(roster_raw, list):
        raise MalformedDocument("flow.roster: expected a list")
    roster = [_parse_slot(s, i) for i, s in enumerate(roster_raw)]
    seen_slots: set[str] = set()
    for slot in roster:
        if slot.slot_id in seen_slots:
            raise MalformedDocument(f"duplicate roster slot {slot.slot_id!r}")
        seen_slots.add(slot.slot_id)

    agents_raw = _require(doc, "agents", "flow")
    if not isinstance(agents_raw, list):
        raise MalformedDocument("flow.agents: expected a list")
    agents = [_parse_agent(a, i) for i, a in enumerate(agents_raw)]
    seen_agents: set[str] = set()
    for agent in agents:
        if agent.agent_id in seen_agents:
            raise MalformedDocument(f"duplicate agent {agent.agent_id!r}")
        seen_agents.add(agent.agent_id)

    steps_raw = _require(doc, "steps", "flow")
    if not isinstance(steps_raw, list):
        raise MalformedDocument("flow.steps: expected a list")
    if not steps_raw:
        raise MissingField("steps non-empty")
    steps = [_parse_step(s, f"steps[{i}]") for i, s in enumerate(steps_raw)]
    seen_ids: set[str] = set()
    for step in steps:
        for sid in _all_step_ids(step):
            if sid in seen_ids:
                raise DuplicateStepId(f"step id {sid!r} appears more than once")
            seen_ids.add(sid)

    templates = doc.get("templates")
    if templates is not None:
        if not isinstance(templates, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in templates.items()
        ):
            raise MalformedDocument("flow.templates: expected an object of name -> description")
        templates = dict(templates)

    return FlowDefinition(
        id=flow_id,
        title=title,
        objectives=objectives,
        roster=roster,
        agents=agents,
        steps=steps,
        templates=templates,
    )


def parse_flow(document: str) -> FlowDefinition:
    """Parse flow-document text. Raises MalformedDocument on bad JSON."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    return parse_flow_document(doc)


# --- serialization ---------------------------------------------------------


def _slot_to_doc(slot: ParticipantSlot) -> dict:
    out: dict = {"slot_id": slot.slot_id, "role": slot.role}
    if slot.team is not None:
        out["team"] = slot.team
    out["source"] = slot.source
    return out


def _agent_to_doc(agent: AgentConfig) -> dict:
    return {
        "agent_id": agent.agent_id,
        "persona_prompt": agent.persona_prompt,
        "material_refs": list(agent.material_refs),
        "params": dict(agent.params),
        "context_budget_words": agent.context_budget_words,
    }


def step_to_doc(step: Step) -> dict:
    out: dict = {"no": step.id, "kind": step.KIND}
    if isinstance(step, AgentPromptStep):
        out.update(agent=step.agent, text=step.text)
    elif isinstance(step, ReferenceMaterialsStep):
        out.update(agent=step.agent, materials=list(step.materials), audience=list(step.audience))
    elif isinstance(step, InstructionLearnerStep):
        out.update(to=list(step.to), text=step.text)
    elif isinstance(step, InstructionAiStep):
        out.update(agent=step.agent, text=step.text, grade=step.grade)
    elif isinstance(step, UserInputStep):
        out["from"] = step.from_slot
        out["to"] = list(step.to)
        if step.max_words is not None:
            out["max_words"] = step.max_words
    elif isinstance(step, AiResponseStep):
        vis = step.visibility if isinstance(step.visibility, str) else list(step.visibility)
        out.update(agent=step.agent, visibility=vis)
    elif isinstance(step, RepetitionStep):
        out.update(range=[step.first, step.last], count=step.count)
        if step.exit is not None:
            out["exit"] = {"consecutive_correct": step.exit.consecutive_correct}
    elif isinstance(step, BranchStep):
        out.update(on=step.on, contains_token=step.contains_token, goto=step.goto)
    elif isinstance(step, AlternativeStep):
        out.update(
            slot=step.slot,
            human_variant=step_to_doc(step.human_variant),
            ai_variant=[step_to_doc(step.ai_instruction), step_to_doc(step.ai_response)],
        )
    else:  # pragma: no cover - exhaustive over STEP_KINDS
        raise TypeError(f"unserializable step {step!r}")
    return out


def flow_to_doc(flow: FlowDefinition) -> dict:
    doc: dict = {
        "id": flow.id,
        "title": flow.title,
        "objectives": list(flow.objectives),
        "roster": [_slot_to_doc(s) for s in flow.roster],
        "agents": [_agent_to_doc(a) for a in flow.agents],
        "steps": [step_to_doc(s) for s in flow.steps],
    }
    if flow.templates is not None:
        doc["templates"] = dict(flow.templates)
    return doc


def serialize_flow(flow: FlowDefinition) -> str:
    return json.dumps(flow_to_doc(flow), ensure_ascii=False, indent=2) + "\n"


# --- template instantiation -------------------------------------------------


def _substitute(value, names: dict[str, str]):
    if isinstance(value, str):
        for name, bound in names.items():
            value = value.replace("{{" + name + "}}", bound)
        return value
    if isinstance(value, list):
        return [_substitute(v, names) for v in value]
    if isinstance(value, dict):
        return {k: _substitute(v, names) for k, v in value.items()}
    return value


def instantiate_template(template: FlowDefinition, bindings: dict[str, str]) -> FlowDefinition:
    """Substitute declared template placeholders and return a concrete flow.

    Runtime placeholders (``input:...``, ``score``, ``role``, ``loop_index``)
    are left untouched; only names declared in the flow's ``templates`` map
    are replaced. Bindings for undeclared names are logged as warnings.
    """
    declared = template.templates or {}
    for name in declared:
        if name not in bindings:
            raise UnboundPlaceholder(name)
    for name in bindings:
        if name not in declared:
            logger.warning("UnusedBinding: %r is not a declared template placeholder", name)

    doc = flow_to_doc(template)
    doc.pop("templates", None)
    doc = _substitute(doc, {name: bindings[name] for name in declared})
    return parse_flow_document(doc)
