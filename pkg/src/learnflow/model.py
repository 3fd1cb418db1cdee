"""Data model for instructional conversation flows and session transcripts.

A flow is an instructor-authored, ordered script of dialogue steps: persona
assignments, reference-material attachments, instructions, human inputs,
agent responses, bounded loops, conditional jumps, and human/AI alternative
turns. Parsing and static validation live in ``parsing`` and ``validation``;
this module only defines the shapes.

Step ids are strings so sub-numbered turns ("3-1", "3-2") can be expressed.
Loop ranges are inclusive on both ends, and a flow holds at most one level
of looping (nested ranges are rejected by validation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Union

ROLE_INSTRUCTOR = "instructor"
ROLE_LEARNER = "learner"
ROLE_AI_AGENT = "ai-agent"
ROLES = (ROLE_INSTRUCTOR, ROLE_LEARNER, ROLE_AI_AGENT)

SOURCE_HUMAN = "human"
SOURCE_AI = "ai"
SOURCES = (SOURCE_HUMAN, SOURCE_AI)

VISIBILITY_ALL = "all"


@dataclass
class ParticipantSlot:
    """A named participant position: who may occupy it and how it speaks.

    ``source`` matters for learner slots used in alternative steps, where the
    instructor may toggle a position between a human and an AI stand-in.
    """

    slot_id: str
    role: str
    team: str | None = None
    source: str = SOURCE_HUMAN


@dataclass
class AgentConfig:
    """An AI agent: persona, attached materials, and provider knobs.

    ``params`` is opaque to the engine and forwarded to the provider.
    ``context_budget_words`` caps the assembled prompt size.
    """

    agent_id: str
    persona_prompt: str = ""
    material_refs: list[str] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    context_budget_words: int = 4000


@dataclass
class MasteryRule:
    """Early loop exit once this many consecutive graded-correct answers land."""

    consecutive_correct: int


@dataclass
class AgentPromptStep:
    KIND: ClassVar[str] = "agent_prompt"
    id: str
    agent: str
    text: str


@dataclass
class ReferenceMaterialsStep:
    KIND: ClassVar[str] = "reference_materials"
    id: str
    agent: str
    materials: list[str]
    audience: list[str]


@dataclass
class InstructionLearnerStep:
    KIND: ClassVar[str] = "instruction_learner"
    id: str
    to: list[str]
    text: str


@dataclass
class InstructionAiStep:
    KIND: ClassVar[str] = "instruction_ai"
    id: str
    agent: str
    text: str
    grade: bool = False


@dataclass
class UserInputStep:
    KIND: ClassVar[str] = "user_input"
    id: str
    from_slot: str
    to: list[str]
    max_words: int | None = None


@dataclass
class AiResponseStep:
    KIND: ClassVar[str] = "ai_response"
    id: str
    agent: str
    # Either the wildcard string "all" or an explicit slot list.
    visibility: list[str] | str = VISIBILITY_ALL


@dataclass
class RepetitionStep:
    """Bounded loop over the contiguous, inclusive step range [first, last].

    ``count`` may temporarily be an uninstantiated template placeholder
    string; validation rejects flows where it is not a positive integer.
    """

    KIND: ClassVar[str] = "repetition"
    id: str
    first: str
    last: str
    count: int | str
    exit: MasteryRule | None = None


@dataclass
class BranchStep:
    """Jump to ``goto`` when the latest agent response contains the token."""

    KIND: ClassVar[str] = "branch"
    id: str
    contains_token: str
    goto: str
    on: str = "last_agent_response"


@dataclass
class AlternativeStep:
    """A speaking turn resolved at session start by the slot's source toggle.

    Human source executes ``human_variant``; AI source runs the embedded
    instruction/response pair instead.
    """

    KIND: ClassVar[str] = "alternative"
    id: str
    slot: str
    human_variant: UserInputStep
    ai_instruction: InstructionAiStep
    ai_response: AiResponseStep


Step = Union[
    AgentPromptStep,
    ReferenceMaterialsStep,
    InstructionLearnerStep,
    InstructionAiStep,
    UserInputStep,
    AiResponseStep,
    RepetitionStep,
    BranchStep,
    AlternativeStep,
]

STEP_KINDS = (
    AgentPromptStep,
    ReferenceMaterialsStep,
    InstructionLearnerStep,
    InstructionAiStep,
    UserInputStep,
    AiResponseStep,
    RepetitionStep,
    BranchStep,
    AlternativeStep,
)


@dataclass
class FlowDefinition:
    """A parsed flow: roster, agent configs, and the ordered step script."""

    id: str
    title: str
    objectives: list[str]
    roster: list[ParticipantSlot]
    agents: list[AgentConfig]
    steps: list[Step]
    templates: dict[str, str] | None = None

    def slot(self, slot_id: str) -> ParticipantSlot | None:
        for s in self.roster:
            if s.slot_id == slot_id:
                return s
        return None

    def slot_ids(self) -> list[str]:
        return [s.slot_id for s in self.roster]

    def instructor_slot(self) -> str:
        for s in self.roster:
            if s.role == ROLE_INSTRUCTOR:
                return s.slot_id
        raise LookupError("flow has no instructor slot")

    def agent(self, agent_id: str) -> AgentConfig | None:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        return None

    def step_index(self, step_id: str) -> int | None:
        """Index of a top-level step; variant sub-ids are not indexed."""
        for i, s in enumerate(self.steps):
            if s.id == step_id:
                return i
        return None


@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    step_id: str | None = None


@dataclass
class ValidationReport:
    ok: bool
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    def codes(self) -> set[str]:
        return {d.code for d in self.diagnostics}

    def to_doc(self) -> dict:
        return {
            "ok": self.ok,
            "diagnostics": [
                {
                    "severity": d.severity,
                    "step_id": d.step_id,
                    "code": d.code,
                    "message": d.message,
                }
                for d in self.diagnostics
            ],
        }


EVENT_KINDS = ("instruction", "user_input", "agent_response", "system")


@dataclass
class Event:
    """One immutable transcript entry.

    ``seq`` is gapless and strictly increasing per session. The instructor
    slot is always present in both ``recipients`` and ``visibility``;
    ``iteration`` is the 0-based loop pass for events emitted inside a
    repetition range and 0 elsewhere.
    """

    seq: int
    step_id: str
    iteration: int
    kind: str
    sender: str
    recipients: list[str]
    visibility: list[str]
    content: str
    ts: str

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "step_id": self.step_id,
            "iteration": self.iteration,
            "kind": self.kind,
            "sender": self.sender,
            "recipients": list(self.recipients),
            "visibility": list(self.visibility),
            "content": self.content,
            "ts": self.ts,
        }


def event_from_doc(doc: dict) -> Event:
    return Event(
        seq=doc["seq"],
        step_id=doc["step_id"],
        iteration=doc["iteration"],
        kind=doc["kind"],
        sender=doc["sender"],
        recipients=list(doc["recipients"]),
        visibility=list(doc["visibility"]),
        content=doc["content"],
        ts=doc["ts"],
    )
