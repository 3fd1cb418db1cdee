"""LearnFlow: instructional conversation-flow orchestration.

Instructors define multi-party dialogue flows (routing, visibility,
placeholders, loops, branching, human/AI team slots) that execute
deterministically against pluggable generation providers.
"""

from .content import ContentStore
from .engine import (
    AwaitInput,
    Complete,
    Deliver,
    InvokeAgent,
    SessionState,
    advance_loop,
    apply_agent_response,
    control_advance,
    control_end,
    control_override,
    control_skip,
    evaluate_branch,
    interpolate,
    next_action,
    start_session,
    submit_input,
)
from .eventlog import EventLog, project, replay
from .exemplars import exemplar_flows
from .gateway import HttpProvider, PromptBundle, StubProvider, assemble_prompt
from .model import Event, FlowDefinition, ValidationReport
from .parsing import instantiate_template, parse_flow, serialize_flow
from .runner import pump, run_session
from .validation import validate_flow

__all__ = [
    "AwaitInput",
    "Complete",
    "ContentStore",
    "Deliver",
    "Event",
    "EventLog",
    "FlowDefinition",
    "HttpProvider",
    "InvokeAgent",
    "PromptBundle",
    "SessionState",
    "StubProvider",
    "ValidationReport",
    "advance_loop",
    "apply_agent_response",
    "assemble_prompt",
    "control_advance",
    "control_end",
    "control_override",
    "control_skip",
    "evaluate_branch",
    "exemplar_flows",
    "instantiate_template",
    "interpolate",
    "next_action",
    "parse_flow",
    "project",
    "pump",
    "replay",
    "run_session",
    "serialize_flow",
    "start_session",
    "submit_input",
    "validate_flow",
]

__version__ = "0.1.0"
