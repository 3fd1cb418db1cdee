"""Exception types shared across the package.

Every error carries a machine-readable ``code`` (the class attribute) so the
HTTP layer and the CLI can map failures without string matching.
"""


class LearnFlowError(Exception):
    code = "Error"


# --- flow document parsing ------------------------------------------------

class MalformedDocument(LearnFlowError):
    code = "MalformedDocument"


class UnknownStepKind(LearnFlowError):
    code = "UnknownStepKind"


class DuplicateStepId(LearnFlowError):
    code = "DuplicateStepId"


class MissingField(LearnFlowError):
    code = "MissingField"


class UnboundPlaceholder(LearnFlowError):
    """A declared template placeholder has no binding at instantiation."""

    code = "UnboundPlaceholder"

    def __init__(self, name: str):
        super().__init__(f"template placeholder {{{{{name}}}}} has no binding")
        self.name = name


# --- session engine -------------------------------------------------------

class InvalidFlow(LearnFlowError):
    code = "InvalidFlow"


class IllegalToggle(LearnFlowError):
    code = "IllegalToggle"

    def __init__(self, slot_id: str, reason: str = ""):
        msg = f"slot {slot_id!r} cannot be toggled"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.slot_id = slot_id


class InternalBlocked(LearnFlowError):
    """next_action called while the session is waiting on an external party."""

    code = "InternalBlocked"


class NotYourTurn(LearnFlowError):
    code = "NotYourTurn"

    def __init__(self, slot_id: str, message: str = ""):
        super().__init__(message or f"slot {slot_id!r} is not the awaited sender")
        self.slot_id = slot_id


class WordLimitExceeded(LearnFlowError):
    code = "WordLimitExceeded"

    def __init__(self, limit: int, actual: int):
        super().__init__(f"input is {actual} words, limit is {limit}")
        self.limit = limit
        self.actual = actual


class NoPendingInvocation(LearnFlowError):
    code = "NoPendingInvocation"


class AgentMismatch(LearnFlowError):
    code = "AgentMismatch"


class NoResponseInScope(LearnFlowError):
    code = "NoResponseInScope"


class UnboundRuntimePlaceholder(LearnFlowError):
    code = "UnboundRuntimePlaceholder"

    def __init__(self, name: str):
        super().__init__(f"no binding for runtime placeholder {{{{{name}}}}}")
        self.name = name


class ControlNotApplicable(LearnFlowError):
    """Instructor control action does not apply to the current status."""

    code = "ControlNotApplicable"


class FlowExecutionError(LearnFlowError):
    """Runtime faults that static validation is meant to rule out."""

    code = "FlowExecutionError"


class UnknownTarget(FlowExecutionError):
    code = "UnknownTarget"


class UnpairedResponse(FlowExecutionError):
    code = "UnpairedResponse"


# --- agent gateway --------------------------------------------------------

class BudgetTooSmall(LearnFlowError):
    code = "BudgetTooSmall"


class ScriptExhausted(LearnFlowError):
    code = "ScriptExhausted"


class ProviderTimeout(LearnFlowError):
    code = "Timeout"

    def __init__(self, attempts: int, last_error: str):
        super().__init__(f"provider unreachable after {attempts} attempts: {last_error}")
        self.attempts = attempts


class ProviderError(LearnFlowError):
    code = "ProviderError"

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"provider returned HTTP {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


# --- content store --------------------------------------------------------

class EmptyBody(LearnFlowError):
    code = "EmptyBody"


# --- event log ------------------------------------------------------------

class SequenceGap(LearnFlowError):
    code = "SequenceGap"

    def __init__(self, expected: int, got: int):
        super().__init__(f"expected seq {expected}, got {got}")
        self.expected = expected
        self.got = got


class StorageFailure(LearnFlowError):
    code = "StorageFailure"


class CorruptRecord(LearnFlowError):
    code = "CorruptRecord"

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"corrupt record at line {line_number}: {reason}")
        self.line_number = line_number


class ReplayMismatch(LearnFlowError):
    """A recorded event disagrees with the event the replayed engine produced."""

    code = "ReplayMismatch"


class UnknownViewer(LearnFlowError):
    code = "UnknownViewer"

    def __init__(self, slot_id: str):
        super().__init__(f"viewer {slot_id!r} is not in the roster")
        self.slot_id = slot_id
