"""Append-only event persistence, replay, and per-participant projections.

One JSONL file per session: a record is the event plus the session id,
written durably (flush + fsync) before append returns. Session state is a
fold over the log: the first record carries the flow document and resolved
source toggles, user-input and system records carry every stimulus, so
``replay`` can re-drive the engine and verify each regenerated event
against the recorded one (timestamps excluded).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from . import engine
from .errors import CorruptRecord, ReplayMismatch, SequenceGap, StorageFailure, UnknownViewer
from .model import Event, FlowDefinition, event_from_doc

_RECORD_KEYS = (
    "seq",
    "session_id",
    "step_id",
    "iteration",
    "kind",
    "sender",
    "recipients",
    "visibility",
    "content",
    "ts",
)


@dataclass
class LogRecord:
    session_id: str
    event: Event


def record_to_line(session_id: str, event: Event) -> str:
    doc = event.to_doc()
    ordered = {key: (session_id if key == "session_id" else doc[key]) for key in _RECORD_KEYS}
    return json.dumps(ordered, ensure_ascii=False)


def line_to_record(line: str, line_number: int) -> LogRecord:
    try:
        doc = json.loads(line)
    except ValueError as exc:
        raise CorruptRecord(line_number, f"invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise CorruptRecord(line_number, "record is not an object")
    missing = [k for k in _RECORD_KEYS if k not in doc]
    if missing:
        raise CorruptRecord(line_number, f"missing key {missing[0]!r}")
    try:
        event = event_from_doc(doc)
    except (KeyError, TypeError) as exc:
        raise CorruptRecord(line_number, f"bad event shape ({exc})")
    if not isinstance(event.seq, int) or isinstance(event.seq, bool):
        raise CorruptRecord(line_number, "seq must be an integer")
    return LogRecord(session_id=doc["session_id"], event=event)


class EventLog:
    """Directory-backed log: {data_dir}/sessions/{session_id}.events.jsonl."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self._last_seq: dict[str, int] = {}

    def path(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / f"{session_id}.events.jsonl"

    def _tail_seq(self, session_id: str) -> int:
        if session_id in self._last_seq:
            return self._last_seq[session_id]
        path = self.path(session_id)
        last = 0
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                for number, line in enumerate(fh, start=1):
                    if line.strip():
                        last = line_to_record(line, number).event.seq
        self._last_seq[session_id] = last
        return last

    def append(self, session_id: str, event: Event) -> int:
        expected = self._tail_seq(session_id) + 1
        if event.seq != expected:
            raise SequenceGap(expected, event.seq)
        path = self.path(session_id)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as fh:
                fh.write(record_to_line(session_id, event) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StorageFailure(f"cannot append to {path}: {exc}")
        self._last_seq[session_id] = event.seq
        return event.seq

    def read(self, session_id: str) -> list[LogRecord]:
        path = self.path(session_id)
        if not path.exists():
            return []
        return read_records(path)

    def session_ids(self) -> list[str]:
        root = self.data_dir / "sessions"
        if not root.is_dir():
            return []
        return sorted(p.name.removesuffix(".events.jsonl") for p in root.glob("*.events.jsonl"))


def read_records(path: str | Path) -> list[LogRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(line_to_record(line, number))
    return records


def _verify(produced: Event, recorded: Event, line_number: int) -> None:
    mismatches = []
    for name in ("seq", "step_id", "iteration", "kind", "sender", "content"):
        if getattr(produced, name) != getattr(recorded, name):
            mismatches.append(name)
    if list(produced.recipients) != list(recorded.recipients):
        mismatches.append("recipients")
    if list(produced.visibility) != list(recorded.visibility):
        mismatches.append("visibility")
    if mismatches:
        raise ReplayMismatch(
            f"record {line_number} disagrees with the replayed engine on: {', '.join(mismatches)}"
        )


def flow_from_records(records: list[LogRecord]) -> FlowDefinition:
    """Recover the flow document embedded in the session-start record."""
    from .parsing import parse_flow_document

    if not records:
        raise CorruptRecord(0, "empty log has no session-start record")
    payload = engine.system_payload(records[0].event)
    if not payload or payload.get("type") != "session_started":
        raise CorruptRecord(1, "first record is not a session_started event")
    try:
        return parse_flow_document(engine.decode_flow_blob(payload))
    except Exception as exc:
        raise CorruptRecord(1, f"embedded flow does not parse: {exc}")


def replay(
    records: list[LogRecord],
    flow: FlowDefinition,
    *,
    content_store=None,
) -> engine.SessionState:
    """Rebuild the session state a gapless record prefix describes.

    The fold re-drives the engine: stimuli (inputs, agent replies, controls)
    are taken from the records, regenerated events are verified against the
    recorded ones, and advancement stops before emitting anything beyond
    the prefix. The result equals the live state captured at the same
    point, timestamps aside.
    """
    for i, record in enumerate(records):
        if record.event.seq != i + 1:
            raise CorruptRecord(i + 1, f"expected seq {i + 1}, found {record.event.seq}")

    if not records:
        return engine.start_session(flow)

    payload = engine.system_payload(records[0].event)
    if not payload or payload.get("type") != "session_started":
        raise CorruptRecord(1, "first record is not a session_started event")
    sources = payload.get("sources", {})
    defaults = {s.slot_id: s.source for s in flow.roster}
    overrides = {k: v for k, v in sources.items() if defaults.get(k) != v}

    state = engine.start_session(
        flow, overrides, session_id=records[0].session_id
    )
    _verify(state.events[0], records[0].event, 1)
    idx = 1
    n = len(records)

    def consume(new_state: engine.SessionState, produced: list[Event]) -> engine.SessionState:
        nonlocal idx
        for event in produced:
            if idx >= n:
                raise ReplayMismatch("log ends mid-transition")
            _verify(event, records[idx].event, idx + 1)
            idx += 1
        return new_state

    while True:
        if state.status in (engine.COMPLETED, engine.ENDED_BY_INSTRUCTOR):
            break
        if state.status == engine.AWAITING_INPUT:
            if idx >= n:
                break
            record = records[idx].event
            sys_payload = engine.system_payload(record)
            if record.kind == "user_input":
                step = state.flow.steps[state.cursor]
                awaited = step.slot if hasattr(step, "slot") else step.from_slot
                if record.sender == awaited:
                    state = consume(*engine.submit_input(state, record.sender, record.content))
                elif record.sender == state.flow.instructor_slot():
                    state = consume(*engine.control_advance(state))
                else:
                    raise ReplayMismatch(
                        f"record {idx + 1}: input from {record.sender!r} while awaiting {awaited!r}"
                    )
            elif sys_payload and sys_payload.get("type") == "step_skipped":
                state = consume(*engine.control_skip(state))
            elif sys_payload and sys_payload.get("type") == "session_ended":
                state = consume(*engine.control_end(state))
            else:
                raise ReplayMismatch(f"record {idx + 1}: unexpected {record.kind} while awaiting input")
            continue
        if state.status == engine.AWAITING_AGENT:
            if idx >= n:
                break
            record = records[idx].event
            sys_payload = engine.system_payload(record)
            if sys_payload and sys_payload.get("type") == "agent_reply":
                state = consume(
                    *engine.apply_agent_response(
                        state,
                        sys_payload["agent"],
                        sys_payload["content"],
                        overridden=bool(sys_payload.get("overridden")),
                    )
                )
            elif sys_payload and sys_payload.get("type") == "session_ended":
                state = consume(*engine.control_end(state))
            else:
                raise ReplayMismatch(
                    f"record {idx + 1}: unexpected {record.kind} while awaiting an agent"
                )
            continue
        # Status running: advance, committing deliveries only while records remain.
        next_state, action = engine.next_action(state, content_store=content_store)
        if isinstance(action, engine.Deliver):
            if idx >= n:
                break
            _verify(action.event, records[idx].event, idx + 1)
            idx += 1
            state = next_state
            continue
        state = next_state

    if idx < n:
        raise ReplayMismatch(f"{n - idx} records were never consumed by the replayed engine")
    return state


def project(
    records: list[LogRecord],
    viewer: str,
    flow: FlowDefinition | None = None,
) -> list[Event]:
    """Events the viewer is allowed to read, in seq order.

    The instructor's projection is the full log. The roster is taken from
    ``flow`` when given, otherwise from the embedded session-start record.
    """
    roster: list[str] | None = None
    if flow is not None:
        roster = flow.slot_ids()
    elif records:
        payload = engine.system_payload(records[0].event)
        if payload and payload.get("type") == "session_started":
            doc = engine.decode_flow_blob(payload)
            roster = [s["slot_id"] for s in doc.get("roster", [])]
    if roster is not None and viewer not in roster:
        raise UnknownViewer(viewer)
    return [r.event for r in records if viewer in r.event.visibility]
