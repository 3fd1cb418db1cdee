"""Prompt assembly and generation providers.

``assemble_prompt`` turns an agent's persona, retrieved material chunks,
the conversation so far, and one interpolated instruction into a
provider-ready bundle. Budgeting is word-based: deterministic across
providers, and enforced by dropping the oldest history first. The persona
block and the final instruction are never dropped.

Two providers ship: a deterministic scripted stub for tests and offline
runs, and an OpenAI-compatible HTTP endpoint client.
"""

from __future__ import annotations

import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

import requests

from .errors import BudgetTooSmall, ProviderError, ProviderTimeout, ScriptExhausted
from .model import AgentConfig, Event

logger = logging.getLogger(__name__)

ORIGIN_INSTRUCTOR = "instructor"
ORIGIN_LEARNER = "learner"
ORIGIN_AGENT = "agent"

API_KEY_ENV = "LEARNFLOW_API_KEY"
DEFAULT_RETRIES = 2
BACKOFF_BASE_SECONDS = 0.5


@dataclass
class BundleMessage:
    origin: str  # instructor | learner | agent
    text: str
    slot: str | None = None  # sending slot, kept for learner prefixes


@dataclass
class PromptBundle:
    system_text: str
    messages: list[BundleMessage]
    params: dict = field(default_factory=dict)

    def word_count(self) -> int:
        total = len(self.system_text.split())
        for message in self.messages:
            total += len(message.text.split())
        return total


def _classify_origin(event: Event, agent_id: str, instructor_slot: str) -> str:
    if event.sender == agent_id or event.kind == "agent_response":
        return ORIGIN_AGENT
    if event.sender in (instructor_slot, "engine"):
        return ORIGIN_INSTRUCTOR
    return ORIGIN_LEARNER


def assemble_prompt(
    agent: AgentConfig,
    history: list[Event],
    instruction: str,
    retrieved: list[str],
    *,
    persona: str | None = None,
    instructor_slot: str = "instructor",
    instruction_origin: str = ORIGIN_INSTRUCTOR,
    instruction_slot: str | None = None,
) -> PromptBundle:
    """Build a bundle within the agent's word budget.

    ``history`` is filtered to events the agent sent or received; the most
    recent events survive when the budget forces drops. ``persona``
    overrides the config persona when the flow rewrote it mid-session.
    """
    persona_text = agent.persona_prompt if persona is None else persona
    parts = [persona_text] if persona_text else []
    parts.extend(retrieved)
    system_text = "\n".join(parts)

    final = BundleMessage(origin=instruction_origin, text=instruction, slot=instruction_slot)
    budget = agent.context_budget_words
    fixed = len(persona_text.split()) + len(instruction.split())
    if fixed > budget:
        raise BudgetTooSmall(
            f"budget of {budget} words cannot fit persona and instruction ({fixed} words)"
        )

    relevant = [
        e
        for e in history
        if e.sender == agent.agent_id or agent.agent_id in e.recipients
    ]
    messages = [
        BundleMessage(
            origin=_classify_origin(e, agent.agent_id, instructor_slot),
            text=e.content,
            slot=e.sender if e.sender not in ("engine",) else None,
        )
        for e in relevant
    ]
    messages.append(final)

    bundle = PromptBundle(system_text=system_text, messages=messages, params=dict(agent.params))
    # Drop oldest history first; retrieved chunks go before history does not
    # arise because chunks live in system_text, which we trim instead when
    # even an empty history cannot fit.
    while bundle.word_count() > budget and len(bundle.messages) > 1:
        bundle.messages.pop(0)
    while bundle.word_count() > budget and retrieved:
        retrieved = retrieved[:-1]
        parts = [persona_text] if persona_text else []
        parts.extend(retrieved)
        bundle.system_text = "\n".join(parts)
    return bundle


@dataclass
class ScriptEntry:
    response: str
    match: str | None = None
    delay_ms: int = 0
    consumed: bool = False


class StubProvider:
    """Deterministic scripted provider.

    Entries are consumed at most once. A call picks the first unconsumed
    entry whose ``match`` substring occurs in the bundle's final message,
    falling back to the first unconsumed entry without a ``match``.
    """

    def __init__(self, entries: list[dict] | list[ScriptEntry]):
        self._entries: list[ScriptEntry] = []
        for e in entries:
            if isinstance(e, ScriptEntry):
                self._entries.append(e)
            else:
                self._entries.append(
                    ScriptEntry(
                        response=e["response"],
                        match=e.get("match"),
                        delay_ms=int(e.get("delay_ms", 0)),
                    )
                )
        self._lock = threading.Lock()

    @property
    def cursor(self) -> int:
        return sum(1 for e in self._entries if e.consumed)

    def generate(self, bundle: PromptBundle, invocation_id: str | None = None) -> str:
        final = bundle.messages[-1].text if bundle.messages else ""
        with self._lock:
            chosen = None
            for entry in self._entries:
                if entry.consumed or entry.match is None:
                    continue
                if entry.match in final:
                    chosen = entry
                    break
            if chosen is None:
                for entry in self._entries:
                    if not entry.consumed and entry.match is None:
                        chosen = entry
                        break
            if chosen is None:
                raise ScriptExhausted("stub script has no entry left for this request")
            chosen.consumed = True
        if chosen.delay_ms:
            time.sleep(chosen.delay_ms / 1000.0)
        return chosen.response


class HttpProvider:
    """OpenAI-compatible chat-completions client.

    Posts ``{model, messages, **params}`` to ``{base_url}/chat/completions``
    with a bearer token from the LEARNFLOW_API_KEY environment variable.
    Retries twice with exponential backoff; requests carry a client-generated
    invocation id header so retried generations can be deduplicated.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        retries: int = DEFAULT_RETRIES,
        timeout: float = 60.0,
        sleeper=time.sleep,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self.timeout = timeout
        self._sleep = sleeper
        self._session = session or requests.Session()

    def _messages(self, bundle: PromptBundle) -> list[dict]:
        out = []
        if bundle.system_text:
            out.append({"role": "system", "content": bundle.system_text})
        for message in bundle.messages:
            if message.origin == ORIGIN_AGENT:
                out.append({"role": "assistant", "content": message.text})
            elif message.origin == ORIGIN_INSTRUCTOR:
                out.append({"role": "user", "content": f"INSTRUCTOR: {message.text}"})
            else:
                slot = message.slot or "learner"
                out.append({"role": "user", "content": f"LEARNER {slot}: {message.text}"})
        return out

    def generate(self, bundle: PromptBundle, invocation_id: str | None = None) -> str:
        body = {"model": self.model, "messages": self._messages(bundle)}
        body.update(bundle.params)
        headers = {"X-Invocation-Id": invocation_id or uuid.uuid4().hex}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error = ""
        attempts = self.retries + 1
        for attempt in range(attempts):
            try:
                response = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                if attempt < self.retries:
                    self._sleep(BACKOFF_BASE_SECONDS * (2**attempt))
                continue
            if response.status_code >= 400:
                raise ProviderError(response.status_code, response.text[:200])
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise ProviderError(response.status_code, f"unexpected response shape: {exc}")
        raise ProviderTimeout(attempts, last_error)
