"""Prompt assembly, the scripted stub, and the HTTP provider."""

import http.server
import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnflow.errors import BudgetTooSmall, ProviderError, ProviderTimeout, ScriptExhausted
from learnflow.gateway import HttpProvider, PromptBundle, BundleMessage, StubProvider, assemble_prompt
from learnflow.model import AgentConfig, Event


def make_event(seq, sender, recipients, content, kind="user_input"):
    return Event(
        seq=seq, step_id=str(seq), iteration=0, kind=kind, sender=sender,
        recipients=recipients, visibility=recipients, content=content, ts="t",
    )


AGENT = AgentConfig(agent_id="tutor", persona_prompt="You are a biology professor.")


def test_persona_prefixes_system_text_and_instruction_is_last():
    bundle = assemble_prompt(
        AGENT,
        history=[],
        instruction=(
            "Generate a multiple-choice question about ecological population control, "
            "without revealing the correct answer"
        ),
        retrieved=["Population density depends on food competition."],
    )
    assert bundle.system_text.startswith("You are a biology professor.")
    assert bundle.messages[-1].text.startswith("Generate a multiple-choice question")


def test_minimal_bundle():
    bundle = assemble_prompt(AGENT, history=[], instruction="Say hi.", retrieved=[])
    assert bundle.system_text == "You are a biology professor."
    assert len(bundle.messages) == 1


def test_history_filtered_to_agent_addressed_events():
    history = [
        make_event(1, "instructor", ["tutor", "instructor"], "For the agent."),
        make_event(2, "learner-1", ["instructor"], "Instructor-only note."),
        make_event(3, "tutor", ["learner-1", "instructor"], "Earlier reply.", kind="agent_response"),
    ]
    bundle = assemble_prompt(AGENT, history=history, instruction="Next.", retrieved=[])
    texts = [m.text for m in bundle.messages]
    assert "Instructor-only note." not in texts
    assert texts[:2] == ["For the agent.", "Earlier reply."]
    assert bundle.messages[1].origin == "agent"


def test_budget_drops_oldest_history_first():
    # Independent word accounting: persona 6 words + instruction 2 words,
    # plus 50 ten-word turns = 512 words; a 100-word budget keeps the
    # newest 9 turns (92 + 10 > 100 would overflow).
    agent = AgentConfig(agent_id="tutor", persona_prompt="persona " * 6, context_budget_words=100)
    history = [
        make_event(i + 1, "learner-1", ["tutor"], f"turn-{i} " + "word " * 9)
        for i in range(50)
    ]
    fixed = len(agent.persona_prompt.split()) + 2
    expected_survivors = (100 - fixed) // 10
    bundle = assemble_prompt(agent, history=history, instruction="two words", retrieved=[])
    assert bundle.word_count() <= 100
    kept = [m.text for m in bundle.messages[:-1]]
    assert len(kept) == expected_survivors
    assert kept[-1].startswith("turn-49")
    assert kept[0].startswith(f"turn-{50 - expected_survivors}")


def test_budget_too_small():
    agent = AgentConfig(agent_id="tutor", persona_prompt="word " * 50, context_budget_words=40)
    with pytest.raises(BudgetTooSmall):
        assemble_prompt(agent, history=[], instruction="hello there", retrieved=[])


@settings(max_examples=60, deadline=None)
@given(
    budget=st.integers(min_value=20, max_value=120),
    turns=st.lists(st.integers(min_value=1, max_value=30), max_size=20),
)
def test_budget_safety_property(budget, turns):
    agent = AgentConfig(agent_id="tutor", persona_prompt="short persona", context_budget_words=budget)
    history = [
        make_event(i + 1, "learner-1", ["tutor"], "w " * n) for i, n in enumerate(turns)
    ]
    bundle = assemble_prompt(agent, history=history, instruction="go on", retrieved=["extra words here"])
    assert bundle.word_count() <= budget
    assert bundle.system_text.startswith("short persona")
    assert bundle.messages[-1].text == "go on"


# --- stub provider ---------------------------------------------------------------


def _bundle(final_text: str) -> PromptBundle:
    return PromptBundle(system_text="", messages=[BundleMessage(origin="instructor", text=final_text)])


def test_stub_queue_order():
    stub = StubProvider([{"response": "Q1 text"}, {"response": "Feedback text"}])
    assert stub.generate(_bundle("anything")) == "Q1 text"
    assert stub.generate(_bundle("anything")) == "Feedback text"
    assert stub.cursor == 2


def test_stub_match_takes_priority():
    stub = StubProvider(
        [
            {"response": "fallback one"},
            {"match": "Was the goal", "response": "No, not yet."},
            {"response": "fallback two"},
        ]
    )
    assert stub.generate(_bundle("Was the goal achieved?")) == "No, not yet."
    assert stub.generate(_bundle("Was the goal achieved?")) == "fallback one"
    assert stub.generate(_bundle("unrelated")) == "fallback two"


def test_stub_exhausted():
    stub = StubProvider([])
    with pytest.raises(ScriptExhausted):
        stub.generate(_bundle("hello"))


def test_stub_determinism():
    entries = [{"match": "b", "response": "B"}, {"response": "A"}]
    seq1 = []
    seq2 = []
    for out in (seq1, seq2):
        stub = StubProvider([dict(e) for e in entries])
        out.append(stub.generate(_bundle("a")))
        out.append(stub.generate(_bundle("b")))
    assert seq1 == seq2 == ["A", "B"]


# --- http provider ---------------------------------------------------------------


class _Handler(http.server.BaseHTTPRequestHandler):
    requests: list[dict] = []
    status = 200

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests.append(
            {"path": self.path, "body": body, "auth": self.headers.get("Authorization"),
             "invocation": self.headers.get("X-Invocation-Id")}
        )
        payload = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": "stubbed reply"}}]}
        ).encode()
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    _Handler.requests = []
    _Handler.status = 200
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_http_provider_wire_shape(http_server, monkeypatch):
    monkeypatch.setenv("LEARNFLOW_API_KEY", "secret-key")
    provider = HttpProvider(http_server, "test-model")
    bundle = PromptBundle(
        system_text="You are a biology professor.",
        messages=[
            BundleMessage(origin="instructor", text="Set the stage."),
            BundleMessage(origin="learner", text="My answer.", slot="learner-1"),
            BundleMessage(origin="agent", text="Earlier reply."),
            BundleMessage(origin="instructor", text="Now respond."),
        ],
        params={"temperature": 0.2},
    )
    out = provider.generate(bundle, invocation_id="abc:1")
    assert out == "stubbed reply"
    req = _Handler.requests[0]
    assert req["path"] == "/chat/completions"
    assert req["auth"] == "Bearer secret-key"
    assert req["invocation"] == "abc:1"
    assert req["body"]["model"] == "test-model"
    assert req["body"]["temperature"] == 0.2
    roles = [m["role"] for m in req["body"]["messages"]]
    assert roles == ["system", "user", "user", "assistant", "user"]
    assert req["body"]["messages"][1]["content"] == "INSTRUCTOR: Set the stage."
    assert req["body"]["messages"][2]["content"] == "LEARNER learner-1: My answer."


def test_http_provider_error_status(http_server):
    _Handler.status = 500
    provider = HttpProvider(http_server, "m")
    with pytest.raises(ProviderError) as err:
        provider.generate(_bundle("x"))
    assert err.value.status == 500


def test_http_provider_times_out_after_three_attempts():
    sleeps: list[float] = []
    provider = HttpProvider(
        "http://127.0.0.1:9",  # discard port: connection refused
        "m",
        timeout=0.2,
        sleeper=sleeps.append,
    )
    with pytest.raises(ProviderTimeout) as err:
        provider.generate(_bundle("x"))
    assert err.value.attempts == 3
    assert sleeps == [0.5, 1.0]
