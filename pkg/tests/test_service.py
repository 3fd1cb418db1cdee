"""HTTP service contract: auth, status codes, feeds, controls, idempotency."""

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from helpers import quiz_inputs, quiz_stub_script, team_debate_fixtures
from learnflow.exemplars import EXEMPLAR_DOCS
from learnflow.gateway import StubProvider
from learnflow.service import create_app


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path, provider=StubProvider(quiz_stub_script()))
    with TestClient(app) as c:
        yield c


def auth(token):
    return {"Authorization": f"Bearer {token}"}


def make_session(client, doc, overrides=None):
    assert client.post("/v1/flows", json=doc).status_code in (201, 409)
    response = client.post(
        "/v1/sessions", json={"flow_id": doc["id"], "roster_overrides": overrides or {}}
    )
    assert response.status_code == 201, response.text
    return response.json()


def run_quiz(client, session):
    token = session["tokens"]["learner-1"]
    for entry in quiz_inputs():
        response = client.post(
            f"/v1/sessions/{session['session_id']}/input",
            json={"content": entry["content"]},
            headers=auth(token),
        )
        assert response.status_code == 200, response.text
    return token


# --- flows -----------------------------------------------------------------------


def test_create_flow_roundtrip(client):
    doc = EXEMPLAR_DOCS["quiz-drill"]()
    response = client.post("/v1/flows", json=doc)
    assert response.status_code == 201
    assert response.json()["flow_id"] == "quiz-drill"
    assert response.json()["report"]["ok"] is True
    fetched = client.get("/v1/flows/quiz-drill")
    assert fetched.status_code == 200
    assert fetched.json()["steps"][0]["no"] == "1"


def test_create_flow_validation_failure_carries_diagnostics(client):
    doc = EXEMPLAR_DOCS["quiz-drill"]()
    doc["id"] = "broken"
    for step in doc["steps"]:
        if step["kind"] == "repetition":
            step["range"] = ["8", "4"]
    response = client.post("/v1/flows", json=doc)
    assert response.status_code == 422
    body = response.json()
    assert body["code"] == "ValidationFailed"
    assert any(d["code"] == "ReversedRange" for d in body["details"]["diagnostics"])


def test_duplicate_flow_conflicts(client):
    doc = EXEMPLAR_DOCS["quiz-drill"]()
    assert client.post("/v1/flows", json=doc).status_code == 201
    assert client.post("/v1/flows", json=doc).status_code == 409


def test_malformed_flow_is_422(client):
    assert client.post("/v1/flows", json={"id": "x"}).status_code == 422


def test_unknown_flow_404(client):
    assert client.get("/v1/flows/ghost").status_code == 404
    assert client.post("/v1/sessions", json={"flow_id": "ghost"}).status_code == 404


# --- sessions ---------------------------------------------------------------------


def test_session_tokens_only_for_humans(tmp_path):
    overrides, script, _ = team_debate_fixtures()
    app = create_app(tmp_path, provider=StubProvider(script))
    with TestClient(app) as client:
        session = make_session(client, EXEMPLAR_DOCS["team-debate-3v3"](), overrides)
        tokens = session["tokens"]
        assert set(tokens) == {"instructor", "team-a-1", "team-a-2", "team-a-3"}
        assert all(len(t) >= 22 for t in tokens.values())  # >= 128 bits entropy


def test_illegal_toggle_is_422(client):
    doc = EXEMPLAR_DOCS["team-debate-3v3"]()
    client.post("/v1/flows", json=doc)
    response = client.post(
        "/v1/sessions", json={"flow_id": doc["id"], "roster_overrides": {"instructor": "ai"}}
    )
    assert response.status_code == 422
    assert response.json()["code"] == "IllegalToggle"


def test_input_happy_path_and_turn_errors(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    learner = session["tokens"]["learner-1"]
    instructor = session["tokens"]["instructor"]

    response = client.post(
        f"/v1/sessions/{sid}/input", json={"content": "b) Temperature changes"}, headers=auth(learner)
    )
    assert response.status_code == 200
    assert isinstance(response.json()["seq"], int)

    response = client.post(
        f"/v1/sessions/{sid}/input", json={"content": "jumping in"}, headers=auth(instructor)
    )
    assert response.status_code == 409
    assert response.json()["code"] == "NotYourTurn"


def test_word_limit_maps_to_422_with_counts(tmp_path):
    overrides, script, _ = team_debate_fixtures()
    app = create_app(tmp_path, provider=StubProvider(script))
    with TestClient(app) as client:
        session = make_session(client, EXEMPLAR_DOCS["team-debate-3v3"](), overrides)
        token = session["tokens"]["team-a-1"]
        response = client.post(
            f"/v1/sessions/{session['session_id']}/input",
            json={"content": "word " * 121},
            headers=auth(token),
        )
        assert response.status_code == 422
        assert response.json()["details"] == {"limit": 120, "actual": 121}


def test_auth_failures(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    assert client.get(f"/v1/sessions/{sid}/events").status_code == 401
    assert (
        client.get(f"/v1/sessions/{sid}/events", headers=auth("forged-token")).status_code == 401
    )
    assert client.get("/v1/sessions/ghost/events", headers=auth("x")).status_code == 404


def test_state_view_reports_awaited_turn(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    view = client.get(f"/v1/sessions/{sid}/state", headers=auth(session["tokens"]["learner-1"]))
    assert view.status_code == 200
    body = view.json()
    assert body["status"] == "awaiting_input"
    assert body["awaiting"]["slot_id"] == "learner-1"
    assert body["your_turn"] is True
    instructor_view = client.get(
        f"/v1/sessions/{sid}/state", headers=auth(session["tokens"]["instructor"])
    ).json()
    assert instructor_view["your_turn"] is False
    assert "tallies" in instructor_view


# --- feeds ------------------------------------------------------------------------


def test_instructor_sees_everything_learner_sees_subset(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    run_quiz(client, session)
    instructor_events = client.get(
        f"/v1/sessions/{sid}/events", headers=auth(session["tokens"]["instructor"])
    ).json()["events"]
    learner_events = client.get(
        f"/v1/sessions/{sid}/events", headers=auth(session["tokens"]["learner-1"])
    ).json()["events"]
    seqs = [e["seq"] for e in instructor_events]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    assert {e["seq"] for e in learner_events} < {e["seq"] for e in instructor_events}
    assert all("learner-1" in e["visibility"] for e in learner_events)
    # since=last yields nothing further
    last = seqs[-1]
    rest = client.get(
        f"/v1/sessions/{sid}/events?since={last}",
        headers=auth(session["tokens"]["instructor"]),
    ).json()["events"]
    assert rest == []


def test_sse_and_long_poll_agree_on_the_quiz(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    token = run_quiz(client, session)

    polled = client.get(f"/v1/sessions/{sid}/events?since=0", headers=auth(token)).json()["events"]

    streamed = []
    with client.stream("GET", f"/v1/sessions/{sid}/stream", headers=auth(token)) as response:
        assert response.headers["content-type"].startswith("text/event-stream")
        buffer = ""
        for chunk in response.iter_text():
            buffer += chunk
        for frame in buffer.split("\n\n"):
            if frame.startswith("data: ") and frame != "event: end\ndata: {}":
                payload = frame.removeprefix("data: ")
                if payload != "{}":
                    streamed.append(json.loads(payload))
    assert [e["seq"] for e in streamed] == [e["seq"] for e in polled]
    assert streamed == polled


def test_long_poll_waits_for_new_events(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    learner = session["tokens"]["learner-1"]
    baseline = client.get(f"/v1/sessions/{sid}/events", headers=auth(learner)).json()["events"]
    since = baseline[-1]["seq"]

    results = {}

    def poll():
        results["events"] = client.get(
            f"/v1/sessions/{sid}/events?since={since}&wait=5", headers=auth(learner)
        ).json()["events"]

    waiter = threading.Thread(target=poll)
    waiter.start()
    time.sleep(0.2)
    client.post(f"/v1/sessions/{sid}/input", json={"content": "b)"}, headers=auth(learner))
    waiter.join(timeout=5)
    assert results["events"], "long poll returned without the new events"
    assert all(e["seq"] > since for e in results["events"])


# --- controls ---------------------------------------------------------------------


def test_learner_cannot_control(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    response = client.post(
        f"/v1/sessions/{session['session_id']}/control",
        json={"action": "end"},
        headers=auth(session["tokens"]["learner-1"]),
    )
    assert response.status_code == 403


def test_control_end_and_inapplicable_actions(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    instructor = session["tokens"]["instructor"]
    response = client.post(
        f"/v1/sessions/{sid}/control", json={"action": "override_response", "text": "x"},
        headers=auth(instructor),
    )
    assert response.status_code == 409  # awaiting input, not an agent
    response = client.post(
        f"/v1/sessions/{sid}/control", json={"action": "end"}, headers=auth(instructor)
    )
    assert response.status_code == 200
    assert response.json()["status"] == "ended_by_instructor"
    blocked = client.post(
        f"/v1/sessions/{sid}/input", json={"content": "late"},
        headers=auth(session["tokens"]["learner-1"]),
    )
    assert blocked.status_code == 409


def test_override_response_wins_over_slow_provider(tmp_path):
    # The graded-feedback generation sleeps in the stub while the learner's
    # input request is in flight; the instructor overrides it meanwhile and
    # the stale stub reply must be dropped.
    script = quiz_stub_script()
    script[1] = {"response": "slow stub feedback", "delay_ms": 1500}
    app = create_app(tmp_path, provider=StubProvider(script))
    with TestClient(app) as client:
        session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
        sid = session["session_id"]
        instructor = session["tokens"]["instructor"]
        learner = session["tokens"]["learner-1"]

        def answer():
            client.post(
                f"/v1/sessions/{sid}/input", json={"content": "b)"}, headers=auth(learner)
            )

        poster = threading.Thread(target=answer)
        poster.start()
        deadline = time.monotonic() + 5
        response = None
        while time.monotonic() < deadline:
            response = client.post(
                f"/v1/sessions/{sid}/control",
                json={"action": "override_response", "text": "CORRECT, overridden by hand."},
                headers=auth(instructor),
            )
            if response.status_code == 200:
                break
            time.sleep(0.05)
        poster.join(timeout=10)
        assert response is not None and response.status_code == 200
        events = client.get(f"/v1/sessions/{sid}/events", headers=auth(learner)).json()["events"]
        feedback = [e for e in events if e["step_id"] == "8" and e["kind"] == "agent_response"]
        assert len(feedback) == 1
        assert feedback[0]["content"] == "CORRECT, overridden by hand."
        assert not any("slow stub feedback" in e["content"] for e in events)


def test_advance_and_skip(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    instructor = session["tokens"]["instructor"]
    response = client.post(
        f"/v1/sessions/{sid}/control", json={"action": "advance"}, headers=auth(instructor)
    )
    assert response.status_code == 200
    # Next learner turn arrives after the pump; skip it.
    deadline = time.monotonic() + 5
    while time.monotonic() < deadline:
        view = client.get(f"/v1/sessions/{sid}/state", headers=auth(instructor)).json()
        if view["status"] == "awaiting_input":
            break
        time.sleep(0.05)
    response = client.post(
        f"/v1/sessions/{sid}/control", json={"action": "skip_step"}, headers=auth(instructor)
    )
    assert response.status_code == 200


def test_unknown_control_action(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    response = client.post(
        f"/v1/sessions/{session['session_id']}/control",
        json={"action": "dance"},
        headers=auth(session["tokens"]["instructor"]),
    )
    assert response.status_code == 422


# --- idempotency ------------------------------------------------------------------


def test_input_idempotent_under_retry(client):
    session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
    sid = session["session_id"]
    learner = session["tokens"]["learner-1"]
    headers = {**auth(learner), "request-id": "attempt-1"}
    first = client.post(f"/v1/sessions/{sid}/input", json={"content": "b)"}, headers=headers)
    second = client.post(f"/v1/sessions/{sid}/input", json={"content": "b)"}, headers=headers)
    assert first.status_code == second.status_code == 200
    assert first.json() == second.json()
    events = client.get(f"/v1/sessions/{sid}/events", headers=auth(learner)).json()["events"]
    answers = [e for e in events if e["step_id"] == "6"]
    assert len(answers) == 1


def test_session_create_idempotent(client):
    doc = EXEMPLAR_DOCS["quiz-drill"]()
    client.post("/v1/flows", json=doc)
    headers = {"request-id": "mk-1"}
    first = client.post("/v1/sessions", json={"flow_id": doc["id"]}, headers=headers)
    second = client.post("/v1/sessions", json={"flow_id": doc["id"]}, headers=headers)
    assert first.json()["session_id"] == second.json()["session_id"]
    assert first.json()["tokens"] == second.json()["tokens"]


# --- visibility fuzz over the wire --------------------------------------------------


def test_no_feed_ever_leaks_outside_visibility(tmp_path):
    # Random valid flows driven end to end through the HTTP surface: every
    # event a token receives must list that token's slot in its visibility.
    from flowgen import generate_flow

    generic = [{"response": text} for text in
               ["CORRECT, that holds.", "no not yet", "yes indeed", "a plain remark"] * 60]
    app = create_app(tmp_path, provider=StubProvider(generic))
    with TestClient(app) as client:
        for seed in (3, 11, 19, 27, 35):
            generated = generate_flow(seed)
            doc = dict(generated.doc)
            doc["id"] = f"wire-{seed}"
            assert client.post("/v1/flows", json=doc).status_code == 201, seed
            session = client.post("/v1/sessions", json={"flow_id": doc["id"]}).json()
            sid = session["session_id"]
            tokens = session["tokens"]

            for _ in range(120):
                view = client.get(f"/v1/sessions/{sid}/state", headers=auth(tokens["instructor"])).json()
                if view["status"] in ("completed", "ended_by_instructor"):
                    break
                assert view["status"] == "awaiting_input", (seed, view["status"])
                slot = view["awaiting"]["slot_id"]
                posted = client.post(
                    f"/v1/sessions/{sid}/input",
                    json={"content": "short reply here"},
                    headers=auth(tokens[slot]),
                )
                assert posted.status_code == 200, (seed, posted.text)
            else:
                pytest.fail(f"seed {seed}: session did not finish")

            for slot, token in tokens.items():
                events = client.get(
                    f"/v1/sessions/{sid}/events", headers=auth(token)
                ).json()["events"]
                assert all(slot in e["visibility"] for e in events), (seed, slot)
                seqs = [e["seq"] for e in events]
                assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


# --- log persistence --------------------------------------------------------------


def test_session_log_written_to_data_dir(tmp_path):
    app = create_app(tmp_path, provider=StubProvider(quiz_stub_script()))
    with TestClient(app) as client:
        session = make_session(client, EXEMPLAR_DOCS["quiz-drill"]())
        run_quiz(client, session)
        path = tmp_path / "sessions" / f"{session['session_id']}.events.jsonl"
        assert path.exists()
        instructor_events = client.get(
            f"/v1/sessions/{session['session_id']}/events",
            headers=auth(session["tokens"]["instructor"]),
        ).json()["events"]
        assert len(path.read_text().splitlines()) == len(instructor_events)
