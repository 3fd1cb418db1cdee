"""Session engine: scheduling, routing, loops, branches, grading, controls."""

import pytest

from helpers import (
    counseling_inputs,
    counseling_stub_script,
    drive,
    events_of,
    quiz_inputs,
    quiz_stub_script,
    team_debate_fixtures,
)
from learnflow import engine
from learnflow.errors import (
    ControlNotApplicable,
    IllegalToggle,
    InternalBlocked,
    NoPendingInvocation,
    NoResponseInScope,
    NotYourTurn,
    UnboundRuntimePlaceholder,
    WordLimitExceeded,
)
from learnflow.exemplars import exemplar_flows, quiz_drill_doc
from learnflow.gateway import StubProvider
from learnflow.model import BranchStep
from learnflow.parsing import parse_flow_document
from learnflow.runner import run_session


@pytest.fixture(scope="module")
def flows():
    return exemplar_flows()


def mastery_quiz_flow(consecutive_correct: int = 3):
    doc = quiz_drill_doc()
    for step in doc["steps"]:
        if step["no"] == "9":
            step["exit"] = {"consecutive_correct": consecutive_correct}
    return parse_flow_document(doc)


# --- start_session -------------------------------------------------------------


def test_start_session_initial_state(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    assert state.cursor == 0
    assert state.status == engine.RUNNING
    assert state.tallies == {}
    assert state.bindings == {}
    assert len(state.events) == 1  # session_started bookkeeping record
    assert state.events[0].kind == "system"


def test_start_session_rejects_instructor_toggle(flows):
    with pytest.raises(IllegalToggle):
        engine.start_session(flows["team-debate-3v3"], {"instructor": "ai"})


def test_start_session_rejects_toggle_outside_alternatives(flows):
    with pytest.raises(IllegalToggle):
        engine.start_session(flows["quiz-drill"], {"learner-1": "ai"})


def test_team_overrides_resolve_sources(flows):
    overrides = {"team-b-1": "ai", "team-b-2": "ai", "team-b-3": "ai"}
    state = engine.start_session(flows["team-debate-3v3"], overrides, session_id="d")
    assert state.sources["team-b-1"] == "ai"
    assert state.sources["team-a-1"] == "human"


# --- next_action -----------------------------------------------------------------


def test_quiz_step_4_invokes_agent_with_table_text(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    invoke = None
    while invoke is None:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            invoke = action
    assert invoke.agent_id == "tutor"
    assert invoke.step_id == "4"
    assert invoke.prompt_bundle.messages[-1].text == (
        "Generate a multiple-choice question about ecological population control, "
        "without revealing the correct answer"
    )
    assert invoke.prompt_bundle.system_text.startswith("You are a biology professor.")


def test_next_action_blocks_while_awaiting(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            break
    with pytest.raises(InternalBlocked):
        engine.next_action(state)


def test_single_step_flow_delivers_then_completes():
    flow = parse_flow_document(
        {
            "id": "one",
            "title": "One step",
            "objectives": [],
            "roster": [
                {"slot_id": "instructor", "role": "instructor"},
                {"slot_id": "learner-1", "role": "learner"},
            ],
            "agents": [],
            "steps": [
                {"no": "1", "kind": "instruction_learner", "to": ["learner-1"], "text": "Welcome."}
            ],
        }
    )
    state = engine.start_session(flow, session_id="one")
    state, action = engine.next_action(state)
    assert isinstance(action, engine.Deliver)
    state, action = engine.next_action(state)
    assert isinstance(action, engine.Complete)
    assert state.status == engine.COMPLETED
    # Terminal states keep answering Complete.
    _, again = engine.next_action(state)
    assert isinstance(again, engine.Complete)


def test_quiz_moves_to_step_10_after_ten_iterations(flows):
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(), inputs=quiz_inputs(), session_id="q"
    )
    assert state.status == engine.COMPLETED
    tens = events_of(state, "10", "instruction")
    assert len(tens) == 1
    # Everything after the loop is iteration 0 again.
    assert tens[0].iteration == 0


# --- submit_input ---------------------------------------------------------------


def _quiz_at_learner_turn(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    provider = StubProvider(quiz_stub_script())
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            state, _ = engine.apply_agent_response(
                state, action.agent_id, provider.generate(action.prompt_bundle)
            )
        elif isinstance(action, engine.AwaitInput):
            return state, action


def test_learner_answer_routes_to_instructor(flows):
    state, action = _quiz_at_learner_turn(flows)
    assert action.slot_id == "learner-1"
    state, events = engine.submit_input(state, "learner-1", "b) Temperature changes")
    event = events[0]
    assert event.kind == "user_input"
    assert event.sender == "learner-1"
    assert event.step_id == "6"
    assert "instructor" in event.recipients
    assert event.content == "b) Temperature changes"
    assert state.bindings["input:6"] == "b) Temperature changes"


def test_wrong_slot_is_not_your_turn(flows):
    state, _ = _quiz_at_learner_turn(flows)
    with pytest.raises(NotYourTurn):
        engine.submit_input(state, "instructor", "hello")


def test_word_limit_boundary(flows):
    overrides, _, _ = team_debate_fixtures()
    state = engine.start_session(flows["team-debate-3v3"], overrides, session_id="d")
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.AwaitInput):
            break
    assert action.max_words == 120
    with pytest.raises(WordLimitExceeded) as err:
        engine.submit_input(state, action.slot_id, "word " * 121)
    assert (err.value.limit, err.value.actual) == (120, 121)
    # Rejected input leaves no trace; the same turn accepts 120 words.
    state2, events = engine.submit_input(state, action.slot_id, ("word " * 120).strip())
    assert len(events) == 1
    assert len(state.events) + 1 == len(state2.events)


# --- apply_agent_response --------------------------------------------------------


def test_response_visibility_includes_learner_and_instructor(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    provider = StubProvider(quiz_stub_script())
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            state, _ = engine.apply_agent_response(
                state, action.agent_id, provider.generate(action.prompt_bundle)
            )
        elif isinstance(action, engine.Deliver) and action.event.kind == "agent_response":
            event = action.event
            break
    assert event.step_id == "5"
    assert set(event.visibility) >= {"learner-1", "instructor"}


def test_apply_requires_matching_agent(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    with pytest.raises(NoPendingInvocation):
        engine.apply_agent_response(state, "tutor", "hello")


def test_grading_updates_tally_and_streak():
    flow = mastery_quiz_flow(consecutive_correct=5)
    state = engine.start_session(flow, session_id="g")
    provider = StubProvider(quiz_stub_script(["CORRECT, well reasoned."] * 10))
    answered = 0
    while answered < 1:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            reply = provider.generate(action.prompt_bundle)
            state, _ = engine.apply_agent_response(state, action.agent_id, reply)
        elif isinstance(action, engine.AwaitInput):
            state, _ = engine.submit_input(state, "learner-1", "c) Food competition")
            answered += 1
    # Drive to the graded feedback.
    while state.tallies.get("learner-1") is None:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            reply = provider.generate(action.prompt_bundle)
            state, _ = engine.apply_agent_response(state, action.agent_id, reply)
    tally = state.tallies["learner-1"]
    assert (tally.correct, tally.total_graded) == (1, 1)
    assert state.frame().correct_streak == 1
    assert state.bindings["score"] == "1 out of 1"


def test_score_binding_reads_seven_out_of_ten(flows):
    grades = ["CORRECT."] * 7 + ["INCORRECT."] * 3
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(grades), inputs=quiz_inputs(), session_id="q"
    )
    assert state.bindings["score"] == "7 out of 10"
    final_instruction = events_of(state, "10", "instruction")[0]
    assert "7 out of 10" in final_instruction.content


def test_ungraded_reply_warns_and_leaves_tallies(flows):
    grades = ["Hmm, interesting answer."] + ["CORRECT."] * 9
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(grades), inputs=quiz_inputs(), session_id="q"
    )
    warnings = [
        e for e in state.events
        if (engine.system_payload(e) or {}).get("type") == "ungraded_response"
    ]
    assert len(warnings) == 1
    assert state.tallies["learner-1"].total_graded == 9


# --- evaluate_branch -------------------------------------------------------------


BRANCH = BranchStep(id="8", contains_token="yes", goto="10")


def test_branch_takes_on_token():
    assert engine.evaluate_branch(BRANCH, "Yes, the goal was achieved.") == "10"


def test_branch_continues_without_token():
    assert engine.evaluate_branch(BRANCH, "No, not yet.") is None


def test_branch_empty_response_continues():
    assert engine.evaluate_branch(BRANCH, "") is None


def test_branch_requires_a_response():
    with pytest.raises(NoResponseInScope):
        engine.evaluate_branch(BRANCH, None)


# --- interpolate -----------------------------------------------------------------


def test_interpolate_learner_input():
    out = engine.interpolate(
        "Student answered: {{input:6}}. Give short feedback.",
        {"input:6": "b) Temperature changes"},
    )
    assert out == "Student answered: b) Temperature changes. Give short feedback."


def test_interpolate_identity():
    assert engine.interpolate("No placeholders here.", {}) == "No placeholders here."


def test_interpolate_unbound():
    with pytest.raises(UnboundRuntimePlaceholder):
        engine.interpolate("{{input:99}}", {})


# --- loops and branches ------------------------------------------------------------


def test_quiz_loop_runs_exactly_ten_times(flows):
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(), inputs=quiz_inputs(), session_id="q"
    )
    questions = events_of(state, "5", "agent_response")
    assert len(questions) == 10
    assert [e.iteration for e in questions] == list(range(10))


def test_mastery_exits_after_four_iterations():
    # Hand-traced: streak 0,1,2,3 across the four passes; exit at the
    # fourth bottom, then the final feedback pair runs once.
    flow = mastery_quiz_flow(consecutive_correct=3)
    grades = ["INCORRECT, look again.", "CORRECT.", "CORRECT.", "CORRECT."]
    script = []
    for i, grade in enumerate(grades):
        script.append({"response": f"Q{i + 1}?"})
        script.append({"response": grade})
    script.append({"response": "Mastery demonstrated; nice work."})
    state = run_session(
        flow,
        provider=StubProvider(script),
        inputs=quiz_inputs(4),
        session_id="m",
    )
    assert state.status == engine.COMPLETED
    questions = events_of(state, "5", "agent_response")
    assert [e.iteration for e in questions] == [0, 1, 2, 3]
    assert state.tallies["learner-1"].correct == 3
    assert len(events_of(state, "11", "agent_response")) == 1


def test_counseling_branch_exits_on_first_yes(flows):
    state = run_session(
        flows["counseling-simulation"],
        provider=StubProvider(counseling_stub_script(["Yes, the goal was achieved."])),
        inputs=counseling_inputs(1),
        session_id="c",
    )
    replies = events_of(state, "6", "agent_response")
    assert len(replies) == 1
    # The branch target is the next step to emit an event.
    yes_idx = max(
        i for i, e in enumerate(state.events)
        if (engine.system_payload(e) or {}).get("type") == "agent_reply"
        and "Yes" in (engine.system_payload(e) or {}).get("content", "")
    )
    assert state.events[yes_idx + 1].step_id == "10"


def test_counseling_all_no_runs_ten_iterations(flows):
    state = run_session(
        flows["counseling-simulation"],
        provider=StubProvider(counseling_stub_script(["No, not yet."] * 10)),
        inputs=counseling_inputs(10),
        session_id="c",
    )
    assert len(events_of(state, "6", "agent_response")) == 10
    assert len(events_of(state, "11", "agent_response")) == 1


# --- alternatives ------------------------------------------------------------------


def test_alternative_resolution_property(flows):
    overrides, script, inputs = team_debate_fixtures()
    state, awaits, invokes = drive(
        flows["team-debate-3v3"], script=script, inputs=inputs,
        overrides=overrides, session_id="d",
    )
    assert state.status == engine.COMPLETED
    awaited_slots = {a.slot_id for a in awaits}
    assert awaited_slots == {"team-a-1", "team-a-2", "team-a-3"}
    assert all(i.agent_id in ("advocate-b", "judge") for i in invokes)
    # AI turns deliver under the variant's response id, aligned with the turn.
    assert len(events_of(state, "5-2", "agent_response")) == 1


def test_alternative_role_binding(flows):
    overrides, script, inputs = team_debate_fixtures()
    state, _, _ = drive(
        flows["team-debate-3v3"], script=script, inputs=inputs,
        overrides=overrides, session_id="d",
    )
    prompts = events_of(state, "5-2-prompt", "instruction")
    assert prompts and "team-b-1 (team B)" in prompts[0].content


# --- material retrieval into prompts ----------------------------------------------


def test_attached_materials_reach_the_prompt():
    from learnflow.content import ContentStore

    store = ContentStore()
    store.ingest(
        "biology-course-notes",
        "Food competition regulates population density in crowded ecosystems.",
        material_id="biology-course-notes",
    )
    flow = exemplar_flows()["quiz-drill"]
    state = engine.start_session(flow, session_id="mat")
    while True:
        state, action = engine.next_action(state, content_store=store)
        if isinstance(action, engine.InvokeAgent):
            break
    assert action.prompt_bundle.system_text.startswith("You are a biology professor.")
    assert "Food competition regulates population density" in action.prompt_bundle.system_text


def test_missing_store_means_no_retrieved_chunks():
    flow = exemplar_flows()["quiz-drill"]
    state = engine.start_session(flow, session_id="mat2")
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            break
    assert action.prompt_bundle.system_text == "You are a biology professor."


# --- instructor controls --------------------------------------------------------------


def _await_state(flows):
    state, _ = _quiz_at_learner_turn(flows)
    return state


def test_control_advance_records_placeholder(flows):
    state = _await_state(flows)
    state, events = engine.control_advance(state)
    assert events[0].kind == "user_input"
    assert events[0].sender == "instructor"
    assert state.bindings["input:6"] == engine.ADVANCE_PLACEHOLDER
    assert state.status == engine.RUNNING


def test_control_skip_leaves_no_binding(flows):
    state = _await_state(flows)
    state, events = engine.control_skip(state)
    assert (engine.system_payload(events[0]) or {}).get("type") == "step_skipped"
    assert "input:6" not in state.bindings


def test_control_override_substitutes_response(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    while True:
        state, action = engine.next_action(state)
        if isinstance(action, engine.InvokeAgent):
            break
    state, events = engine.control_override(state, "Instructor question instead.")
    payload = engine.system_payload(events[0])
    assert payload["overridden"] is True
    state, action = engine.next_action(state)
    assert isinstance(action, engine.Deliver)
    assert action.event.content == "Instructor question instead."


def test_control_end_stops_everything(flows):
    state = _await_state(flows)
    state, events = engine.control_end(state)
    assert state.status == engine.ENDED_BY_INSTRUCTOR
    assert (engine.system_payload(events[0]) or {}).get("type") == "session_ended"
    with pytest.raises(NotYourTurn):
        engine.submit_input(state, "learner-1", "too late")
    _, action = engine.next_action(state)
    assert isinstance(action, engine.Complete)
    assert action.status == engine.ENDED_BY_INSTRUCTOR


def test_controls_reject_wrong_status(flows):
    state = engine.start_session(flows["quiz-drill"], session_id="q")
    with pytest.raises(ControlNotApplicable):
        engine.control_advance(state)
    with pytest.raises(ControlNotApplicable):
        engine.control_override(state, "x")


# --- cross-cutting properties ----------------------------------------------------------


def test_quiz_run_is_deterministic(flows):
    runs = []
    for _ in range(2):
        state, _, _ = drive(
            flows["quiz-drill"], script=quiz_stub_script(), inputs=quiz_inputs(), session_id="q"
        )
        runs.append(engine.state_snapshot(state))
    assert runs[0] == runs[1]


def test_every_event_reaches_the_instructor(flows):
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(), inputs=quiz_inputs(), session_id="q"
    )
    for event in state.events:
        assert "instructor" in event.recipients
        assert "instructor" in event.visibility


def test_no_event_content_contains_placeholder_syntax(flows):
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(), inputs=quiz_inputs(), session_id="q"
    )
    assert all("{{" not in e.content for e in state.events)


def test_tally_consistency(flows):
    grades = ["CORRECT."] * 4 + ["INCORRECT."] * 6
    state, _, _ = drive(
        flows["quiz-drill"], script=quiz_stub_script(grades), inputs=quiz_inputs(), session_id="q"
    )
    tally = state.tallies["learner-1"]
    assert tally.correct <= tally.total_graded == 10
