"""Shared fixtures: exemplar scripts and deterministic run helpers."""

from __future__ import annotations

from learnflow import engine
from learnflow.gateway import StubProvider


def quiz_stub_script(grades: list[str] | None = None) -> list[dict]:
    """21 entries: 10 questions, 10 graded feedbacks, 1 final summary."""
    if grades is None:
        grades = ["INCORRECT. The correct answer is c) Food competition."] * 10
    assert len(grades) == 10
    script: list[dict] = []
    for i, grade in enumerate(grades):
        script.append(
            {"response": f"Q{i + 1}: Which factor regulates population density? a) b) c) d)"}
        )
        script.append({"response": grade})
    script.append({"response": "Great job completing the quiz! Summary follows."})
    return script


def quiz_inputs(n: int = 10) -> list[dict]:
    return [{"slot": "learner-1", "content": "b) Temperature changes"} for _ in range(n)]


def counseling_stub_script(goal_answers: list[str]) -> list[dict]:
    """One situation entry, match-keyed goal checks, per-pass replies, summary."""
    return (
        [{"response": "Situation: a student shows a drop in grades. Goals: establish trust."}]
        + [{"match": "Was the goal", "response": answer} for answer in goal_answers]
        + [{"response": "Um... it is hard to explain."}] * len(goal_answers)
        + [{"match": "Summarize", "response": "Rapport was built; goals partially achieved."}]
    )


def counseling_inputs(passes: int) -> list[dict]:
    return [{"slot": "learner-1", "content": "Take your time, this is a safe space."} for _ in range(passes)] + [
        {"slot": "instructor", "content": "Good active listening."}
    ]


TEAM_A_TURNS = ["team-a-1", "team-a-2", "team-a-3", "team-a-1", "team-a-2", "team-a-3"]


def team_debate_fixtures() -> tuple[dict, list[dict], list[dict]]:
    overrides = {"team-b-1": "ai", "team-b-2": "ai", "team-b-3": "ai"}
    script = [{"response": f"Position B argument {i + 1}, grounded in evidence."} for i in range(6)]
    script.append({"response": "Both teams argued clearly; per-participant feedback follows."})
    inputs = [
        {"slot": slot, "content": "Our side holds that the motion stands on evidence and logic."}
        for slot in TEAM_A_TURNS
    ]
    return overrides, script, inputs


def debate_fixtures() -> tuple[list[dict], list[dict]]:
    script = (
        [{"response": "Debate Topic: Should automated decisions carry accountability?"}]
        + [{"response": "A considered counterargument."}] * 5
        + [{"response": "Summary and evaluation of the debate."}]
    )
    inputs = [{"slot": "learner-1", "content": "Accountability must rest with people."}] * 5 + [
        {"slot": "instructor", "content": "Strong reasoning throughout."}
    ]
    return script, inputs


def research_fixtures() -> tuple[list[dict], list[dict]]:
    script = [
        {"response": "The submitted materials have been analyzed."},
        {"response": "The submitted papers have been analyzed."},
    ]
    inputs = [
        {"slot": "learner-1", "content": "Findings about energy grids."},
        {"slot": "learner-2", "content": "Findings about smart agriculture."},
        {"slot": "learner-1", "content": "My position paper."},
        {"slot": "learner-2", "content": "My position paper too."},
        {"slot": "learner-1", "content": "Final paper."},
        {"slot": "learner-2", "content": "Final paper as well."},
        {"slot": "instructor", "content": "Feedback on both papers."},
    ]
    return script, inputs


def exemplar_run_fixtures(name: str) -> tuple[list[dict], list[dict], dict | None]:
    """(stub script, inputs, roster overrides) driving each exemplar to completion."""
    if name == "quiz-drill":
        return quiz_stub_script(), quiz_inputs(), None
    if name == "debate":
        script, inputs = debate_fixtures()
        return script, inputs, None
    if name == "counseling-simulation":
        return (
            counseling_stub_script(["No, not yet."] * 3 + ["Yes, the goal was achieved."]),
            counseling_inputs(4),
            None,
        )
    if name == "collaborative-research":
        script, inputs = research_fixtures()
        return script, inputs, None
    if name == "team-debate-3v3":
        overrides, script, inputs = team_debate_fixtures()
        return script, inputs, overrides
    raise KeyError(name)


def drive(flow, *, script, inputs, overrides=None, session_id="t", content_store=None):
    """Run a whole session collecting the actions the engine requested."""
    provider = StubProvider(script)
    queue = list(inputs)
    awaits: list[engine.AwaitInput] = []
    invokes: list[engine.InvokeAgent] = []
    state = engine.start_session(flow, overrides, session_id=session_id)
    while True:
        state, action = engine.next_action(state, content_store=content_store)
        if isinstance(action, engine.Deliver):
            continue
        if isinstance(action, engine.InvokeAgent):
            invokes.append(action)
            text = provider.generate(action.prompt_bundle)
            state, _ = engine.apply_agent_response(state, action.agent_id, text)
            continue
        if isinstance(action, engine.AwaitInput):
            awaits.append(action)
            entry = queue.pop(0)
            state, _ = engine.submit_input(state, entry["slot"], entry["content"])
            continue
        return state, awaits, invokes


def events_of(state, step_id: str, kind: str | None = None):
    return [
        e
        for e in state.events
        if e.step_id == step_id and (kind is None or e.kind == kind)
    ]
