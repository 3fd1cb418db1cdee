"""Bundled exemplar flows: drill, debate, and collaborate patterns.

Five ready-to-run flow documents ship with the package; `learnflow
examples` exports them. ``drill_template`` is the reusable, placeholder-
parameterized form of the quiz drill.
"""

from __future__ import annotations

from .model import FlowDefinition
from .parsing import parse_flow_document


def quiz_drill_doc() -> dict:
    """Ten-round multiple-choice drill with graded feedback and a summary."""
    return {
        "id": "quiz-drill",
        "title": "Biology quiz drill",
        "objectives": [
            "Reinforce understanding of ecological population control through repeated practice.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "learner-1", "role": "learner"},
            {"slot_id": "tutor", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "tutor", "material_refs": ["biology-course-notes"]},
        ],
        "steps": [
            {"no": "1", "kind": "agent_prompt", "agent": "tutor",
             "text": "You are a biology professor."},
            {"no": "2", "kind": "reference_materials", "agent": "tutor",
             "materials": ["biology-course-notes"], "audience": ["learner-1", "tutor"]},
            {"no": "3", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "You will be given 10 multiple-choice questions in biology. Find the correct answers."},
            {"no": "4", "kind": "instruction_ai", "agent": "tutor",
             "text": "Generate a multiple-choice question about ecological population control, without revealing the correct answer"},
            {"no": "5", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
            {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "7", "kind": "instruction_ai", "agent": "tutor", "grade": True,
             "text": "Student answered: {{input:6}}. Give short feedback. Begin your reply with CORRECT or INCORRECT."},
            {"no": "8", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
            {"no": "9", "kind": "repetition", "range": ["4", "8"], "count": 10},
            {"no": "10", "kind": "instruction_ai", "agent": "tutor",
             "text": "Give the learner final feedback for a 10-question quiz activity. Their result was {{score}}."},
            {"no": "11", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
        ],
    }


def drill_template_doc() -> dict:
    """Quiz drill with the topic and round count left as template placeholders."""
    return {
        "id": "drill-template",
        "title": "Reusable quiz drill",
        "objectives": [
            "Reinforce understanding of {{topic}} through repeated practice.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "learner-1", "role": "learner"},
            {"slot_id": "tutor", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "tutor", "material_refs": ["biology-course-notes"]},
        ],
        "steps": [
            {"no": "1", "kind": "agent_prompt", "agent": "tutor",
             "text": "You are a biology professor."},
            {"no": "2", "kind": "reference_materials", "agent": "tutor",
             "materials": ["biology-course-notes"], "audience": ["learner-1", "tutor"]},
            {"no": "3", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "You will be given {{n_questions}} multiple-choice questions in biology. Find the correct answers."},
            {"no": "4", "kind": "instruction_ai", "agent": "tutor",
             "text": "Generate a multiple-choice question about {{topic}}, without revealing the correct answer"},
            {"no": "5", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
            {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "7", "kind": "instruction_ai", "agent": "tutor", "grade": True,
             "text": "Student answered: {{input:6}}. Give short feedback. Begin your reply with CORRECT or INCORRECT."},
            {"no": "8", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
            {"no": "9", "kind": "repetition", "range": ["4", "8"], "count": "{{n_questions}}"},
            {"no": "10", "kind": "instruction_ai", "agent": "tutor",
             "text": "Give the learner final feedback for a {{n_questions}}-question quiz activity. Their result was {{score}}."},
            {"no": "11", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
        ],
        "templates": {
            "topic": "Subject area the generated questions should cover",
            "n_questions": "How many practice rounds to run",
        },
    }


def debate_doc() -> dict:
    """Five-round learner-versus-agent debate with a final evaluation."""
    return {
        "id": "debate",
        "title": "Technology sociology debate",
        "objectives": [
            "Practice building and defending arguments in a technology sociology course.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "learner-1", "role": "learner"},
            {"slot_id": "debater", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "debater"},
        ],
        "steps": [
            {"no": "1", "kind": "agent_prompt", "agent": "debater",
             "text": "You are a technology sociology expert."},
            {"no": "2", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "You will participate in a debate as part of a technology sociology course. Present your arguments on the given topic, and the AI will respond to your points during the discussion."},
            {"no": "3", "kind": "instruction_ai", "agent": "debater",
             "text": "We will hold a debate session for a technology sociology course. Suggest a debate topic."},
            {"no": "4", "kind": "ai_response", "agent": "debater", "visibility": ["instructor"]},
            {"no": "5", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "Please provide your argument or counterargument."},
            {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "7", "kind": "instruction_ai", "agent": "debater",
             "text": "Please respond to the following learner argument from a technology sociology expert's perspective: {{input:6}}"},
            {"no": "8", "kind": "ai_response", "agent": "debater", "visibility": ["learner-1"]},
            {"no": "9", "kind": "repetition", "range": ["5", "8"], "count": 5},
            {"no": "10", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "You have completed 5 rounds of debate. Please summarize each part's argument and present your final opinion."},
            {"no": "11", "kind": "instruction_ai", "agent": "debater",
             "text": "Summarize the key points discussed in the debate and provide your evaluation or reflection on the arguments presented."},
            {"no": "12", "kind": "ai_response", "agent": "debater", "visibility": ["learner-1"]},
            {"no": "13", "kind": "user_input", "from": "instructor", "to": ["learner-1"]},
        ],
    }


def counseling_doc() -> dict:
    """Counseling roleplay: loop until the goal check answers yes, then debrief."""
    return {
        "id": "counseling-simulation",
        "title": "Virtual counseling simulation",
        "objectives": [
            "Train pre-service teachers to run a counseling conversation with an at-risk youth.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "learner-1", "role": "learner"},
            {"slot_id": "simulated-student", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "simulated-student"},
        ],
        "steps": [
            {"no": "1", "kind": "instruction_learner", "to": ["learner-1"],
             "text": "We will conduct a virtual counseling session with an at-risk youth as part of pre-service teacher training. These are the situation and consulting goals of today's session. As a counsellor, please carry out the session with the student."},
            {"no": "2", "kind": "instruction_ai", "agent": "simulated-student",
             "text": "We will conduct a virtual counseling session with an at-risk youth as part of pre-service teacher training. Please provide a situation and counseling goals for this session."},
            {"no": "3", "kind": "ai_response", "agent": "simulated-student", "visibility": ["learner-1"]},
            {"no": "4", "kind": "agent_prompt", "agent": "simulated-student",
             "text": "Please take on the role of an adolescent who is experiencing difficulties and is seeking counseling and support."},
            {"no": "5", "kind": "user_input", "from": "learner-1", "to": ["simulated-student"]},
            {"no": "6", "kind": "ai_response", "agent": "simulated-student", "visibility": ["learner-1"]},
            {"no": "7", "kind": "instruction_ai", "agent": "simulated-student",
             "text": "Was the goal of the counseling session achieved? Please answer with yes or no."},
            {"no": "8", "kind": "branch", "on": "last_agent_response",
             "contains_token": "yes", "goto": "10"},
            {"no": "9", "kind": "repetition", "range": ["5", "8"], "count": 10},
            {"no": "10", "kind": "instruction_ai", "agent": "simulated-student",
             "text": "Summarize and evaluate the session."},
            {"no": "11", "kind": "ai_response", "agent": "simulated-student", "visibility": ["learner-1"]},
            {"no": "12", "kind": "user_input", "from": "instructor", "to": ["learner-1"]},
        ],
    }


def collaborative_research_doc() -> dict:
    """Networked research project: gather, synthesize, argue, finalize."""
    learners = ["learner-1", "learner-2"]
    return {
        "id": "collaborative-research",
        "title": "Collaborative research project",
        "objectives": [
            "Explore diverse information sources and co-construct a position on AI and sustainable innovation.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "learner-1", "role": "learner"},
            {"slot_id": "learner-2", "role": "learner"},
            {"slot_id": "research-assistant", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "research-assistant",
             "persona_prompt": "You facilitate a collaborative research project on AI and sustainable innovation. Summarize, compare, and organize learner submissions."},
        ],
        "steps": [
            {"no": "1", "kind": "instruction_learner", "to": learners,
             "text": "Topic: AI and Sustainable Innovation. Explore diverse information sources, such as academic articles, news reports, and policy briefs, and submit your findings through the platform."},
            {"no": "2-1", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "2-2", "kind": "user_input", "from": "learner-2", "to": ["instructor"]},
            {"no": "3", "kind": "instruction_ai", "agent": "research-assistant",
             "text": "Summarize, compare, and organize the collected materials. Materials: {{input:2-1}} {{input:2-2}}"},
            {"no": "4", "kind": "ai_response", "agent": "research-assistant", "visibility": learners},
            {"no": "5", "kind": "instruction_learner", "to": learners,
             "text": "Review the synthesized summary provided by the assistant. Based on this information, develop and submit your individual argument or position on the topic."},
            {"no": "6-1", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "6-2", "kind": "user_input", "from": "learner-2", "to": ["instructor"]},
            {"no": "7", "kind": "instruction_ai", "agent": "research-assistant",
             "text": "Compare and synthesize the individual papers submitted by learners. Highlight key similarities and differences in their arguments. Papers: {{input:6-1}} {{input:6-2}}"},
            {"no": "8", "kind": "ai_response", "agent": "research-assistant", "visibility": learners},
            {"no": "9", "kind": "instruction_learner", "to": learners,
             "text": "Review the comparative summary of the submitted papers. Reflect on the feedback and finalize your argument or perspective accordingly."},
            {"no": "10-1", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
            {"no": "10-2", "kind": "user_input", "from": "learner-2", "to": ["instructor"]},
            {"no": "11", "kind": "user_input", "from": "instructor", "to": learners},
        ],
    }


_TURNS = [
    # (announce_no, turn_no, slot, team)
    ("2", "3", "team-a-1", "A"),
    ("4", "5", "team-b-1", "B"),
    ("6", "7", "team-a-2", "A"),
    ("8", "9", "team-b-2", "B"),
    ("10", "10", "team-a-3", "A"),
    ("11", "12", "team-b-3", "B"),
    ("13", "14", "team-a-1", "A"),
    ("15", "16", "team-b-1", "B"),
    ("17", "18", "team-a-2", "A"),
    ("19", "20", "team-b-2", "B"),
    ("21", "22", "team-a-3", "A"),
    ("23", "24", "team-b-3", "B"),
]

_TURN_PROMPTS = {
    "2": "Team A Member 1: Please enter your Opening Statement.",
    "4": "Team B Member 1: Please enter your Opening Statement.",
    "6": "Team A Member 2: Please write your Rebuttal.",
    "8": "Team B Member 2: Please write your Rebuttal.",
    "10": "Team A Member 3: Please pose a Cross-Question to Team B.",
    "11": "Team B Member 3: Please pose a Cross-Question to Team A.",
    "13": "Team A Member 1: Please respond to the question from Team B.",
    "15": "Team B Member 1: Please respond to the question from Team A.",
    "17": "Team A Member 2: Please strengthen your argument based on the Q&A.",
    "19": "Team B Member 2: Please strengthen your argument based on the Q&A.",
    "21": "Team A Member 3: Please summarize your team's position and conclude the debate.",
    "23": "Team B Member 3: Please summarize your team's position and conclude the debate.",
}


def team_debate_doc() -> dict:
    """3-on-3 debate where any speaking slot can be toggled human or AI."""
    debaters = ["team-a-1", "team-a-2", "team-a-3", "team-b-1", "team-b-2", "team-b-3"]
    everyone = debaters + ["advocate-a", "advocate-b", "judge"]
    steps: list[dict] = [
        {"no": "1", "kind": "instruction_learner", "to": everyone,
         "text": "We will conduct a 3-on-3 debate on the given topic. Teams will take either Position A or Position B. Each team member should contribute within a 120-word limit according to their assigned role."},
    ]
    for announce_no, turn_no, slot, team in _TURNS:
        advocate = "advocate-a" if team == "A" else "advocate-b"
        steps.append(
            {"no": announce_no, "kind": "instruction_learner", "to": everyone,
             "text": _TURN_PROMPTS[announce_no]}
        )
        steps.append(
            {
                "no": f"turn-{turn_no}",
                "kind": "alternative",
                "slot": slot,
                "human_variant": {
                    "no": f"{turn_no}-1", "kind": "user_input",
                    "from": slot, "to": everyone, "max_words": 120,
                },
                "ai_variant": [
                    {"no": f"{turn_no}-2-prompt", "kind": "instruction_ai", "agent": advocate,
                     "text": "Generate an argument for the assigned role: {{role}}."},
                    {"no": f"{turn_no}-2", "kind": "ai_response", "agent": advocate,
                     "visibility": "all"},
                ],
            }
        )
    steps.append(
        {"no": "25", "kind": "instruction_ai", "agent": "judge",
         "text": "Evaluate the debate and provide constructive feedback for each participant based on their assigned roles."}
    )
    steps.append({"no": "26", "kind": "ai_response", "agent": "judge", "visibility": "all"})
    return {
        "id": "team-debate-3v3",
        "title": "3-on-3 team debate with human/AI slots",
        "objectives": [
            "Run a structured five-phase debate where each speaking slot may be a student or an AI stand-in.",
        ],
        "roster": [
            {"slot_id": "instructor", "role": "instructor"},
            {"slot_id": "team-a-1", "role": "learner", "team": "A"},
            {"slot_id": "team-a-2", "role": "learner", "team": "A"},
            {"slot_id": "team-a-3", "role": "learner", "team": "A"},
            {"slot_id": "team-b-1", "role": "learner", "team": "B"},
            {"slot_id": "team-b-2", "role": "learner", "team": "B"},
            {"slot_id": "team-b-3", "role": "learner", "team": "B"},
            {"slot_id": "advocate-a", "role": "ai-agent", "team": "A"},
            {"slot_id": "advocate-b", "role": "ai-agent", "team": "B"},
            {"slot_id": "judge", "role": "ai-agent"},
        ],
        "agents": [
            {"agent_id": "advocate-a",
             "persona_prompt": "You argue Position A in a 3-on-3 debate. Prioritize clear logic, supporting evidence, and persuasive clarity. Keep each statement within 120 words."},
            {"agent_id": "advocate-b",
             "persona_prompt": "You argue Position B in a 3-on-3 debate. Prioritize clear logic, supporting evidence, and persuasive clarity. Keep each statement within 120 words."},
            {"agent_id": "judge",
             "persona_prompt": "You are an impartial debate judge. Weigh logic, evidence, and clarity."},
        ],
        "steps": steps,
    }


EXEMPLAR_DOCS = {
    "quiz-drill": quiz_drill_doc,
    "debate": debate_doc,
    "counseling-simulation": counseling_doc,
    "collaborative-research": collaborative_research_doc,
    "team-debate-3v3": team_debate_doc,
}


def exemplar_flows() -> dict[str, FlowDefinition]:
    return {name: parse_flow_document(build()) for name, build in EXEMPLAR_DOCS.items()}


def drill_template() -> FlowDefinition:
    return parse_flow_document(drill_template_doc())
