"""Command-line entry point.

    learnflow validate <flow.json>
    learnflow run <flow.json> --provider stub --script s.json [--inputs i.json]
    learnflow run <flow.json> --provider http --base-url URL --model M
    learnflow replay <events.jsonl> [--as slot]
    learnflow serve --port N --data-dir D [--provider stub --script s.json]
    learnflow examples <dir> [--force]

Exit codes: 0 success, 1 validation/replay failure, 2 unreadable or
malformed files, 3 provider failure or input starvation while running.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import engine
from .content import ContentStore
from .errors import LearnFlowError
from .eventlog import EventLog, flow_from_records, read_records, replay, project
from .exemplars import EXEMPLAR_DOCS
from .gateway import HttpProvider, StubProvider
from .model import Event, FlowDefinition, RepetitionStep
from .parsing import parse_flow
from .runner import run_session
from .validation import validate_flow


def _read_flow(path: str) -> FlowDefinition:
    """Exit 2 on unreadable or malformed flow files."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"cannot read {path}: {exc}", err=True)
        sys.exit(2)
    try:
        return parse_flow(text)
    except LearnFlowError as exc:
        click.echo(f"{exc.code}: {exc}", err=True)
        sys.exit(2)


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        click.echo(f"cannot read {path}: {exc}", err=True)
        sys.exit(2)


def _print_report(report) -> None:
    click.echo("ok" if report.ok else "not ok")
    for diag in report.diagnostics:
        where = f" [step {diag.step_id}]" if diag.step_id else ""
        click.echo(f"  {diag.severity} {diag.code}{where}: {diag.message}")


@click.group()
def main() -> None:
    """Author, validate, and run instructional conversation flows."""


@main.command()
@click.argument("flow_path")
def validate(flow_path: str) -> None:
    """Validate a flow document; exit 0 only when it is runnable."""
    flow = _read_flow(flow_path)
    report = validate_flow(flow)
    _print_report(report)
    sys.exit(0 if report.ok else 1)


def _build_provider(provider: str, script: str | None, base_url: str | None, model: str | None):
    if provider == "stub":
        if not script:
            click.echo("--provider stub requires --script", err=True)
            sys.exit(2)
        entries = _read_json(script)
        if not isinstance(entries, list):
            click.echo("stub script must be a JSON array of {match?, response}", err=True)
            sys.exit(2)
        return StubProvider(entries)
    if not base_url or not model:
        click.echo("--provider http requires --base-url and --model", err=True)
        sys.exit(2)
    return HttpProvider(base_url, model)


@main.command()
@click.argument("flow_path")
@click.option("--provider", type=click.Choice(["stub", "http"]), default="stub")
@click.option("--script", help="stub script: JSON array of {match?, response}")
@click.option("--inputs", "inputs_path", help="human turns: JSON array of {slot, content}")
@click.option("--base-url", help="OpenAI-compatible endpoint (http provider)")
@click.option("--model", help="model name (http provider)")
@click.option("--data-dir", default="data", show_default=True)
@click.option("--session-id", default=None, help="defaults to s-<flow id>")
@click.option("--materials-dir", default=None, help="directory of .txt/.md reference materials")
@click.option("--overrides", default=None, help="JSON object of slot -> human|ai source toggles")
def run(flow_path, provider, script, inputs_path, base_url, model, data_dir, session_id,
        materials_dir, overrides) -> None:
    """Run a flow to completion, writing its event log under --data-dir."""
    flow = _read_flow(flow_path)
    report = validate_flow(flow)
    if not report.ok:
        _print_report(report)
        sys.exit(1)

    gen = _build_provider(provider, script, base_url, model)
    inputs = _read_json(inputs_path) if inputs_path else None
    toggles = _read_json(overrides) if overrides else None
    store = None
    if materials_dir:
        store = ContentStore()
        store.load_directory(materials_dir)

    session = session_id or f"s-{flow.id}"
    log = EventLog(data_dir)
    log_path = log.path(session)
    if log_path.exists():
        log_path.unlink()

    def on_await(action: engine.AwaitInput) -> str:
        limit = f" (max {action.max_words} words)" if action.max_words else ""
        return click.prompt(f"[{action.slot_id} @ step {action.step_id}]{limit}")

    try:
        state = run_session(
            flow,
            provider=gen,
            inputs=inputs,
            on_await=None if inputs is not None else on_await,
            roster_overrides=toggles,
            content_store=store,
            session_id=session,
            sink=lambda event: log.append(session, event),
        )
    except LearnFlowError as exc:
        click.echo(f"{exc.code}: {exc}", err=True)
        sys.exit(3)
    click.echo(f"session {session} {state.status}; {len(state.events)} events -> {log_path}")


def _loop_step_ids(flow: FlowDefinition) -> dict[str, bool]:
    inside: dict[str, bool] = {}
    for step in flow.steps:
        if isinstance(step, RepetitionStep):
            first = flow.step_index(step.first)
            last = flow.step_index(step.last)
            if first is None or last is None:
                continue
            for covered in flow.steps[first : last + 1]:
                inside[covered.id] = True
                for attr in ("human_variant", "ai_instruction", "ai_response"):
                    sub = getattr(covered, attr, None)
                    if sub is not None and hasattr(sub, "id"):
                        inside[sub.id] = True
    return inside


def _format_event(event: Event, in_loop: dict[str, bool]) -> str:
    # Iterations are stored 0-based; transcripts render rounds 1-based.
    round_tag = f" r{event.iteration + 1}" if in_loop.get(event.step_id) else ""
    step = f"step {event.step_id}" if event.step_id else "session"
    to = ",".join(event.recipients)
    return f"[{event.seq:>3}] {step}{round_tag} {event.kind} {event.sender} -> {to}: {event.content}"


@main.command()
@click.argument("log_path")
@click.option("--as", "viewer", default=None, help="project the transcript for one slot")
def replay_cmd(log_path: str, viewer: str | None) -> None:
    """Print a transcript and verify the log replays deterministically."""
    try:
        records = read_records(log_path)
    except OSError as exc:
        click.echo(f"cannot read {log_path}: {exc}", err=True)
        sys.exit(1)
    except LearnFlowError as exc:
        click.echo(f"{exc.code}: {exc}", err=True)
        sys.exit(1)
    if not records:
        click.echo("empty log")
        return
    try:
        flow = flow_from_records(records)
        replay(records, flow)
        events = project(records, viewer, flow) if viewer else [r.event for r in records]
    except LearnFlowError as exc:
        click.echo(f"{exc.code}: {exc}", err=True)
        sys.exit(1)
    in_loop = _loop_step_ids(flow)
    for event in events:
        click.echo(_format_event(event, in_loop))
    click.echo(f"replay ok: {len(records)} records")


# click reserves the function name; expose the command as "replay"
replay_cmd.name = "replay"
main.add_command(replay_cmd, name="replay")


@main.command()
@click.argument("export_dir")
@click.option("--force", is_flag=True, help="overwrite an existing non-empty directory")
def examples(export_dir: str, force: bool) -> None:
    """Write the five bundled exemplar flow documents."""
    target = Path(export_dir)
    if target.exists() and any(target.iterdir()) and not force:
        click.echo(f"{export_dir} is not empty; use --force to overwrite", err=True)
        sys.exit(2)
    try:
        target.mkdir(parents=True, exist_ok=True)
        for name, build in EXEMPLAR_DOCS.items():
            path = target / f"{name}.json"
            path.write_text(json.dumps(build(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
            click.echo(str(path))
    except OSError as exc:
        click.echo(f"cannot write to {export_dir}: {exc}", err=True)
        sys.exit(2)


@main.command()
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", default="data", show_default=True)
@click.option("--provider", type=click.Choice(["stub", "http", "none"]), default="none",
              help="agent backend; 'none' leaves invocations to instructor overrides")
@click.option("--script", help="stub script path")
@click.option("--base-url", help="OpenAI-compatible endpoint (http provider)")
@click.option("--model", help="model name (http provider)")
@click.option("--materials-dir", default=None)
def serve(port, host, data_dir, provider, script, base_url, model, materials_dir) -> None:
    """Serve the HTTP API."""
    import uvicorn

    from .service import create_app

    gen = None if provider == "none" else _build_provider(provider, script, base_url, model)
    store = None
    if materials_dir:
        store = ContentStore()
        store.load_directory(materials_dir)
    app = create_app(data_dir, provider=gen, content_store=store)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
