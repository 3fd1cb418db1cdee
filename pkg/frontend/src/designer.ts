// Form-based flow designer. Flows here are linear step tables with loops
// and branches, so the editor is a table of step rows with kind-specific
// fields, not a graph canvas. Saving posts the generated document to the
// server and maps its validation diagnostics back onto the offending rows.

import { ApiError, LearnFlowClient } from "./api.js";
import { clear, el } from "./dom.js";
import type { AgentDoc, Diagnostic, FlowDoc, RosterSlotDoc, StepDoc } from "./types.js";

export interface RosterRow {
  slot_id: string;
  role: string;
  team?: string;
  source?: string;
}

export interface AgentRow {
  agent_id: string;
  persona_prompt?: string;
  material_refs?: string; // comma-separated in the form
}

export interface StepRow {
  no: string;
  kind: string;
  fields: Record<string, string>;
  grade?: boolean;
}

export interface DesignerModel {
  id: string;
  title: string;
  objectives: string[];
  roster: RosterRow[];
  agents: AgentRow[];
  steps: StepRow[];
}

export const STEP_KINDS = [
  "agent_prompt",
  "reference_materials",
  "instruction_learner",
  "instruction_ai",
  "user_input",
  "ai_response",
  "repetition",
  "branch",
  "alternative",
] as const;

const STEP_FIELDS: Record<string, string[]> = {
  agent_prompt: ["agent", "text"],
  reference_materials: ["agent", "materials", "audience"],
  instruction_learner: ["to", "text"],
  instruction_ai: ["agent", "text"],
  user_input: ["from", "to", "max_words"],
  ai_response: ["agent", "visibility"],
  repetition: ["first", "last", "count", "consecutive_correct"],
  branch: ["contains_token", "goto"],
  alternative: ["slot", "human_to", "human_max_words", "ai_agent", "ai_text", "ai_visibility"],
};

function csv(value: string | undefined): string[] {
  if (!value) return [];
  return value
    .split(",")
    .map((part) => part.trim())
    .filter((part) => part.length > 0);
}

function visibilityValue(value: string): string[] | string {
  const trimmed = value.trim();
  return trimmed === "all" ? "all" : csv(trimmed);
}

/** Turn the form model into a flow document matching the wire schema. */
export function buildFlowDocument(model: DesignerModel): FlowDoc {
  const roster: RosterSlotDoc[] = model.roster.map((row) => {
    const slot: RosterSlotDoc = {
      slot_id: row.slot_id.trim(),
      role: row.role.trim() as RosterSlotDoc["role"],
    };
    if (row.team && row.team.trim()) slot.team = row.team.trim();
    if (row.source && row.source.trim()) slot.source = row.source.trim() as "human" | "ai";
    return slot;
  });

  const agents: AgentDoc[] = model.agents.map((row) => {
    const agent: AgentDoc = { agent_id: row.agent_id.trim() };
    if (row.persona_prompt && row.persona_prompt.trim()) agent.persona_prompt = row.persona_prompt;
    const refs = csv(row.material_refs);
    if (refs.length > 0) agent.material_refs = refs;
    return agent;
  });

  const steps: StepDoc[] = model.steps.map((row) => buildStep(row));

  return {
    id: model.id.trim(),
    title: model.title.trim(),
    objectives: model.objectives.filter((o) => o.trim().length > 0),
    roster,
    agents,
    steps,
  };
}

function buildStep(row: StepRow): StepDoc {
  const f = row.fields;
  const no = row.no.trim();
  switch (row.kind) {
    case "agent_prompt":
      return { no, kind: row.kind, agent: f.agent ?? "", text: f.text ?? "" };
    case "reference_materials":
      return {
        no,
        kind: row.kind,
        agent: f.agent ?? "",
        materials: csv(f.materials),
        audience: csv(f.audience),
      };
    case "instruction_learner":
      return { no, kind: row.kind, to: csv(f.to), text: f.text ?? "" };
    case "instruction_ai": {
      const step: StepDoc = { no, kind: row.kind, agent: f.agent ?? "", text: f.text ?? "" };
      if (row.grade) step.grade = true;
      return step;
    }
    case "user_input": {
      const step: StepDoc = { no, kind: row.kind, from: f.from ?? "", to: csv(f.to) };
      if (f.max_words && f.max_words.trim()) step.max_words = Number(f.max_words);
      return step;
    }
    case "ai_response":
      return { no, kind: row.kind, agent: f.agent ?? "", visibility: visibilityValue(f.visibility ?? "all") };
    case "repetition": {
      const step: StepDoc = {
        no,
        kind: row.kind,
        range: [f.first ?? "", f.last ?? ""],
        count: Number(f.count ?? "0"),
      };
      if (f.consecutive_correct && f.consecutive_correct.trim()) {
        step.exit = { consecutive_correct: Number(f.consecutive_correct) };
      }
      return step;
    }
    case "branch":
      return {
        no,
        kind: row.kind,
        on: "last_agent_response",
        contains_token: f.contains_token ?? "",
        goto: f.goto ?? "",
      };
    case "alternative": {
      const human: StepDoc = {
        no: `${no}-1`,
        kind: "user_input",
        from: f.slot ?? "",
        to: csv(f.human_to),
      };
      if (f.human_max_words && f.human_max_words.trim()) human.max_words = Number(f.human_max_words);
      return {
        no: `turn-${no}`,
        kind: row.kind,
        slot: f.slot ?? "",
        human_variant: human,
        ai_variant: [
          { no: `${no}-2-prompt`, kind: "instruction_ai", agent: f.ai_agent ?? "", text: f.ai_text ?? "" },
          {
            no: `${no}-2`,
            kind: "ai_response",
            agent: f.ai_agent ?? "",
            visibility: visibilityValue(f.ai_visibility ?? "all"),
          },
        ],
      };
    }
    default:
      return { no, kind: row.kind };
  }
}

export class DesignerView {
  readonly root: HTMLElement;
  private idInput: HTMLInputElement;
  private titleInput: HTMLInputElement;
  private objectivesInput: HTMLTextAreaElement;
  private rosterBody: HTMLElement;
  private agentsBody: HTMLElement;
  private stepsBody: HTMLElement;
  private reportArea: HTMLElement;

  constructor(
    container: HTMLElement,
    private client: LearnFlowClient,
    private onSaved?: (flowId: string) => void,
  ) {
    this.idInput = el("input", { class: "flow-id", placeholder: "flow id" });
    this.titleInput = el("input", { class: "flow-title", placeholder: "title" });
    this.objectivesInput = el("textarea", {
      class: "flow-objectives",
      rows: "2",
      placeholder: "one objective per line",
    });
    this.rosterBody = el("div", { class: "roster-rows" });
    this.agentsBody = el("div", { class: "agent-rows" });
    this.stepsBody = el("div", { class: "step-rows" });
    this.reportArea = el("div", { class: "report" });

    const addRoster = el("button", { class: "add-roster" }, ["Add participant"]);
    addRoster.addEventListener("click", () => this.addRosterRow());
    const addAgent = el("button", { class: "add-agent" }, ["Add agent"]);
    addAgent.addEventListener("click", () => this.addAgentRow());
    const addStep = el("button", { class: "add-step" }, ["Add step"]);
    addStep.addEventListener("click", () => this.addStepRow());
    const save = el("button", { class: "save-flow" }, ["Save flow"]);
    save.addEventListener("click", () => void this.save());

    this.root = el("div", { class: "designer" }, [
      el("div", { class: "meta" }, [this.idInput, this.titleInput, this.objectivesInput]),
      el("h3", {}, ["Participants"]),
      this.rosterBody,
      addRoster,
      el("h3", {}, ["Agents"]),
      this.agentsBody,
      addAgent,
      el("h3", {}, ["Steps"]),
      this.stepsBody,
      addStep,
      save,
      this.reportArea,
    ]);
    container.append(this.root);
  }

  addRosterRow(row?: RosterRow): void {
    const node = el("div", { class: "roster-row" });
    node.append(
      this.field(node, "slot_id", row?.slot_id ?? ""),
      this.select(node, "role", ["instructor", "learner", "ai-agent"], row?.role ?? "learner"),
      this.field(node, "team", row?.team ?? ""),
      this.select(node, "source", ["", "human", "ai"], row?.source ?? ""),
      this.removeButton(node),
    );
    this.rosterBody.append(node);
  }

  addAgentRow(row?: AgentRow): void {
    const node = el("div", { class: "agent-row" });
    node.append(
      this.field(node, "agent_id", row?.agent_id ?? ""),
      this.field(node, "persona_prompt", row?.persona_prompt ?? ""),
      this.field(node, "material_refs", row?.material_refs ?? ""),
      this.removeButton(node),
    );
    this.agentsBody.append(node);
  }

  addStepRow(row?: StepRow): void {
    const node = el("div", { class: "step-row" });
    const noInput = this.field(node, "no", row?.no ?? "");
    const kindSelect = this.select(node, "kind", [...STEP_KINDS], row?.kind ?? "instruction_learner");
    const fieldsArea = el("div", { class: "kind-fields" });
    const diagArea = el("div", { class: "row-diagnostics" });
    node.append(noInput, kindSelect, fieldsArea, diagArea, this.removeButton(node));

    const renderFields = (kind: string, values: Record<string, string>, grade: boolean) => {
      clear(fieldsArea);
      for (const name of STEP_FIELDS[kind] ?? []) {
        fieldsArea.append(this.field(fieldsArea, name, values[name] ?? ""));
      }
      if (kind === "instruction_ai") {
        const checkbox = el("input", { type: "checkbox", "data-field": "grade" }) as HTMLInputElement;
        checkbox.checked = grade;
        fieldsArea.append(el("label", { class: "grade-label" }, [checkbox, "graded"]));
      }
    };
    renderFields(kindSelect.value, row?.fields ?? {}, row?.grade ?? false);
    kindSelect.addEventListener("change", () => renderFields(kindSelect.value, {}, false));
    this.stepsBody.append(node);
  }

  private field(_parent: HTMLElement, name: string, value: string): HTMLInputElement {
    const input = el("input", { "data-field": name, placeholder: name }) as HTMLInputElement;
    input.value = value;
    return input;
  }

  private select(
    _parent: HTMLElement,
    name: string,
    options: string[],
    value: string,
  ): HTMLSelectElement {
    const select = el("select", { "data-field": name }) as HTMLSelectElement;
    for (const option of options) {
      select.append(el("option", { value: option }, [option || "(default)"]));
    }
    select.value = value;
    return select;
  }

  private removeButton(row: HTMLElement): HTMLButtonElement {
    const button = el("button", { class: "remove-row" }, ["×"]) as HTMLButtonElement;
    button.addEventListener("click", () => row.remove());
    return button;
  }

  setModel(model: DesignerModel): void {
    this.idInput.value = model.id;
    this.titleInput.value = model.title;
    this.objectivesInput.value = model.objectives.join("\n");
    clear(this.rosterBody);
    clear(this.agentsBody);
    clear(this.stepsBody);
    for (const row of model.roster) this.addRosterRow(row);
    for (const row of model.agents) this.addAgentRow(row);
    for (const row of model.steps) this.addStepRow(row);
  }

  readModel(): DesignerModel {
    const readFields = (row: Element): Record<string, string> => {
      const values: Record<string, string> = {};
      row.querySelectorAll<HTMLInputElement | HTMLSelectElement>("[data-field]").forEach((input) => {
        if (input instanceof HTMLInputElement && input.type === "checkbox") return;
        values[input.getAttribute("data-field") ?? ""] = input.value;
      });
      return values;
    };
    const roster: RosterRow[] = [];
    this.rosterBody.querySelectorAll(".roster-row").forEach((row) => {
      const values = readFields(row);
      roster.push({
        slot_id: values.slot_id ?? "",
        role: values.role ?? "learner",
        team: values.team || undefined,
        source: values.source || undefined,
      });
    });
    const agents: AgentRow[] = [];
    this.agentsBody.querySelectorAll(".agent-row").forEach((row) => {
      const values = readFields(row);
      agents.push({
        agent_id: values.agent_id ?? "",
        persona_prompt: values.persona_prompt || undefined,
        material_refs: values.material_refs || undefined,
      });
    });
    const steps: StepRow[] = [];
    this.stepsBody.querySelectorAll(".step-row").forEach((row) => {
      const values = readFields(row);
      const grade = row.querySelector<HTMLInputElement>('input[data-field="grade"]')?.checked ?? false;
      const { no = "", kind = "instruction_learner", ...fields } = values;
      steps.push({ no, kind, fields, grade });
    });
    return {
      id: this.idInput.value,
      title: this.titleInput.value,
      objectives: this.objectivesInput.value.split("\n").filter((line) => line.trim().length > 0),
      roster,
      agents,
      steps,
    };
  }

  async save(): Promise<{ ok: boolean; flowId?: string }> {
    clear(this.reportArea);
    this.root.querySelectorAll(".row-diagnostics").forEach((node) => clear(node as HTMLElement));
    const doc = buildFlowDocument(this.readModel());
    try {
      const { flow_id, report } = await this.client.createFlow(doc);
      this.reportArea.append(el("div", { class: "saved" }, [`Saved ${flow_id}.`]));
      for (const diag of report.diagnostics) this.renderDiagnostic(diag);
      this.onSaved?.(flow_id);
      return { ok: true, flowId: flow_id };
    } catch (error) {
      if (error instanceof ApiError) {
        const details = error.details as { diagnostics?: Diagnostic[] } | undefined;
        this.reportArea.append(
          el("div", { class: "save-error" }, [`${error.code}: ${error.message}`]),
        );
        for (const diag of details?.diagnostics ?? []) this.renderDiagnostic(diag);
      } else {
        this.reportArea.append(el("div", { class: "save-error" }, ["Network error"]));
      }
      return { ok: false };
    }
  }

  /** Attach a diagnostic to the step row it names, or to the report area. */
  private renderDiagnostic(diag: Diagnostic): void {
    const line = el("div", { class: `diagnostic ${diag.severity}` }, [
      `${diag.severity} ${diag.code}: ${diag.message}`,
    ]);
    if (diag.step_id) {
      for (const row of this.stepsBody.querySelectorAll(".step-row")) {
        const noInput = row.querySelector<HTMLInputElement>('input[data-field="no"]');
        if (noInput && noInput.value === diag.step_id) {
          row.querySelector(".row-diagnostics")?.append(line);
          return;
        }
      }
    }
    this.reportArea.append(line);
  }
}
