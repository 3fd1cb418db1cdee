// Wire types for the LearnFlow HTTP API.

export interface EventRecord {
  seq: number;
  step_id: string;
  iteration: number;
  kind: "instruction" | "user_input" | "agent_response" | "system";
  sender: string;
  recipients: string[];
  visibility: string[];
  content: string;
  ts: string;
}

export interface AwaitingTurn {
  slot_id: string;
  step_id: string;
  max_words: number | null;
}

export interface SessionStateView {
  session_id: string;
  status: string;
  slot_id: string;
  awaiting: AwaitingTurn | null;
  your_turn: boolean;
  last_seq: number;
  tallies?: Record<string, { correct: number; total_graded: number }>;
}

export interface Diagnostic {
  severity: "error" | "warning";
  step_id: string | null;
  code: string;
  message: string;
}

export interface ValidationReport {
  ok: boolean;
  diagnostics: Diagnostic[];
}

export interface CreateFlowResponse {
  flow_id: string;
  report: ValidationReport;
}

export interface CreateSessionResponse {
  session_id: string;
  tokens: Record<string, string>;
}

export interface RosterSlotDoc {
  slot_id: string;
  role: "instructor" | "learner" | "ai-agent";
  team?: string;
  source?: "human" | "ai";
}

export interface AgentDoc {
  agent_id: string;
  persona_prompt?: string;
  material_refs?: string[];
  params?: Record<string, unknown>;
  context_budget_words?: number;
}

export type StepDoc = Record<string, unknown> & { no: string; kind: string };

export interface FlowDoc {
  id: string;
  title: string;
  objectives: string[];
  roster: RosterSlotDoc[];
  agents: AgentDoc[];
  steps: StepDoc[];
  templates?: Record<string, string>;
}

export type ConnectionState = "live" | "polling" | "offline";
