// Wire types for the control-plane API (api_version 1).

export type AgentStateName = "offline" | "online" | "market" | "battle";
export type ActionName = "offline" | "battle" | "buy" | "sell";

export interface RunListEntry {
    run_id: string;
    status: string;
    current_step: number;
    total_steps: number;
}

export interface InterventionMarker {
    intervention_id: string;
    at_step: number;
    kind: string;
    name?: string;
    path?: string;
    value?: unknown;
    body?: string;
    announce: boolean;
    applied: boolean;
}

export interface Timeline {
    run_id: string;
    status: string;
    current_step: number;
    total_steps: number;
    steps_per_day: number;
    snapshot_steps: number[];
    interventions: InterventionMarker[];
}

export interface AgentRow {
    uid: number;
    profile_class: string;
    balance: number;
}

export interface AgentDetail {
    step: number;
    profile: Record<string, unknown> & { uid: number; profile_class: string };
    state: AgentStateName;
    balance: number;
    history: Array<Record<string, unknown> & { seq: number; step: number; kind: string }>;
    latest_rationale: string | null;
}

export interface StatsFrame {
    step: number;
    wealth_histogram: number[];
    wealth_bin_edges: number[];
    gini: number;
    rank_distribution: Record<string, number[]>;
    resource_consumption: { npc: number; tax: number };
    activeness: number;
    money_supply: { players_total: number; reserve: number; burn: number };
    action_counts: Record<ActionName, number>;
    action_shares: Record<ActionName, number> | null;
    informal_trade_share: number | null;
    trade_counts: { informal: number; market: number; npc: number };
}

export interface SimEvent {
    seq: number;
    step: { day: number; step_in_day: number; abs_step: number };
    uid: number | null;
    payload: { kind: string } & Record<string, unknown>;
}

export interface InterventionDraft {
    kind: "enable_feature" | "disable_feature" | "set_param" | "broadcast_event";
    name?: string;
    path?: string;
    value?: string;
    body?: string;
    at_step?: number;
}
