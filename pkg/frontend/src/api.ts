// Thin typed client over the documented /api routes. The console never
// computes simulation state itself; every number on screen traces back to
// one of these calls.

import type {
    AgentDetail, AgentRow, AgentStateName, InterventionDraft, RunListEntry,
    SimEvent, StatsFrame, Timeline,
} from "./types";

export class ApiError extends Error {
    constructor(public code: string, message: string, public status: number) {
        super(message);
    }
}

async function getJson<T>(url: string): Promise<T> {
    const resp = await fetch(url);
    const doc = await resp.json();
    if (!resp.ok) {
        throw new ApiError(doc.code ?? "Error", doc.error ?? "request failed", resp.status);
    }
    return doc as T;
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
    const resp = await fetch(url, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
    });
    const doc = await resp.json();
    if (!resp.ok) {
        throw new ApiError(doc.code ?? "Error", doc.error ?? "request failed", resp.status);
    }
    return doc as T;
}

export function agentsUrl(base: string, runId: string, state: AgentStateName,
                          step: number): string {
    return `${base}/api/runs/${runId}/agents?state=${state}&step=${step}`;
}

export function statsUrl(base: string, runId: string, step: number): string {
    return `${base}/api/runs/${runId}/stats?step=${step}`;
}

export function agentDetailUrl(base: string, runId: string, uid: number,
                               step: number): string {
    return `${base}/api/runs/${runId}/agent/${uid}?step=${step}`;
}

export function eventsUrl(base: string, runId: string, fromSeq: number): string {
    return `${base}/api/runs/${runId}/events?from_seq=${fromSeq}`;
}

export class ApiClient {
    constructor(private base: string = "") {}

    listRuns(): Promise<{ runs: RunListEntry[] }> {
        return getJson(`${this.base}/api/runs`);
    }

    timeline(runId: string): Promise<Timeline> {
        return getJson(`${this.base}/api/runs/${runId}/timeline`);
    }

    control(runId: string, command: string, n = 0): Promise<{ status: string; current_step: number }> {
        return postJson(`${this.base}/api/runs/${runId}/control`, { command, n });
    }

    agents(runId: string, state: AgentStateName, step: number): Promise<{ agents: AgentRow[] }> {
        return getJson(agentsUrl(this.base, runId, state, step));
    }

    agentDetail(runId: string, uid: number, step: number): Promise<AgentDetail> {
        return getJson(agentDetailUrl(this.base, runId, uid, step));
    }

    stats(runId: string, step: number): Promise<StatsFrame> {
        return getJson(statsUrl(this.base, runId, step));
    }

    intervene(runId: string, draft: Record<string, unknown>): Promise<{ intervention_id: string; at_step: number }> {
        return postJson(`${this.base}/api/runs/${runId}/interventions`, draft);
    }

    // Server-Sent Events subscription; the caller reconnects from the last
    // seen seq after a drop (the server sets id: to the seq).
    subscribe(runId: string, fromSeq: number, onEvent: (ev: SimEvent) => void,
              onError?: () => void): EventSource {
        const source = new EventSource(eventsUrl(this.base, runId, fromSeq));
        source.onmessage = (msg) => onEvent(JSON.parse(msg.data) as SimEvent);
        if (onError) source.onerror = onError;
        return source;
    }
}

export function validateDraft(draft: InterventionDraft): string | null {
    // Mirrors server-side validation so the form can refuse early; the
    // server remains authoritative.
    if (draft.kind === "enable_feature" || draft.kind === "disable_feature") {
        if (!draft.name) return "feature name is required";
    } else if (draft.kind === "set_param") {
        if (!draft.path) return "parameter path is required";
        if (draft.value === undefined || draft.value === "") return "value is required";
        if (Number.isNaN(Number(draft.value))) return "value must be numeric";
    } else if (draft.kind === "broadcast_event") {
        if (!draft.body) return "broadcast body is required";
    } else {
        return "unknown intervention kind";
    }
    if (draft.at_step !== undefined && draft.at_step < 0) return "at_step must be >= 0";
    return null;
}

export function draftToRequest(draft: InterventionDraft): Record<string, unknown> {
    const doc: Record<string, unknown> = { kind: draft.kind };
    if (draft.at_step !== undefined) doc.at_step = draft.at_step;
    if (draft.kind === "enable_feature" || draft.kind === "disable_feature") {
        doc.name = draft.name;
    } else if (draft.kind === "set_param") {
        doc.path = draft.path;
        doc.value = Number(draft.value);
    } else {
        doc.body = draft.body;
    }
    return doc;
}
