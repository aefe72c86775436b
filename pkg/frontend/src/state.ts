// Console view state and its pure reducer. Panels render from this plus
// the latest API payloads; nothing here re-simulates anything.

import type { AgentStateName, InterventionDraft } from "./types";

export interface ViewState {
    selectedRun: string | null;
    cursorStep: number;
    latestStep: number;        // newest committed step (current_step - 1)
    selectedState: AgentStateName | null;
    selectedUid: number | null;
    liveFollow: boolean;
    draft: InterventionDraft;
}

export function initialViewState(): ViewState {
    return {
        selectedRun: null,
        cursorStep: 0,
        latestStep: 0,
        selectedState: null,
        selectedUid: null,
        liveFollow: true,
        draft: { kind: "enable_feature", name: "black_market_enabled" },
    };
}

export type ViewAction =
    | { type: "select_run"; runId: string; latestStep: number }
    | { type: "progress"; latestStep: number }
    | { type: "scrub"; step: number }
    | { type: "follow_live" }
    | { type: "select_state"; state: AgentStateName | null }
    | { type: "select_agent"; uid: number | null }
    | { type: "edit_draft"; draft: InterventionDraft };

export function reduce(state: ViewState, action: ViewAction): ViewState {
    switch (action.type) {
        case "select_run":
            return {
                ...initialViewState(),
                selectedRun: action.runId,
                latestStep: action.latestStep,
                cursorStep: action.latestStep,
                draft: state.draft,
            };
        case "progress": {
            const latestStep = Math.max(state.latestStep, action.latestStep);
            return {
                ...state,
                latestStep,
                cursorStep: state.liveFollow ? latestStep : state.cursorStep,
            };
        }
        case "scrub": {
            const step = clampStep(action.step, state.latestStep);
            // Scrubbing backward pauses live-follow; jumping to the head
            // re-engages it.
            return { ...state, cursorStep: step, liveFollow: step >= state.latestStep };
        }
        case "follow_live":
            return { ...state, liveFollow: true, cursorStep: state.latestStep };
        case "select_state":
            return { ...state, selectedState: action.state, selectedUid: null };
        case "select_agent":
            return { ...state, selectedUid: action.uid };
        case "edit_draft":
            return { ...state, draft: action.draft };
    }
}

export function clampStep(step: number, latest: number): number {
    if (!Number.isFinite(step)) return 0;
    return Math.max(0, Math.min(Math.round(step), latest));
}

// Detail panes render only with a selected agent (spec'd invariant).
export function showDetailPanes(state: ViewState): boolean {
    return state.selectedUid !== null;
}
