import { ApiClient, draftToRequest, validateDraft } from "./api";
import { initialViewState, reduce, showDetailPanes, ViewAction, ViewState } from "./state";
import { renderAttributes, renderHistory } from "./panels/detail";
import { renderInterventionForm } from "./panels/intervene";
import { renderAgentList, renderStateList, STATE_ORDER } from "./panels/states";
import { renderStats, StatsHistoryPoint } from "./panels/stats";
import { renderTimeline } from "./panels/timeline";
import type { AgentStateName, InterventionDraft, SimEvent, Timeline } from "./types";
import "./style.css";

const api = new ApiClient("");

let view: ViewState = initialViewState();
let timeline: Timeline | null = null;
let stream: EventSource | null = null;
let lastSeq = 0;
let notice: string | null = null;
const statsHistory = new Map<number, StatsHistoryPoint>();

function $(selector: string): HTMLElement {
    return document.querySelector(selector) as HTMLElement;
}

function dispatch(action: ViewAction) {
    view = reduce(view, action);
    void refresh();
}

// --- data refresh ------------------------------------------------------------

async function refreshRunList() {
    const { runs } = await api.listRuns();
    const options = runs.map((r) =>
        `<option value="${r.run_id}" ${r.run_id === view.selectedRun ? "selected" : ""}>` +
        `${r.run_id} (${r.status}, ${r.current_step}/${r.total_steps})</option>`).join("");
    $("#run-select").innerHTML =
        `<option value="">— pick a run —</option>${options}`;
}

async function refresh() {
    if (!view.selectedRun) return;
    timeline = await api.timeline(view.selectedRun);
    const latest = Math.max(0, timeline.current_step - 1);
    if (latest !== view.latestStep) {
        view = reduce(view, { type: "progress", latestStep: latest });
    }
    await Promise.all([renderAll()]);
}

async function renderAll() {
    if (!timeline || !view.selectedRun) return;
    const runId = view.selectedRun;
    const step = Math.min(view.cursorStep, Math.max(0, timeline.current_step - 1));

    $("#timeline").innerHTML = renderTimeline(timeline, step, view.liveFollow);
    wireTimeline();

    // States panel: counts come from the same agents_by_state queries the
    // drill-down uses, so the numbers always agree with the lists.
    const byState = await Promise.all(STATE_ORDER.map(
        (s) => api.agents(runId, s, step).then((r) => [s, r.agents] as const)));
    const counts = Object.fromEntries(
        byState.map(([s, rows]) => [s, rows.length])) as Record<AgentStateName, number>;
    $("#state-list").innerHTML = renderStateList(counts, view.selectedState);
    wireStateList();

    if (view.selectedState) {
        const rows = byState.find(([s]) => s === view.selectedState)![1];
        $("#agent-list").innerHTML = renderAgentList(view.selectedState, rows, view.selectedUid);
        wireAgentList();
    } else {
        $("#agent-list").innerHTML = `<div class="empty">select a state to drill down</div>`;
    }

    if (showDetailPanes(view) && view.selectedUid !== null) {
        const detail = await api.agentDetail(runId, view.selectedUid, step);
        $("#pane-left").innerHTML = renderAttributes(detail);
        $("#pane-right").innerHTML = renderHistory(detail);
    } else {
        $("#pane-left").innerHTML = `<div class="empty">attributes</div>`;
        $("#pane-right").innerHTML = `<div class="empty">history</div>`;
    }

    const frame = await api.stats(runId, step);
    statsHistory.set(frame.step, {
        step: frame.step,
        gini: frame.gini,
        money_supply: frame.money_supply,
        action_shares: frame.action_shares,
        informal_trade_share: frame.informal_trade_share,
        trade_counts: frame.trade_counts,
    });
    const history = [...statsHistory.values()]
        .filter((h) => h.step <= step)
        .sort((a, b) => a.step - b.step)
        .slice(-100);
    $("#stats").innerHTML = renderStats(frame, history);

    $("#intervene").innerHTML = renderInterventionForm(view.draft, notice);
    wireInterventionForm();
}

// --- event stream --------------------------------------------------------------

function subscribe(runId: string) {
    stream?.close();
    lastSeq = 0;
    stream = api.subscribe(runId, lastSeq + 1, onEvent, () => {
        // The banner clears once the stream resumes from lastSeq.
        $("#banner").textContent = "connection lost — retrying…";
        $("#banner").classList.add("show");
        setTimeout(() => {
            if (view.selectedRun === runId) subscribe(runId);
        }, 1000);
    });
    stream.onopen = () => $("#banner").classList.remove("show");
}

let pendingPaint = false;

function onEvent(ev: SimEvent) {
    lastSeq = Math.max(lastSeq, ev.seq);
    view = reduce(view, { type: "progress", latestStep: ev.step.abs_step });
    if (!pendingPaint && view.liveFollow) {
        pendingPaint = true;
        setTimeout(() => {
            pendingPaint = false;
            void refresh();
        }, 400);
    }
}

// --- wiring ----------------------------------------------------------------------

function wireTimeline() {
    const scrubber = document.querySelector(".scrubber") as HTMLInputElement | null;
    scrubber?.addEventListener("change", () =>
        dispatch({ type: "scrub", step: Number(scrubber.value) }));
    document.querySelectorAll<HTMLButtonElement>("#timeline .btn[data-cmd]").forEach((btn) =>
        btn.addEventListener("click", async () => {
            try {
                await api.control(view.selectedRun!, btn.dataset.cmd!,
                    Number(btn.dataset.n ?? 0));
                notice = null;
            } catch (err) {
                notice = String(err);
            }
            void refresh();
        }));
    document.querySelector<HTMLButtonElement>("#timeline .btn.follow")
        ?.addEventListener("click", () => dispatch({ type: "follow_live" }));
}

function wireStateList() {
    document.querySelectorAll<HTMLElement>("#state-list .state-row").forEach((row) =>
        row.addEventListener("click", () => dispatch({
            type: "select_state",
            state: row.dataset.state as AgentStateName,
        })));
}

function wireAgentList() {
    document.querySelectorAll<HTMLElement>("#agent-list .agent-row").forEach((row) =>
        row.addEventListener("click", () => dispatch({
            type: "select_agent",
            uid: Number(row.dataset.uid),
        })));
}

function readDraft(form: HTMLFormElement): InterventionDraft {
    const data = new FormData(form);
    const draft: InterventionDraft = {
        kind: data.get("kind") as InterventionDraft["kind"],
    };
    if (data.get("name")) draft.name = String(data.get("name"));
    if (data.get("path")) draft.path = String(data.get("path"));
    if (data.get("value")) draft.value = String(data.get("value"));
    if (data.get("body")) draft.body = String(data.get("body"));
    const atStep = data.get("at_step");
    if (atStep !== null && atStep !== "") draft.at_step = Number(atStep);
    return draft;
}

function wireInterventionForm() {
    const form = document.querySelector<HTMLFormElement>("#intervene form");
    if (!form) return;
    form.querySelector('select[name="kind"]')?.addEventListener("change", () => {
        dispatch({ type: "edit_draft", draft: readDraft(form) });
    });
    form.addEventListener("submit", async (ev) => {
        ev.preventDefault();
        const draft = readDraft(form);
        const problem = validateDraft(draft);
        if (problem) {
            notice = problem;
            void renderAll();
            return;
        }
        try {
            const reply = await api.intervene(view.selectedRun!, draftToRequest(draft));
            notice = `scheduled ${reply.intervention_id} at step ${reply.at_step}`;
        } catch (err) {
            notice = String(err);
        }
        dispatch({ type: "edit_draft", draft });
    });
}

async function boot() {
    await refreshRunList();
    $("#run-select").addEventListener("change", (ev) => {
        const runId = (ev.target as HTMLSelectElement).value;
        if (!runId) return;
        void api.timeline(runId).then((t) => {
            dispatch({
                type: "select_run", runId,
                latestStep: Math.max(0, t.current_step - 1),
            });
            subscribe(runId);
        });
    });
    setInterval(() => void refreshRunList(), 5000);
    setInterval(() => {
        if (view.selectedRun && view.liveFollow) void refresh();
    }, 2000);
}

window.addEventListener("load", () => void boot());
