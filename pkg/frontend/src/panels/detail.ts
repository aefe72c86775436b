// Side panes: agent attributes on one side, history + latest decision
// rationale on the other. Rendered only when an agent is selected.

import { escapeHtml, fmtClass, fmtCredits } from "../format";
import type { AgentDetail } from "../types";

const PROFILE_FIELDS = [
    "skill", "frustration_tolerance", "spend_propensity", "activeness",
    "session_length_mean", "habit_informal_trade",
];

export function renderAttributes(detail: AgentDetail): string {
    const profile = detail.profile;
    const rows = PROFILE_FIELDS.map((field) => {
        const value = profile[field];
        const shown = typeof value === "number" && !Number.isInteger(value)
            ? value.toFixed(3) : String(value);
        return `<div class="attr"><span>${field.replaceAll("_", " ")}</span>` +
            `<b>${shown}</b></div>`;
    }).join("");
    return `
<h3>agent #${profile.uid}</h3>
<div class="attr"><span>class</span><b>${fmtClass(profile.profile_class)}</b></div>
<div class="attr"><span>state</span><b>${detail.state}</b></div>
<div class="attr"><span>balance</span><b>${fmtCredits(detail.balance)}</b></div>
${rows}`;
}

export function describeHistoryEvent(entry: AgentDetail["history"][number]): string {
    switch (entry.kind) {
        case "action_chosen":
            return `chose ${entry.action}`;
        case "battle_resolved":
            return `match ${entry.match_index}: ${entry.win ? "won" : "lost"}, +${entry.income}`;
        case "state_transition":
            return `${entry.from} → ${entry.to}`;
        case "npc_purchase":
            return `bought ${entry.item} for ${entry.price}`;
        case "trade_executed":
            return `market trade ${entry.item ?? ""} @ ${entry.price} (tax ${entry.tax})`;
        case "informal_trade_executed":
            return entry.fraud ? `informal trade of ${entry.item}: scammed`
                : `informal trade of ${entry.item} (paid ${entry.payment})`;
        case "message_delivered":
            return `received: ${entry.body}`;
        case "session_start":
            return "logged in";
        case "session_end":
            return "logged off";
        case "policy_failure":
            return `planner failed (${entry.reason}), heuristic took over`;
        default:
            return entry.kind;
    }
}

export function renderHistory(detail: AgentDetail): string {
    const rationale = detail.latest_rationale
        ? `<div class="rationale">“${escapeHtml(detail.latest_rationale)}”</div>`
        : `<div class="rationale muted">no rationale recorded yet</div>`;
    const rows = [...detail.history].reverse().map((entry) =>
        `<div class="hist-row"><span class="t">@${entry.step}</span>` +
        `<span>${escapeHtml(describeHistoryEvent(entry))}</span></div>`).join("");
    return `<h3>latest reflection</h3>${rationale}<h3>history</h3>${rows}`;
}
