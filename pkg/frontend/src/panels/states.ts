// Middle-left panel: the four agent states with counts; selecting one
// lists every agent currently in it.

import { fmtClass, fmtCredits } from "../format";
import type { AgentRow, AgentStateName } from "../types";

export const STATE_ORDER: AgentStateName[] = ["offline", "online", "market", "battle"];

export function renderStateList(counts: Record<AgentStateName, number>,
                                selected: AgentStateName | null): string {
    return STATE_ORDER.map((state) => {
        const cls = state === selected ? "state-row selected" : "state-row";
        return `<div class="${cls}" data-state="${state}">
  <span class="state-name">${state}</span>
  <span class="state-count">${counts[state] ?? 0}</span>
</div>`;
    }).join("");
}

export function renderAgentList(state: AgentStateName, agents: AgentRow[],
                                selectedUid: number | null): string {
    if (!agents.length) {
        return `<div class="empty">nobody is ${state}</div>`;
    }
    const rows = agents.map((a) => {
        const cls = a.uid === selectedUid ? "agent-row selected" : "agent-row";
        return `<div class="${cls}" data-uid="${a.uid}">
  <span class="uid">#${a.uid}</span>
  <span class="cls">${fmtClass(a.profile_class)}</span>
  <span class="bal">${fmtCredits(a.balance)}</span>
</div>`;
    }).join("");
    return `<div class="agent-list-head">${agents.length} agent(s) ${state}</div>${rows}`;
}
