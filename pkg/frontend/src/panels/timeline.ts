// Bottom panel: run controls, the timeline scrubber, intervention and
// snapshot markers. Pure render; main.ts wires the input events.

import { fmtStep } from "../format";
import type { Timeline } from "../types";

export function markerTitle(marker: Timeline["interventions"][number]): string {
    if (marker.kind === "set_param") return `${marker.path} = ${marker.value}`;
    if (marker.kind === "broadcast_event") return marker.body ?? "broadcast";
    return `${marker.kind.replace("_", " ")}: ${marker.name}`;
}

export function renderTimeline(timeline: Timeline, cursorStep: number,
                               liveFollow: boolean): string {
    const latest = Math.max(0, timeline.current_step - 1);
    const span = Math.max(1, timeline.total_steps - 1);
    const markers = timeline.interventions.map((iv) => {
        const left = (100 * iv.at_step / span).toFixed(2);
        const cls = iv.applied ? "marker applied" : "marker pending";
        return `<div class="${cls}" data-id="${iv.intervention_id}" ` +
            `style="left:${left}%" title="${markerTitle(iv)} @ ${iv.at_step}">▼</div>`;
    }).join("");
    const snaps = timeline.snapshot_steps.map((s) => {
        const left = (100 * s / span).toFixed(2);
        return `<div class="snap" data-step="${s}" style="left:${left}%" ` +
            `title="snapshot @ ${s}"></div>`;
    }).join("");
    const followCls = liveFollow ? "btn follow on" : "btn follow";
    return `
<div class="timeline-head">
  <span class="run-name">${timeline.run_id}</span>
  <span class="status status-${timeline.status}">${timeline.status}</span>
  <span class="controls">
    <button class="btn" data-cmd="start">start</button>
    <button class="btn" data-cmd="pause">pause</button>
    <button class="btn" data-cmd="resume">resume</button>
    <button class="btn" data-cmd="step_n" data-n="1">+1 step</button>
    <button class="btn" data-cmd="step_n" data-n="24">+1 day</button>
    <button class="btn" data-cmd="stop">stop</button>
    <button class="${followCls}" data-follow="1">live</button>
  </span>
  <span class="cursor-label">${fmtStep(cursorStep, timeline.steps_per_day)}
    · committed ${latest}/${timeline.total_steps - 1}</span>
</div>
<div class="track">
  ${snaps}${markers}
  <input type="range" class="scrubber" min="0" max="${latest}"
         value="${Math.min(cursorStep, latest)}" step="1">
</div>`;
}
