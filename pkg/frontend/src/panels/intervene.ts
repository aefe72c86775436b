// Intervention form: validated against the shared schema, posted via the
// api, confirmed by the server echo (the timeline marker).

import type { InterventionDraft } from "../types";

const FEATURES = ["npc_shop_enabled", "black_market_enabled", "informal_trade_enabled"];
const PARAM_PATHS = ["tax_rate", "p_fraud", "habit_decay", "battle.lambda_win"];

export function renderInterventionForm(draft: InterventionDraft,
                                       notice: string | null): string {
    const kinds = ["enable_feature", "disable_feature", "set_param", "broadcast_event"];
    const kindOptions = kinds.map((k) =>
        `<option value="${k}" ${k === draft.kind ? "selected" : ""}>${k.replaceAll("_", " ")}</option>`).join("");

    let body = "";
    if (draft.kind === "enable_feature" || draft.kind === "disable_feature") {
        const options = FEATURES.map((f) =>
            `<option value="${f}" ${f === draft.name ? "selected" : ""}>${f}</option>`).join("");
        body = `<label>feature <select name="name">${options}</select></label>`;
    } else if (draft.kind === "set_param") {
        const options = PARAM_PATHS.map((p) =>
            `<option value="${p}" ${p === draft.path ? "selected" : ""}>${p}</option>`).join("");
        body = `<label>param <select name="path">${options}</select></label>
<label>value <input name="value" type="text" value="${draft.value ?? ""}"></label>`;
    } else {
        body = `<label>body <input name="body" type="text" value="${draft.body ?? ""}"></label>`;
    }
    const noticeHtml = notice ? `<div class="form-notice">${notice}</div>` : "";
    return `
<h3>intervene</h3>
<form class="iv-form">
  <label>kind <select name="kind">${kindOptions}</select></label>
  ${body}
  <label>at step <input name="at_step" type="number" min="0"
         placeholder="next step" value="${draft.at_step ?? ""}"></label>
  <button type="submit" class="btn primary">apply to live run</button>
</form>
${noticeHtml}`;
}
