// Middle-right panel: the four cohort stat families as small charts, all
// straight renderings of StatsFrame responses (plus their short history
// the console has already fetched).

import { barsSvg, sparklineSvg, stackedAreaSvg, wealthBinLabel } from "../charts";
import { fmtCredits, fmtPct } from "../format";
import type { StatsFrame } from "../types";

export interface StatsHistoryPoint {
    step: number;
    gini: number;
    money_supply: StatsFrame["money_supply"];
    action_shares: StatsFrame["action_shares"];
    informal_trade_share: number | null;
    trade_counts: StatsFrame["trade_counts"];
}

export function renderStats(frame: StatsFrame, history: StatsHistoryPoint[]): string {
    const nonzero = frame.wealth_histogram
        .map((count, i) => ({ count, i }))
        .filter((b) => b.count > 0);
    const firstBin = nonzero.length ? nonzero[0].i : 0;
    const lastBin = nonzero.length ? nonzero[nonzero.length - 1].i : 0;
    const window = frame.wealth_histogram.slice(firstBin, lastBin + 1);
    const wealthTitle = `wealth histogram (${wealthBinLabel(frame.wealth_bin_edges, firstBin)}` +
        ` to ${wealthBinLabel(frame.wealth_bin_edges, lastBin)})`;

    const supply = frame.money_supply;
    const supplySeries = [
        { name: "players", values: history.map((h) => h.money_supply.players_total) },
        { name: "reserve", values: history.map((h) => h.money_supply.reserve) },
        { name: "burn", values: history.map((h) => h.money_supply.burn) },
    ];
    const shareSeries = ["offline", "battle", "buy", "sell"].map((action) => ({
        name: action,
        values: history.map((h) => h.action_shares?.[action as keyof NonNullable<StatsFrame["action_shares"]>] ?? 0),
    }));
    const informalSeries = history.map((h) => h.informal_trade_share);
    const marketShare = history.map((h) => {
        const c = h.trade_counts;
        const denom = c.informal + c.market + c.npc;
        return denom ? c.market / denom : null;
    });

    return `
<div class="stat-card">
  <h4>${wealthTitle} · gini ${frame.gini.toFixed(3)}</h4>
  ${barsSvg(window, "wealth histogram")}
  ${sparklineSvg(history.map((h) => h.gini), "gini over time")}
</div>
<div class="stat-card">
  <h4>money supply · players ${fmtCredits(supply.players_total)}
      · reserve ${fmtCredits(supply.reserve)} · burn ${fmtCredits(supply.burn)}</h4>
  ${stackedAreaSvg(supplySeries, "money supply composition")}
</div>
<div class="stat-card">
  <h4>action shares · activeness ${fmtPct(frame.activeness)}</h4>
  ${stackedAreaSvg(shareSeries, "action shares")}
</div>
<div class="stat-card">
  <h4>informal vs market trade share · informal now ${fmtPct(frame.informal_trade_share)}</h4>
  <div class="twoline">
    ${sparklineSvg(informalSeries, "informal trade share")}
    ${sparklineSvg(marketShare, "market trade share")}
  </div>
  <div class="sink-line">sinks: npc ${fmtCredits(frame.resource_consumption.npc)}
      · tax burned ${fmtCredits(frame.resource_consumption.tax)}</div>
</div>`;
}
