"""Macroscopic statistics and the prediction-accuracy harness.

Everything here is a pure function of (config + event log): the fold
below reconstructs balances, states, and trade counts from events alone,
so any figure can be recomputed identically from a reloaded log file.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .config import RunConfig
from .domain import AgentState, Event, ProfileClass

ACTIONS = ("offline", "battle", "buy", "sell")

# Wealth histogram bins: zero, then powers of two up to 2^20, then overflow.
WEALTH_BIN_EDGES = [0, 1] + [2 ** k for k in range(1, 21)]


class AnalyticsError(Exception):
    pass


class StepNotReached(AnalyticsError):
    pass


class MissingTruth(AnalyticsError):
    pass


class DuplicatePrediction(AnalyticsError):
    pass


class NotApplied(AnalyticsError):
    pass


def gini(balances: list[int]) -> float:
    """Population Gini: sum |xi - xj| / (2 n^2 mean); 0 for a zero mean."""
    n = len(balances)
    if n == 0:
        return 0.0
    total = sum(balances)
    if total == 0:
        return 0.0
    xs = sorted(balances)
    weighted = sum((i + 1) * x for i, x in enumerate(xs))
    return (2.0 * weighted) / (n * total) - (n + 1) / n


class LogFold:
    """Incremental reducer over the event stream.

    Feed events in seq order; read balances/states/counters at any point.
    Mirrors exactly the money movements the engine performs.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        population = config.resolve_population()
        self.classes = {p.uid: p.profile_class for p in population}
        self.balances = {p.uid: config.initial_balance for p in population}
        self.reserve = config.reserve_initial
        self.burn = 0
        self.states = {p.uid: AgentState.OFFLINE for p in population}
        self.flags = dict(config.feature_flags)
        self.params = {"tax_rate": config.tax_rate, "p_fraud": config.p_fraud,
                       "habit_decay": config.habit_decay,
                       "lambda_win": config.lambda_win}
        self.cum_npc = 0
        self.cum_tax = 0
        # per-step trade/action counters, keyed by abs_step
        self.trades_by_step: dict[int, Counter] = {}
        self.actions_by_step: dict[int, Counter] = {}
        self.interventions: dict[str, dict] = {}
        self.last_rationale: dict[int, str] = {}
        self.last_step_seen = -1

    def feed(self, ev: Event) -> None:
        t = ev.step.abs_step
        self.last_step_seen = max(self.last_step_seen, t)
        p = ev.payload
        kind = p["kind"]
        if kind == "state_transition":
            self.states[ev.uid] = AgentState(p["to"])
        elif kind == "action_chosen":
            self.actions_by_step.setdefault(t, Counter())[p["action"]] += 1
            if p.get("rationale_text"):
                self.last_rationale[ev.uid] = p["rationale_text"]
        elif kind == "battle_resolved":
            income = p["income"]
            self.balances[ev.uid] += income
            self.reserve -= income
        elif kind == "npc_purchase":
            price = p["price"]
            self.balances[ev.uid] -= price
            self.reserve += price
            self.cum_npc += price
            self.trades_by_step.setdefault(t, Counter())["npc"] += 1
        elif kind == "trade_executed":
            price, tax = p["price"], p["tax"]
            self.balances[p["buyer"]] -= price
            self.balances[p["seller"]] += price - tax
            self.burn += tax
            self.cum_tax += tax
            self.trades_by_step.setdefault(t, Counter())["market"] += 1
        elif kind == "informal_trade_executed":
            pay = p.get("payment", 0)
            if pay:
                self.balances[p["u2"]] -= pay
                self.balances[p["u1"]] += pay
            self.trades_by_step.setdefault(t, Counter())["informal"] += 1
        elif kind == "intervention_applied":
            iv = p["intervention"]
            self.interventions[p["intervention_id"]] = {**iv, "applied_step": t}
            if iv["kind"] == "enable_feature":
                self.flags[iv["name"]] = True
            elif iv["kind"] == "disable_feature":
                self.flags[iv["name"]] = False
            elif iv["kind"] == "set_param":
                path = iv["path"]
                if not path.startswith("npc_price."):
                    key = "lambda_win" if path == "battle.lambda_win" else path
                    self.params[key] = iv["value"]

    def feed_all(self, events: Iterable[Event]) -> "LogFold":
        for ev in events:
            self.feed(ev)
        return self

    def trade_counts(self, lo: int, hi: int) -> Counter:
        """Summed trade counters over abs steps in [lo, hi]."""
        out: Counter = Counter()
        for t, c in self.trades_by_step.items():
            if lo <= t <= hi:
                out.update(c)
        return out


def informal_share(counts: Counter) -> Optional[float]:
    """Informal transfers as a share of all item transactions.

    Denominator spans every transaction channel (informal, black market,
    NPC shop) so the share is meaningful before a black market exists.
    None when there were no transactions at all.
    """
    denom = counts["informal"] + counts["market"] + counts["npc"]
    if denom == 0:
        return None
    return counts["informal"] / denom


@dataclass
class StatsFrame:
    step: int
    wealth_histogram: list[int]
    wealth_bin_edges: list[int]
    gini: float
    rank_distribution: dict[str, list[int]]
    resource_consumption: dict[str, int]
    activeness: float
    money_supply: dict[str, int]
    action_counts: dict[str, int]
    action_shares: Optional[dict[str, float]]
    informal_trade_share: Optional[float]
    trade_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "wealth_histogram": self.wealth_histogram,
            "wealth_bin_edges": self.wealth_bin_edges,
            "gini": self.gini,
            "rank_distribution": self.rank_distribution,
            "resource_consumption": self.resource_consumption,
            "activeness": self.activeness,
            "money_supply": self.money_supply,
            "action_counts": self.action_counts,
            "action_shares": self.action_shares,
            "informal_trade_share": self.informal_trade_share,
            "trade_counts": self.trade_counts,
        }


def _wealth_histogram(balances: list[int]) -> list[int]:
    counts = [0] * (len(WEALTH_BIN_EDGES) + 1)
    for b in balances:
        placed = False
        for i in range(len(WEALTH_BIN_EDGES) - 1):
            if WEALTH_BIN_EDGES[i] <= b < WEALTH_BIN_EDGES[i + 1]:
                counts[i] += 1
                placed = True
                break
        if not placed:
            counts[-1] += 1
    return counts


def _rank_distribution(balances: dict[int, int],
                       classes: dict[int, ProfileClass]) -> dict[str, list[int]]:
    """Profile class x wealth quintile (a proxy for the rank panel)."""
    order = sorted(balances, key=lambda u: (balances[u], u))
    n = len(order)
    out = {pc.value: [0] * 5 for pc in ProfileClass}
    for rank, uid in enumerate(order):
        quintile = min(4, rank * 5 // n) if n else 0
        out[classes[uid].value][quintile] += 1
    return out


def compute_frame(events: Iterable[Event], config: RunConfig, step: int,
                  window: Optional[int] = None,
                  last_executed: Optional[int] = None) -> StatsFrame:
    """StatsFrame after all events of `step`. Pure over the log prefix.

    `last_executed` is the newest completed step when the caller knows it
    (the api does); otherwise coverage is inferred from the log itself.
    """
    if window is None:
        window = config.steps_per_day
    fold = LogFold(config)
    max_step = -1
    for ev in events:
        max_step = max(max_step, ev.step.abs_step)
        if ev.step.abs_step <= step:
            fold.feed(ev)
    covered = last_executed if last_executed is not None else max_step
    if step > covered:
        raise StepNotReached(f"step {step} beyond executed prefix ({covered})")

    balances = fold.balances
    values = list(balances.values())
    action_counts = dict(fold.actions_by_step.get(step, Counter()))
    total_actions = sum(action_counts.values())
    shares = ({a: action_counts.get(a, 0) / total_actions for a in ACTIONS}
              if total_actions else None)
    window_counts = fold.trade_counts(step - window + 1, step)
    online = sum(1 for s in fold.states.values() if s is not AgentState.OFFLINE)

    return StatsFrame(
        step=step,
        wealth_histogram=_wealth_histogram(values),
        wealth_bin_edges=list(WEALTH_BIN_EDGES),
        gini=gini(values),
        rank_distribution=_rank_distribution(balances, fold.classes),
        resource_consumption={"npc": fold.cum_npc, "tax": fold.cum_tax},
        activeness=online / len(balances) if balances else 0.0,
        money_supply={
            "players_total": sum(values),
            "reserve": fold.reserve,
            "burn": fold.burn,
        },
        action_counts={a: action_counts.get(a, 0) for a in ACTIONS},
        action_shares=shares,
        informal_trade_share=informal_share(window_counts),
        trade_counts={k: window_counts.get(k, 0)
                      for k in ("informal", "market", "npc")},
    )


# --- stepwise prediction accuracy --------------------------------------------

def stepwise_accuracy(predictions: list[dict], truth: list[dict]) -> dict:
    """Fraction of decision points where the predicted action matches.

    accuracy = sum over players and steps of 1[pred == actual] / count.
    Both inputs are records with uid, abs_step, action. Every prediction
    must address a real decision point; duplicates are rejected.
    """
    truth_map: dict[tuple[int, int], str] = {}
    for r in truth:
        truth_map[(int(r["uid"]), int(r["abs_step"]))] = r["action"]

    seen: set[tuple[int, int]] = set()
    correct = 0
    confusion = {a: {b: 0 for b in ACTIONS} for a in ACTIONS}
    for r in predictions:
        key = (int(r["uid"]), int(r["abs_step"]))
        if key in seen:
            raise DuplicatePrediction(f"uid={key[0]} step={key[1]}")
        seen.add(key)
        actual = truth_map.get(key)
        if actual is None:
            raise MissingTruth(f"uid={key[0]} step={key[1]} not in truth")
        predicted = r["action"]
        confusion[actual][predicted] += 1
        if predicted == actual:
            correct += 1

    n = len(predictions)
    class_counts = Counter(truth_map.values())
    total_truth = len(truth_map)
    recall = {}
    for a in ACTIONS:
        row_sum = sum(confusion[a].values())
        recall[a] = confusion[a][a] / row_sum if row_sum else None
    return {
        "accuracy": correct / n if n else 0.0,
        "n_predictions": n,
        "n_truth": total_truth,
        "coverage": n / total_truth if total_truth else 0.0,
        "per_class_recall": recall,
        "confusion": confusion,
        "class_distribution": {a: class_counts.get(a, 0) / total_truth
                               for a in ACTIONS} if total_truth else {},
    }


# --- intervention before/after report -----------------------------------------

def intervention_report(events: list[Event], config: RunConfig,
                        intervention_id: str, window: Optional[int] = None,
                        settle_delay: Optional[int] = None) -> dict:
    """Informal-trade share before an intervention and after it settles."""
    spd = config.steps_per_day
    if window is None:
        window = spd
    if settle_delay is None:
        settle_delay = spd

    fold = LogFold(config).feed_all(events)
    iv = fold.interventions.get(intervention_id)
    if iv is None:
        raise NotApplied(f"intervention {intervention_id} not applied in log")
    at_step = iv["applied_step"]

    pre = fold.trade_counts(at_step - window, at_step - 1)
    post_start = at_step + settle_delay
    post = fold.trade_counts(post_start, post_start + window - 1)

    last_day = fold.last_step_seen // spd if fold.last_step_seen >= 0 else 0
    series = []
    for day in range(last_day + 1):
        counts = fold.trade_counts(day * spd, (day + 1) * spd - 1)
        series.append({
            "day": day,
            "informal_trade_share": informal_share(counts),
            "counts": {k: counts.get(k, 0) for k in ("informal", "market", "npc")},
        })

    return {
        "intervention_id": intervention_id,
        "at_step": at_step,
        "pre_share": informal_share(pre),
        "post_share": informal_share(post),
        "pre_counts": {k: pre.get(k, 0) for k in ("informal", "market", "npc")},
        "post_counts": {k: post.get(k, 0) for k in ("informal", "market", "npc")},
        "window": window,
        "settle_delay": settle_delay,
        "series": series,
    }
