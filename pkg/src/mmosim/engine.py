"""Simulation lifecycle: clock, per-step scheduling, task completion.

Step pipeline (strict order, ascending uid inside each phase):

1. apply interventions due this step (flag/param changes visible at once),
2. complete asynchronous tasks whose deadline is now (battle settlement),
3. session rolls for offline agents at the first step of each day, then
   decision contexts are built from the resulting step-start state,
4. policies decide (possibly on worker threads: decisions are pure
   functions of context + per-agent stream, so worker count cannot change
   the log), then actions execute serially in uid order,
5. session bookkeeping, log flush, day-boundary snapshot.

With a fixed seed and config, the emitted event byte stream is identical
across re-runs, advance chunkings, worker counts, and snapshot/restore.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .battle import BattleModel, ClassCurves
from .config import RunConfig, load_cluster_specs
from .domain import (
    Action, AgentState, Event, PlayerProfile, SimTime, state_transition,
)
from .economy import (
    EconomyError, EconomyService, NoChannel, SellChannel, choose_sell_channel,
)
from .intervention import Intervention, InterventionTimeline
from .ledger import (
    SYSTEM_RESERVE, InsufficientFunds, Ledger, TransferKind, player_account,
)
from .messaging import BROADCAST, SYSTEM_SENDER, MessageBus
from .persistence import EventLog, SNAPSHOT_VERSION, SnapshotStore
from .policy import (
    HeuristicPolicy, PolicyContext, PolicyFailure, RemotePolicy, ReplayPolicy,
)
from .pool import OutboundPool
from .rng import StreamFamily


class EngineError(Exception):
    pass


class RunFinished(EngineError):
    pass


def map_time(wall_elapsed: float, config: RunConfig) -> SimTime:
    """Wall-clock seconds since run start -> simulation time."""
    if config.time_acceleration <= 0:
        raise EngineError("map_time requires time_acceleration > 0")
    abs_step = int(math.floor(wall_elapsed / config.time_acceleration))
    abs_step = max(0, min(abs_step, config.total_steps - 1))
    return SimTime(abs_step, config.steps_per_day)


@dataclass
class AgentRuntime:
    profile: PlayerProfile
    state: AgentState = AgentState.OFFLINE
    pending_task: Optional[dict] = None
    session_steps_remaining: int = 0
    match_count: int = 0
    last_outcomes: list = field(default_factory=list)   # {n, win, income}
    recent_actions: list = field(default_factory=list)  # Action values
    history: list = field(default_factory=list)         # event dicts

    def snapshot(self) -> dict:
        return {
            "state": self.state.value,
            "pending_task": self.pending_task,
            "session_steps_remaining": self.session_steps_remaining,
            "match_count": self.match_count,
            "last_outcomes": list(self.last_outcomes),
            "recent_actions": [a.value for a in self.recent_actions],
            "history": list(self.history),
        }

    def restore(self, snap: dict) -> None:
        self.state = AgentState(snap["state"])
        self.pending_task = snap["pending_task"]
        self.session_steps_remaining = snap["session_steps_remaining"]
        self.match_count = snap["match_count"]
        self.last_outcomes = list(snap["last_outcomes"])
        self.recent_actions = [Action(a) for a in snap["recent_actions"]]
        self.history = list(snap["history"])


def model_from_clusters(specs: dict) -> BattleModel:
    """Parametric battle model straight from the cluster ground truth."""
    from .domain import ProfileClass

    curves = {}
    for row in specs["clusters"]:
        pc = ProfileClass(row["profile_class"])
        wc, ic = row["true_win_curve"], row["true_income_curve"]
        curves[pc] = ClassCurves(
            w0=wc["w0"], w1=wc["w1"],
            income_a=ic["base"], income_b=ic["slope"], income_sigma=ic["sigma"],
            win_bins={}, income_bins={}, min_bin_count=30,
        )
    return BattleModel(curves, fitted_on="cluster_asset")


class SimulationRun:
    """One live world. Construct from a RunConfig, drive with advance()."""

    def __init__(self, config: RunConfig, out_dir: Optional[str | Path] = None,
                 battle_model: Optional[BattleModel] = None):
        config.validate()
        self.config = config
        self.steps_per_day = config.steps_per_day
        self.next_step = 0
        self.next_seq = 1
        self.events: list[Event] = []

        population = config.resolve_population()
        uids = [p.uid for p in population]
        if len(set(uids)) != len(uids):
            raise EngineError("population contains duplicate uids")

        self.agents: dict[int, AgentRuntime] = {
            p.uid: AgentRuntime(profile=p, history=[]) for p in population
        }
        self._uid_order = sorted(self.agents)

        self.ledger = Ledger(reserve=config.reserve_initial)
        for uid in self._uid_order:
            self.ledger.open_player(uid, config.initial_balance)
        self._initial_total = self.ledger.total()

        catalog = config.resolve_catalog()
        self.economy = EconomyService(catalog, self.ledger)
        for uid in self._uid_order:
            self.economy.open_inventory(uid)

        self.bus = MessageBus(self._uid_order, config.groups)
        self.pool = OutboundPool(config.max_outbound_inflight)
        self.flags = dict(config.feature_flags)
        self.params: dict[str, Any] = {
            "tax_rate": config.tax_rate,
            "p_fraud": config.p_fraud,
            "habit_decay": config.habit_decay,
            "lambda_win": config.lambda_win,
        }
        self._bm_enabled_day: Optional[int] = (
            0 if self.flags.get("black_market_enabled") else None)

        if battle_model is not None:
            self.battle_model = battle_model
        elif config.battle_model:
            self.battle_model = BattleModel.load(config.battle_model)
        else:
            self.battle_model = model_from_clusters(load_cluster_specs())

        self.timeline = InterventionTimeline(set(self.economy.items))
        for doc in config.interventions:
            self.timeline.schedule(doc, current_step=0)

        self.streams = StreamFamily(config.seed)
        self._weights = config.resolve_policy_weights()
        floor = self._weights.get("reserve_floor")
        self.reserve_floor = (int(floor) if floor
                              else self.economy.cheapest_npc_price())
        self.policies: dict[int, Any] = {}
        self._fallbacks: dict[int, HeuristicPolicy] = {}
        self._bind_policies()

        self._executor = (ThreadPoolExecutor(max_workers=config.workers)
                          if config.workers > 1 else None)

        # Persistence wiring (optional: in-memory runs skip it).
        self.out_dir = Path(out_dir) if out_dir else None
        self.log: Optional[EventLog] = None
        self.store: Optional[SnapshotStore] = None
        self._transfers_written = 0
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.log = EventLog.create(
                self.out_dir / "events.log", config.seed,
                config.content_hash(), config.steps_per_day, self.next_seq)
            self.store = SnapshotStore(self.out_dir / "snapshots")
            self._maybe_snapshot()

    # -- policy wiring -----------------------------------------------------

    def _bind_policies(self) -> None:
        binding = self.config.policy_binding or {}
        replay_cache: dict[str, ReplayPolicy] = {}
        for uid in self._uid_order:
            profile = self.agents[uid].profile
            spec = (binding.get(f"uid:{uid}")
                    or binding.get(profile.profile_class.value)
                    or binding.get("default")
                    or "heuristic")
            stream = self.streams.get(f"decide:{uid}")
            fallback = HeuristicPolicy(self._weights, self.reserve_floor, stream)
            self._fallbacks[uid] = fallback
            if spec == "heuristic":
                self.policies[uid] = fallback
            elif isinstance(spec, dict) and spec.get("kind") == "remote":
                host, _, port = spec["endpoint"].rpartition(":")
                self.policies[uid] = RemotePolicy(
                    host or "127.0.0.1", int(port), self.pool,
                    float(spec.get("timeout_ms", 2000.0)))
            elif isinstance(spec, dict) and spec.get("kind") == "replay":
                source = spec["corpus"]
                if source not in replay_cache:
                    from .datagen import read_corpus
                    replay_cache[source] = ReplayPolicy.from_corpus(
                        read_corpus(source))
                self.policies[uid] = replay_cache[source]
            else:
                raise EngineError(f"bad policy binding for uid {uid}: {spec!r}")

    def bind_replay(self, policy: ReplayPolicy) -> None:
        """Swap every agent onto one replay trajectory (used by `sim replay`)."""
        for uid in self._uid_order:
            self.policies[uid] = policy

    # -- event plumbing ------------------------------------------------------

    def _emit(self, sink: list[Event], sim_t: SimTime, payload: dict,
              uid: Optional[int] = None) -> Event:
        ev = Event(self.next_seq, sim_t, payload, uid)
        self.next_seq += 1
        sink.append(ev)
        if uid is not None:
            hist = self.agents[uid].history
            hist.append({"seq": ev.seq, "step": sim_t.abs_step, **payload})
            if len(hist) > self.config.history_window:
                del hist[: len(hist) - self.config.history_window]
        return ev

    def _transition(self, sink: list[Event], sim_t: SimTime, uid: int,
                    dst: AgentState) -> None:
        agent = self.agents[uid]
        ev = state_transition(self.next_seq, sim_t, uid, agent.state, dst)
        self.next_seq += 1
        sink.append(ev)
        agent.state = dst
        hist = self.agents[uid].history
        hist.append({"seq": ev.seq, "step": sim_t.abs_step, **ev.payload})
        if len(hist) > self.config.history_window:
            del hist[: len(hist) - self.config.history_window]

    # -- main loop -----------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.next_step >= self.config.total_steps

    def advance(self, n_steps: int) -> list[Event]:
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.finished:
            raise RunFinished("run already completed")
        out: list[Event] = []
        for _ in range(n_steps):
            if self.finished:
                break
            out.extend(self._step_once())
        return out

    def run_to_end(self) -> list[Event]:
        if self.finished:
            return []
        return self.advance(self.config.total_steps - self.next_step)

    def _step_once(self) -> list[Event]:
        t = self.next_step
        sim_t = SimTime(t, self.steps_per_day)
        step_events: list[Event] = []

        # 1. interventions
        for iv in self.timeline.due(t):
            self._apply_intervention(iv, t, sim_t, step_events)

        # 2. task completion before any new decision
        for uid in self._uid_order:
            agent = self.agents[uid]
            task = agent.pending_task
            if task and task["completes_at"] == t:
                self._settle_battle(uid, agent, task, t, sim_t, step_events)

        # 3. session rolls, then decision contexts from step-start state
        contexts: list[tuple[int, PolicyContext]] = []
        for uid in self._uid_order:
            agent = self.agents[uid]
            if agent.state is AgentState.OFFLINE:
                if sim_t.step_in_day != 0:
                    continue
                stream = self.streams.get(f"session:{uid}")
                if stream.random() >= agent.profile.activeness:
                    self._emit(step_events, sim_t, {
                        "kind": "action_chosen", "action": Action.OFFLINE.value,
                        "rationale_text": "offline: no session today"}, uid)
                    continue
                length = 1 + stream.poisson(
                    max(0.0, agent.profile.session_length_mean - 1.0))
                self._transition(step_events, sim_t, uid, AgentState.ONLINE)
                self._emit(step_events, sim_t,
                           {"kind": "session_start", "session_steps": length},
                           uid)
                agent.session_steps_remaining = length
            if agent.pending_task is None and agent.state in (
                    AgentState.ONLINE, AgentState.MARKET):
                contexts.append((uid, self._build_context(uid, agent, sim_t,
                                                          step_events)))

        # 4. decide (parallelizable), execute (serial, uid order)
        for uid, decision, failure in self._decide_all(contexts):
            if failure is not None:
                self._emit(step_events, sim_t,
                           {"kind": "policy_failure", "reason": failure}, uid)
            self._emit(step_events, sim_t, {
                "kind": "action_chosen", "action": decision.action.value,
                "rationale_text": decision.rationale}, uid)
            self._execute(uid, decision.action, t, sim_t, step_events)
            agent = self.agents[uid]
            agent.recent_actions.append(decision.action)
            if len(agent.recent_actions) > self.config.history_window:
                del agent.recent_actions[0]

        # 5. session clock and invariants
        for uid in self._uid_order:
            agent = self.agents[uid]
            if agent.state is not AgentState.OFFLINE:
                agent.session_steps_remaining -= 1
            battling = agent.state is AgentState.BATTLE
            has_task = agent.pending_task is not None
            if battling != has_task:
                raise EngineError(f"uid {uid}: battle state out of sync")
        if self.ledger.total() != self._initial_total:
            raise EngineError("currency conservation violated")

        self.events.extend(step_events)
        self.next_step = t + 1
        if self.log:
            self.log.append(step_events)
            self.log.flush()
            self._flush_transfers()
        self._maybe_snapshot()
        return step_events

    # -- phases ---------------------------------------------------------------

    def _apply_intervention(self, iv: Intervention, t: int, sim_t: SimTime,
                            sink: list[Event]) -> None:
        if iv.kind == "enable_feature":
            already = self.flags.get(iv.name, False)
            self.flags[iv.name] = True
            if iv.name == "black_market_enabled" and not already:
                self._bm_enabled_day = sim_t.day
        elif iv.kind == "disable_feature":
            self.flags[iv.name] = False
            if iv.name == "black_market_enabled":
                self._bm_enabled_day = None
        elif iv.kind == "set_param":
            if iv.path.startswith("npc_price."):
                self.economy.set_npc_price(iv.path.split(".", 1)[1], iv.value)
            elif iv.path == "battle.lambda_win":
                self.params["lambda_win"] = iv.value
            else:
                self.params[iv.path] = iv.value
        self.timeline.mark_applied(iv.intervention_id)
        self._emit(sink, sim_t, {
            "kind": "intervention_applied",
            "intervention_id": iv.intervention_id,
            "intervention": iv.to_dict()})
        if iv.kind == "broadcast_event":
            self.bus.publish(BROADCAST, SYSTEM_SENDER, iv.body or "", t)
        elif iv.announce:
            self.bus.publish(BROADCAST, SYSTEM_SENDER, iv.describe(), t)

    def _settle_battle(self, uid: int, agent: AgentRuntime, task: dict,
                       t: int, sim_t: SimTime, sink: list[Event]) -> None:
        n = task["n"]
        win, income = self.battle_model.sample(
            agent.profile.profile_class, n,
            self.streams.get(f"battle:{uid}"), self.params["lambda_win"])
        # The faucet cannot overdraw the reserve (keeps conservation exact).
        paid = min(income, self.ledger.reserve)
        if paid > 0:
            self.ledger.transfer(t, SYSTEM_RESERVE, player_account(uid),
                                 paid, TransferKind.BATTLE_REWARD)
        agent.pending_task = None
        self._emit(sink, sim_t, {
            "kind": "battle_resolved", "match_index": n,
            "win": win, "income": paid}, uid)
        self._transition(sink, sim_t, uid, AgentState.ONLINE)
        agent.last_outcomes.append({"n": n, "win": win, "income": paid})
        if len(agent.last_outcomes) > self.config.history_window:
            del agent.last_outcomes[0]

    def _build_context(self, uid: int, agent: AgentRuntime, sim_t: SimTime,
                       sink: list[Event]) -> PolicyContext:
        messages = self.bus.drain(uid, sim_t.abs_step)
        for m in messages:
            self._emit(sink, sim_t, {
                "kind": "message_delivered", "topic": m.topic,
                "body": m.body}, uid)
        return PolicyContext(
            profile=agent.profile,
            state=agent.state,
            balance=self.ledger.player_balance(uid),
            last_outcomes=tuple(agent.last_outcomes),
            recent_actions=tuple(agent.recent_actions),
            broadcasts_pending=tuple(m.body for m in messages),
            channels={
                "npc_shop": self.flags["npc_shop_enabled"],
                "black_market": self.flags["black_market_enabled"],
                "informal_trade": self.flags["informal_trade_enabled"],
            },
            time=sim_t,
            session_steps_remaining=agent.session_steps_remaining,
            surplus_tradables=len(self.economy.surplus_items(uid)),
        )

    def _decide_all(self, contexts):
        if self._executor is None or len(contexts) <= 1:
            return [self._decide_one(uid, ctx) for uid, ctx in contexts]
        futures = [self._executor.submit(self._decide_one, uid, ctx)
                   for uid, ctx in contexts]
        return [f.result() for f in futures]

    def _decide_one(self, uid: int, ctx: PolicyContext):
        try:
            return uid, self.policies[uid].decide(ctx), None
        except PolicyFailure as e:
            return uid, self._fallbacks[uid].decide(ctx), e.reason

    def _execute(self, uid: int, action: Action, t: int, sim_t: SimTime,
                 sink: list[Event]) -> None:
        agent = self.agents[uid]
        if action is Action.OFFLINE:
            if agent.state is AgentState.MARKET:
                self._transition(sink, sim_t, uid, AgentState.ONLINE)
            self._transition(sink, sim_t, uid, AgentState.OFFLINE)
            self._emit(sink, sim_t, {"kind": "session_end"}, uid)
            agent.session_steps_remaining = 0
        elif action is Action.BATTLE:
            if agent.state is AgentState.MARKET:
                self._transition(sink, sim_t, uid, AgentState.ONLINE)
            if agent.pending_task is not None:
                raise EngineError(f"uid {uid}: second task scheduled")
            self._transition(sink, sim_t, uid, AgentState.BATTLE)
            agent.match_count += 1
            agent.pending_task = {
                "kind": "battle",
                "completes_at": t + self.config.battle_duration_steps,
                "n": agent.match_count,
            }
        elif action is Action.BUY:
            if agent.state is AgentState.ONLINE:
                self._transition(sink, sim_t, uid, AgentState.MARKET)
            self._execute_buy(uid, t, sim_t, sink)
        else:
            if agent.state is AgentState.ONLINE:
                self._transition(sink, sim_t, uid, AgentState.MARKET)
            self._execute_sell(uid, agent, t, sim_t, sink)

    def _execute_buy(self, uid: int, t: int, sim_t: SimTime,
                     sink: list[Event]) -> None:
        balance = self.ledger.player_balance(uid)
        target = self.economy.affordable_gear(uid, balance)
        if target is None:
            return
        listing = None
        if self.flags["black_market_enabled"]:
            cap = balance
            if self.flags["npc_shop_enabled"]:
                cap = min(balance, self.economy.npc_price(target))
            listing = self.economy.best_open_listing(target, uid, cap)
        try:
            if listing is not None:
                payload = self.economy.market_buy(
                    uid, listing.listing_id, self.params["tax_rate"], t)
                self._emit(sink, sim_t, payload, uid)
            elif (self.flags["npc_shop_enabled"]
                  and balance >= self.economy.npc_price(target)):
                payload = self.economy.npc_buy(uid, target, t, True)
                self._emit(sink, sim_t, payload, uid)
        except (EconomyError, InsufficientFunds):
            return  # service rejection: the chosen action becomes a no-op

    def _execute_sell(self, uid: int, agent: AgentRuntime, t: int,
                      sim_t: SimTime, sink: list[Event]) -> None:
        surplus = self.economy.surplus_items(uid)
        if not surplus:
            return
        item = surplus[0]
        channels = {
            "black_market": self.flags["black_market_enabled"],
            "informal_trade": self.flags["informal_trade_enabled"],
        }
        days_since = (None if self._bm_enabled_day is None
                      else sim_t.day - self._bm_enabled_day)
        stream = self.streams.get(f"trade:{uid}")
        try:
            channel = choose_sell_channel(
                agent.profile, channels, stream, days_since,
                self.params["habit_decay"])
        except NoChannel:
            return
        price = self.economy.discounted_price(item, self.config.resale_discount)
        try:
            if channel is SellChannel.BLACK_MARKET:
                self.economy.market_sell(uid, item, price, t, True)
            else:
                partners = [v for v in self._uid_order
                            if v != uid
                            and self.agents[v].state is not AgentState.OFFLINE]
                if not partners:
                    return
                partner = partners[stream.randrange(len(partners))]
                payload = self.economy.informal_trade(
                    uid, partner, item, stream, self.params["p_fraud"],
                    price, t, True)
                self._emit(sink, sim_t, payload, uid)
        except (EconomyError, InsufficientFunds):
            return

    # -- snapshots -------------------------------------------------------------

    def _maybe_snapshot(self) -> None:
        if not self.store:
            return
        t = self.next_step
        if t % self.steps_per_day != 0:
            return
        day = t // self.steps_per_day
        if day % self.config.snapshot_every_days != 0 and t != self.config.total_steps:
            return
        if t in set(self.store.steps()):
            return
        self.store.save(self.snapshot())

    def snapshot(self) -> dict:
        """Full world state at the current step boundary."""
        return {
            "snapshot_version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "taken_at_step": self.next_step,
            "next_seq": self.next_seq,
            "agents": {str(uid): self.agents[uid].snapshot()
                       for uid in self._uid_order},
            "ledger": self.ledger.snapshot(),
            "economy": self.economy.snapshot(),
            "bus": self.bus.snapshot(),
            "rng": self.streams.counters(),
            "interventions": self.timeline.snapshot(),
            "flags": dict(self.flags),
            "params": dict(self.params),
            "bm_enabled_day": self._bm_enabled_day,
        }

    @classmethod
    def from_snapshot(cls, doc: dict,
                      out_dir: Optional[str | Path] = None) -> "SimulationRun":
        config = RunConfig.from_dict(doc["config"])
        # Rebuild the immutable scaffolding, then overlay mutable state.
        run = cls(config, out_dir=None)
        run.next_step = doc["taken_at_step"]
        run.next_seq = doc["next_seq"]
        run.events = []
        for uid_s, snap in doc["agents"].items():
            run.agents[int(uid_s)].restore(snap)
        run.ledger = Ledger.restore(doc["ledger"])
        run.economy.ledger = run.ledger
        run.economy.restore(doc["economy"])
        run.bus.restore(doc["bus"])
        run.streams.restore(doc["rng"])
        run.timeline.restore(doc["interventions"])
        run.flags = dict(doc["flags"])
        run.params = dict(doc["params"])
        run._bm_enabled_day = doc["bm_enabled_day"]
        run._initial_total = run.ledger.total()
        # Policies hold stream references; rebind against restored streams.
        run._bind_policies()
        if out_dir:
            run.out_dir = Path(out_dir)
            run.out_dir.mkdir(parents=True, exist_ok=True)
            log_path = run.out_dir / "events.log"
            if log_path.exists():
                run.log = EventLog.open_for_append(log_path)
            else:
                run.log = EventLog.create(
                    log_path, config.seed, config.content_hash(),
                    config.steps_per_day, run.next_seq)
            run.store = SnapshotStore(run.out_dir / "snapshots")
        return run

    def _flush_transfers(self) -> None:
        if not self.out_dir:
            return
        new = self.ledger.transfers[self._transfers_written:]
        if not new:
            return
        with open(self.out_dir / "transfers.log", "a", encoding="utf-8") as fh:
            for tr in new:
                fh.write(tr.to_record() + "\n")
        self._transfers_written = len(self.ledger.transfers)

    def close(self) -> None:
        if self._executor:
            self._executor.shutdown(wait=True)
        self.pool.close()
        if self.log:
            self.log.close()
