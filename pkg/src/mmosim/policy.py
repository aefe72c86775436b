"""Player planners: given a decision context, pick one of the four actions.

Three implementations behind one `decide` interface: a weighted-softmax
heuristic (the reference behavioral model), exact replay of a recorded
trajectory, and a remote planner speaking a small line-JSON protocol so a
learned agent can be plugged in without touching the engine.
"""

from __future__ import annotations

import json
import math
import socket
import time
from dataclasses import dataclass
from typing import Optional

from .domain import Action, AgentState, PlayerProfile, SimTime, valid_actions
from .pool import OutboundPool
from .rng import RandomStream

WIRE_VERSION = 1
ACTION_ORDER = (Action.OFFLINE, Action.BATTLE, Action.BUY, Action.SELL)


class PolicyFailure(Exception):
    """Planner could not produce a usable decision; caller falls back."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class PolicyContext:
    profile: PlayerProfile
    state: AgentState
    balance: int
    last_outcomes: tuple[dict, ...]      # newest last: {n, win, income}
    recent_actions: tuple[Action, ...]   # newest last
    broadcasts_pending: tuple[str, ...]
    channels: dict[str, bool]            # npc_shop / black_market / informal_trade
    time: SimTime
    session_steps_remaining: int
    surplus_tradables: int

    def loss_streak(self) -> int:
        streak = 0
        for o in reversed(self.last_outcomes):
            if o["win"]:
                break
            streak += 1
        return streak

    def last_was_loss(self) -> bool:
        return bool(self.last_outcomes) and not self.last_outcomes[-1]["win"]

    def to_wire(self) -> str:
        doc = {
            "protocol_version": WIRE_VERSION,
            "uid": self.profile.uid,
            "step": self.time.abs_step,
            "state": self.state.value,
            "balance": self.balance,
            "profile": self.profile.to_dict(),
            "last_outcomes": list(self.last_outcomes),
            "recent_actions": [a.value for a in self.recent_actions],
            "channels": dict(self.channels),
            "broadcasts": list(self.broadcasts_pending),
            "session_steps_remaining": self.session_steps_remaining,
            "surplus_tradables": self.surplus_tradables,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ActionDecision:
    action: Action
    rationale: Optional[str] = None
    latency_ms: float = 0.0


def heuristic_score(ctx: PolicyContext, weights: dict,
                    reserve_floor: int) -> dict[Action, float]:
    """Score each action from the class base weights plus the behavioral
    couplings: losses pull toward gearing up or logging off, an exhausted
    session pulls offline, a thin wallet pulls into battle, surplus loot
    pulls toward selling."""
    base = weights["base_weight"][ctx.profile.profile_class.value]
    scores = {a: float(base[a.value]) for a in ACTION_ORDER}
    scores[Action.BUY] += (weights["beta_loss_buy"] * ctx.loss_streak()
                           * ctx.profile.spend_propensity)
    if ctx.last_was_loss():
        scores[Action.OFFLINE] += (weights["beta_loss_quit"]
                                   * (1.0 - ctx.profile.frustration_tolerance))
    if ctx.session_steps_remaining <= 0:
        scores[Action.OFFLINE] += weights["beta_session_end"]
    if ctx.balance < reserve_floor:
        scores[Action.BATTLE] += weights["beta_broke_battle"]
    if ctx.surplus_tradables > 0:
        scores[Action.SELL] += weights["beta_surplus_sell"]
    return scores


def softmax_sample(scores: dict[Action, float], temperature: float,
                   mask: tuple[Action, ...], rng: RandomStream) -> Action:
    actions = [a for a in ACTION_ORDER if a in mask]
    if not actions:
        raise PolicyFailure("no valid action to sample")
    if temperature < 1e-9:
        return max(actions, key=lambda a: (scores[a], -actions.index(a)))
    top = max(scores[a] for a in actions)
    weights = [math.exp((scores[a] - top) / temperature) for a in actions]
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for a, w in zip(actions, weights):
        acc += w
        if u < acc:
            return a
    return actions[-1]


class HeuristicPolicy:
    """Reference planner: softmax over heuristic_score, per-agent stream."""

    def __init__(self, weights: dict, reserve_floor: int, rng: RandomStream):
        self.weights = weights
        self.reserve_floor = reserve_floor
        self.rng = rng

    def decide(self, ctx: PolicyContext) -> ActionDecision:
        t0 = time.perf_counter()
        scores = heuristic_score(ctx, self.weights, self.reserve_floor)
        action = softmax_sample(scores, float(self.weights["temperature"]),
                                valid_actions(ctx.state), self.rng)
        rationale = self._rationale(ctx, action)
        return ActionDecision(action, rationale,
                              (time.perf_counter() - t0) * 1e3)

    def _rationale(self, ctx: PolicyContext, action: Action) -> str:
        """Names the dominant score term, for the agent-detail pane."""
        terms = [("class habit",
                  self.weights["base_weight"][ctx.profile.profile_class.value][action.value])]
        if action is Action.BUY and ctx.loss_streak():
            terms.append((f"gearing up after {ctx.loss_streak()} loss(es)",
                          self.weights["beta_loss_buy"] * ctx.loss_streak()
                          * ctx.profile.spend_propensity))
        if action is Action.OFFLINE and ctx.last_was_loss():
            terms.append(("tilted by the last defeat",
                          self.weights["beta_loss_quit"]
                          * (1.0 - ctx.profile.frustration_tolerance)))
        if action is Action.OFFLINE and ctx.session_steps_remaining <= 0:
            terms.append(("session exhausted", self.weights["beta_session_end"]))
        if action is Action.BATTLE and ctx.balance < self.reserve_floor:
            terms.append(("wallet below reserve floor",
                          self.weights["beta_broke_battle"]))
        if action is Action.SELL and ctx.surplus_tradables > 0:
            terms.append(("clearing surplus items",
                          self.weights["beta_surplus_sell"]))
        reason = max(terms, key=lambda t: t[1])[0]
        return f"{action.value}: {reason}"


class ReplayPolicy:
    """Replays a recorded trajectory: (uid, abs_step) -> action.

    When the recording kept the original rationale, replay reproduces the
    event stream byte for byte, not just the action sequence.
    """

    def __init__(self, trajectory: dict[tuple[int, int], Action],
                 rationales: Optional[dict[tuple[int, int], str]] = None):
        self.trajectory = trajectory
        self.rationales = rationales or {}

    @classmethod
    def from_corpus(cls, records: list[dict]) -> "ReplayPolicy":
        trajectory = {}
        rationales = {}
        for r in records:
            key = (int(r["uid"]), int(r["abs_step"]))
            trajectory[key] = Action(r["action"])
            if r.get("rationale") is not None:
                rationales[key] = r["rationale"]
        return cls(trajectory, rationales)

    def decide(self, ctx: PolicyContext) -> ActionDecision:
        key = (ctx.profile.uid, ctx.time.abs_step)
        action = self.trajectory.get(key)
        if action is None:
            raise PolicyFailure(f"no recorded action for uid={key[0]} step={key[1]}")
        rationale = self.rationales.get(key, "replayed from recorded trajectory")
        return ActionDecision(action, rationale)


class RemotePolicy:
    """One request/response line-JSON exchange per decision.

    Holds an outbound-pool slot for the duration of the call. Timeouts,
    malformed replies, and unknown actions all surface as PolicyFailure;
    the engine substitutes the heuristic fallback.
    """

    def __init__(self, host: str, port: int, pool: OutboundPool,
                 deadline_ms: float = 2000.0):
        self.host = host
        self.port = port
        self.pool = pool
        self.deadline_s = deadline_ms / 1e3

    def decide(self, ctx: PolicyContext) -> ActionDecision:
        t0 = time.perf_counter()
        request = ctx.to_wire() + "\n"
        try:
            with self.pool.slot(timeout=self.deadline_s):
                reply = self._exchange(request)
        except PolicyFailure:
            raise
        except (socket.timeout, TimeoutError):
            raise PolicyFailure("timeout") from None
        except OSError as e:
            raise PolicyFailure(f"transport: {e}") from None
        try:
            doc = json.loads(reply)
            action = Action(doc["action"])
        except (json.JSONDecodeError, KeyError, TypeError):
            raise PolicyFailure("malformed response") from None
        except ValueError:
            raise PolicyFailure("unknown action") from None
        latency = (time.perf_counter() - t0) * 1e3
        return ActionDecision(action, doc.get("rationale"), latency)

    def _exchange(self, request: str) -> str:
        deadline = time.perf_counter() + self.deadline_s
        with socket.create_connection((self.host, self.port),
                                      timeout=self.deadline_s) as sock:
            sock.sendall(request.encode("utf-8"))
            chunks = []
            while True:
                remaining = deadline - time.perf_counter()
                if remaining <= 0:
                    raise socket.timeout()
                sock.settimeout(remaining)
                chunk = sock.recv(65536)
                if not chunk:
                    break
                chunks.append(chunk)
                if b"\n" in chunk:
                    break
        return b"".join(chunks).split(b"\n", 1)[0].decode("utf-8")
