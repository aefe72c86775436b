"""Shared simulation vocabulary: states, actions, profiles, time, events.

Currency is integer credits throughout; there are no fractional credits
anywhere in the system, which lets conservation be asserted exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional


class Action(str, Enum):
    OFFLINE = "offline"
    BATTLE = "battle"
    BUY = "buy"
    SELL = "sell"


class AgentState(str, Enum):
    OFFLINE = "offline"
    ONLINE = "online"
    MARKET = "market"
    BATTLE = "battle"


class ProfileClass(str, Enum):
    STABLE_DEVELOPMENT = "stable_development"
    NOVICE = "novice"
    WEALTH_ELITE = "wealth_elite"
    CASUAL = "casual"
    HIGH_SKILL = "high_skill"

    @property
    def roman(self) -> str:
        return _ROMAN[self]

    @classmethod
    def parse(cls, text: str) -> "ProfileClass":
        """Accepts the value name or the roman numeral used in reports."""
        t = text.strip().lower()
        for pc in cls:
            if t == pc.value or t == pc.name.lower():
                return pc
        for pc, numeral in _ROMAN.items():
            if text.strip().upper() == numeral:
                return pc
        raise ValueError(f"unknown profile class: {text!r}")


_ROMAN = {
    ProfileClass.STABLE_DEVELOPMENT: "I",
    ProfileClass.NOVICE: "II",
    ProfileClass.WEALTH_ELITE: "III",
    ProfileClass.CASUAL: "IV",
    ProfileClass.HIGH_SKILL: "V",
}


_UNIT = ("skill", "frustration_tolerance", "spend_propensity",
         "activeness", "habit_informal_trade")


@dataclass(frozen=True)
class PlayerProfile:
    """Behavioral parameter vector; drives the policy and battle model."""

    uid: int
    profile_class: ProfileClass
    skill: float
    frustration_tolerance: float
    spend_propensity: float
    activeness: float
    session_length_mean: int
    habit_informal_trade: float

    def __post_init__(self):
        for name in _UNIT:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.session_length_mean < 1:
            raise ValueError("session_length_mean must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "uid": self.uid,
            "profile_class": self.profile_class.value,
            "skill": self.skill,
            "frustration_tolerance": self.frustration_tolerance,
            "spend_propensity": self.spend_propensity,
            "activeness": self.activeness,
            "session_length_mean": self.session_length_mean,
            "habit_informal_trade": self.habit_informal_trade,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PlayerProfile":
        return cls(
            uid=int(d["uid"]),
            profile_class=ProfileClass(d["profile_class"]),
            skill=float(d["skill"]),
            frustration_tolerance=float(d["frustration_tolerance"]),
            spend_propensity=float(d["spend_propensity"]),
            activeness=float(d["activeness"]),
            session_length_mean=int(d["session_length_mean"]),
            habit_informal_trade=float(d["habit_informal_trade"]),
        )


@dataclass(frozen=True, order=True)
class SimTime:
    """Discrete clock position: abs_step = day * steps_per_day + step_in_day."""

    abs_step: int
    steps_per_day: int

    def __post_init__(self):
        if self.steps_per_day < 1:
            raise ValueError("steps_per_day must be >= 1")
        if self.abs_step < 0:
            raise ValueError("abs_step must be >= 0")

    @property
    def day(self) -> int:
        return self.abs_step // self.steps_per_day

    @property
    def step_in_day(self) -> int:
        return self.abs_step % self.steps_per_day

    def to_dict(self) -> dict[str, int]:
        return {
            "day": self.day,
            "step_in_day": self.step_in_day,
            "abs_step": self.abs_step,
        }


# --- state graph ------------------------------------------------------------

_EDGES: dict[AgentState, frozenset[AgentState]] = {
    AgentState.OFFLINE: frozenset({AgentState.ONLINE}),
    AgentState.ONLINE: frozenset(
        {AgentState.BATTLE, AgentState.MARKET, AgentState.OFFLINE}
    ),
    AgentState.BATTLE: frozenset({AgentState.ONLINE}),
    AgentState.MARKET: frozenset({AgentState.ONLINE, AgentState.MARKET}),
}


def legal_transitions(state: AgentState) -> frozenset[AgentState]:
    """Static adjacency of the four-state player graph."""
    return _EDGES[state]


class IllegalDecisionPoint(Exception):
    """Raised when an action is asked of a state that never plans."""


_ACTION_TARGET = {
    Action.OFFLINE: AgentState.OFFLINE,
    Action.BATTLE: AgentState.BATTLE,
    Action.BUY: AgentState.MARKET,
    Action.SELL: AgentState.MARKET,
}


def action_target(action: Action, current: AgentState) -> AgentState:
    """Target state of an action taken at a decision point.

    Decisions happen only in the lobby (Online) or in the Market; the
    engine routes Market -> Offline/Battle through the lobby so that every
    emitted transition lies on a legal edge.
    """
    if current not in (AgentState.ONLINE, AgentState.MARKET):
        raise IllegalDecisionPoint(f"no decisions are made in state {current.value}")
    return _ACTION_TARGET[action]


def valid_actions(current: AgentState) -> tuple[Action, ...]:
    """Actions available at a decision point (all four, in both states)."""
    if current not in (AgentState.ONLINE, AgentState.MARKET):
        return ()
    return (Action.OFFLINE, Action.BATTLE, Action.BUY, Action.SELL)


# --- events -----------------------------------------------------------------

# Payload kinds of the append-only event stream. Every consumer (analytics,
# persistence, api, console) reads these records and nothing else.
EVENT_KINDS = (
    "state_transition",
    "action_chosen",
    "battle_resolved",
    "trade_executed",
    "informal_trade_executed",
    "npc_purchase",
    "intervention_applied",
    "message_delivered",
    "session_start",
    "session_end",
    "policy_failure",
)


@dataclass(frozen=True)
class Event:
    """One record of the append-only, strictly seq-ordered event stream."""

    seq: int
    step: SimTime
    payload: dict[str, Any]
    uid: Optional[int] = None

    def __post_init__(self):
        kind = self.payload.get("kind")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind!r}")

    @property
    def kind(self) -> str:
        return self.payload["kind"]

    def to_record(self) -> str:
        """Canonical one-line UTF-8 serialization (stable byte content)."""
        doc = {
            "seq": self.seq,
            "step": self.step.to_dict(),
            "uid": self.uid,
            "payload": self.payload,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_record(cls, line: str, steps_per_day: int) -> "Event":
        doc = json.loads(line)
        return cls(
            seq=doc["seq"],
            step=SimTime(doc["step"]["abs_step"], steps_per_day),
            payload=doc["payload"],
            uid=doc["uid"],
        )


def state_transition(seq: int, step: SimTime, uid: int,
                     src: AgentState, dst: AgentState) -> Event:
    if dst not in legal_transitions(src):
        raise ValueError(f"illegal transition {src.value} -> {dst.value}")
    return Event(seq, step, {"kind": "state_transition",
                             "from": src.value, "to": dst.value}, uid)
