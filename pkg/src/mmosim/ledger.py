"""Double-entry integer-currency accounting.

Three account kinds: per-player accounts, a system reserve that battle
rewards are paid from (and NPC spend recycles into), and a burn account
that only ever grows (transaction taxes). Every movement is a Transfer;
the sum of all balances is invariant over a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Optional

SYSTEM_RESERVE = "system_reserve"
BURN = "burn"


def player_account(uid: int) -> str:
    return f"player:{uid}"


def parse_account(name: str) -> Optional[int]:
    """Returns the uid for a player account, None for system accounts."""
    if name.startswith("player:"):
        return int(name.split(":", 1)[1])
    if name in (SYSTEM_RESERVE, BURN):
        return None
    raise ValueError(f"unknown account: {name!r}")


class TransferKind(str, Enum):
    BATTLE_REWARD = "battle_reward"
    NPC_PURCHASE = "npc_purchase"
    MARKET_TRADE = "market_trade"
    TAX = "tax"
    INFORMAL_TRADE = "informal_trade"
    ADJUSTMENT = "adjustment"


@dataclass(frozen=True)
class Transfer:
    seq: int
    abs_step: int
    src: str
    dst: str
    amount: int
    kind: TransferKind

    def to_record(self) -> str:
        doc = {"seq": self.seq, "step": self.abs_step, "from": self.src,
               "to": self.dst, "amount": self.amount, "kind": self.kind.value}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_record(cls, line: str) -> "Transfer":
        d = json.loads(line)
        return cls(d["seq"], d["step"], d["from"], d["to"], d["amount"],
                   TransferKind(d["kind"]))


class LedgerError(Exception):
    pass


class InsufficientFunds(LedgerError):
    pass


def round_half_up(value: float | Decimal, *, _q=Decimal("1")) -> int:
    """Round to the nearest credit, halves away from zero-point-five up."""
    return int(Decimal(value).quantize(_q, rounding=ROUND_HALF_UP))


def tax_due(price: int, tax_rate: float) -> int:
    """Tax on a market trade: round_half_up(price * tax_rate), exactly.

    Computed in decimal so e.g. 99 * 0.05 taxes 5 credits (4.95 rounds up)
    regardless of binary float representation of the rate.
    """
    return round_half_up(Decimal(price) * Decimal(str(tax_rate)))


class Ledger:
    """Balance book plus the ordered transfer record."""

    def __init__(self, reserve: int = 0):
        if reserve < 0:
            raise ValueError("reserve must be >= 0")
        self._players: dict[int, int] = {}
        self._reserve = reserve
        self._burn = 0
        self._next_seq = 1
        self.transfers: list[Transfer] = []

    # -- setup ---------------------------------------------------------------

    def open_player(self, uid: int, balance: int) -> None:
        if uid in self._players:
            raise LedgerError(f"player {uid} already has an account")
        if balance < 0:
            raise ValueError("opening balance must be >= 0")
        self._players[uid] = balance

    # -- reads ---------------------------------------------------------------

    def balance(self, account: str) -> int:
        if account == SYSTEM_RESERVE:
            return self._reserve
        if account == BURN:
            return self._burn
        return self._players[parse_account(account)]

    def player_balance(self, uid: int) -> int:
        return self._players[uid]

    @property
    def reserve(self) -> int:
        return self._reserve

    @property
    def burn(self) -> int:
        return self._burn

    def players_total(self) -> int:
        return sum(self._players.values())

    def total(self) -> int:
        return self.players_total() + self._reserve + self._burn

    # -- writes --------------------------------------------------------------

    def transfer(self, abs_step: int, src: str, dst: str, amount: int,
                 kind: TransferKind) -> Transfer:
        if amount <= 0:
            raise LedgerError("transfer amount must be > 0")
        if src == dst:
            raise LedgerError("transfer endpoints must differ")
        if kind is TransferKind.BATTLE_REWARD and src != SYSTEM_RESERVE:
            raise LedgerError("battle rewards are paid from the reserve")
        if kind is TransferKind.TAX and dst != BURN:
            raise LedgerError("tax is paid to the burn account")
        if kind is TransferKind.NPC_PURCHASE and dst != SYSTEM_RESERVE:
            raise LedgerError("NPC spend recycles into the reserve")
        if src == BURN:
            raise LedgerError("the burn account never pays out")
        if self.balance(src) < amount:
            raise InsufficientFunds(f"{src} holds {self.balance(src)} < {amount}")

        self._debit(src, amount)
        self._credit(dst, amount)
        t = Transfer(self._next_seq, abs_step, src, dst, amount, kind)
        self._next_seq += 1
        self.transfers.append(t)
        return t

    def _debit(self, account: str, amount: int) -> None:
        if account == SYSTEM_RESERVE:
            self._reserve -= amount
        else:
            self._players[parse_account(account)] -= amount

    def _credit(self, account: str, amount: int) -> None:
        if account == SYSTEM_RESERVE:
            self._reserve += amount
        elif account == BURN:
            self._burn += amount
        else:
            self._players[parse_account(account)] += amount

    # -- snapshot ------------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "players": {str(u): b for u, b in sorted(self._players.items())},
            "reserve": self._reserve,
            "burn": self._burn,
            "next_seq": self._next_seq,
        }

    @classmethod
    def restore(cls, snap: dict) -> "Ledger":
        led = cls(reserve=snap["reserve"])
        led._players = {int(u): b for u, b in snap["players"].items()}
        led._burn = snap["burn"]
        led._next_seq = snap["next_seq"]
        return led
