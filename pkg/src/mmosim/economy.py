"""Currency sinks and item flow.

Three channels: the NPC shop (spend recycles into the system reserve),
the black market (direct-listing player board; the transaction tax is
destroyed), and legacy informal trading (untaxed, trust-based, fraud-prone).
The service mutates inventories/listings and the ledger; the engine wraps
results into log events.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Optional

from .ledger import (
    BURN, SYSTEM_RESERVE, Ledger, TransferKind, player_account,
    round_half_up, tax_due,
)
from .rng import RandomStream


class EconomyError(Exception):
    pass


class ChannelDisabled(EconomyError):
    pass


class UnknownItem(EconomyError):
    pass


class NotOwned(EconomyError):
    pass


class NotTradable(EconomyError):
    pass


class ListingClosed(EconomyError):
    pass


class SelfTrade(EconomyError):
    pass


class NoChannel(EconomyError):
    pass


class ListingStatus(str, Enum):
    OPEN = "open"
    FILLED = "filled"
    CANCELLED = "cancelled"


class SellChannel(str, Enum):
    BLACK_MARKET = "black_market"
    INFORMAL = "informal"


@dataclass
class Listing:
    listing_id: int
    seller: int
    item_id: str
    ask_price: int
    created_step: int
    status: ListingStatus = ListingStatus.OPEN

    def to_dict(self) -> dict:
        return {
            "listing_id": self.listing_id, "seller": self.seller,
            "item_id": self.item_id, "ask_price": self.ask_price,
            "created_step": self.created_step, "status": self.status.value,
        }


def choose_sell_channel(profile, channels: dict[str, bool], rng: RandomStream,
                        days_since_market: Optional[int],
                        habit_decay: float) -> SellChannel:
    """Habit-weighted channel choice when both trade channels exist.

    With both channels open, the legacy informal habit decays per day since
    the black market was enabled: P(informal) = habit * decay^days.
    """
    informal_open = channels.get("informal_trade", False)
    market_open = channels.get("black_market", False)
    if not informal_open and not market_open:
        raise NoChannel("no trade channel is enabled")
    if informal_open and not market_open:
        return SellChannel.INFORMAL
    if market_open and not informal_open:
        return SellChannel.BLACK_MARKET
    days = 0 if days_since_market is None else max(0, days_since_market)
    p_informal = profile.habit_informal_trade * (habit_decay ** days)
    if rng.random() < p_informal:
        return SellChannel.INFORMAL
    return SellChannel.BLACK_MARKET


class EconomyService:
    def __init__(self, catalog: list[dict], ledger: Ledger):
        self.ledger = ledger
        self.items = {it["item_id"]: dict(it) for it in catalog}
        self.prices = {it["item_id"]: int(it["npc_price"]) for it in catalog}
        self.inventories: dict[int, Counter] = {}
        self.listings: dict[int, Listing] = {}
        self._next_listing_id = 1
        self.tombstones: list[dict] = []
        self.minted: Counter = Counter()

    # -- helpers ---------------------------------------------------------

    def open_inventory(self, uid: int) -> None:
        self.inventories.setdefault(uid, Counter())

    def npc_price(self, item_id: str) -> int:
        if item_id not in self.prices:
            raise UnknownItem(item_id)
        return self.prices[item_id]

    def set_npc_price(self, item_id: str, price: int) -> None:
        if item_id not in self.prices:
            raise UnknownItem(item_id)
        self.prices[item_id] = int(price)

    def owns(self, uid: int, item_id: str) -> bool:
        return self.inventories.get(uid, Counter())[item_id] > 0

    def cheapest_npc_price(self) -> int:
        return min(self.prices.values())

    def surplus_items(self, uid: int) -> list[str]:
        """Tradable units the agent can part with, best value first.

        Loot is always surplus; of everything else the agent keeps one copy.
        Returns one entry per spare unit.
        """
        inv = self.inventories.get(uid, Counter())
        out = []
        for item_id, count in inv.items():
            it = self.items[item_id]
            if not it["tradable"]:
                continue
            spare = count if it["category"] == "loot" else count - 1
            out.extend([item_id] * max(0, spare))
        out.sort(key=lambda i: (-self.prices[i], i))
        return out

    def affordable_gear(self, uid: int, balance: int) -> Optional[str]:
        """Most expensive gear within budget (agents buy up, not down)."""
        best = None
        for item_id, it in self.items.items():
            if it["category"] != "gear":
                continue
            p = self.prices[item_id]
            if p <= balance and (best is None or p > self.prices[best]):
                best = item_id
        return best

    def best_open_listing(self, item_id: str, buyer: int,
                          max_price: int) -> Optional[Listing]:
        """Cheapest open listing for the item: price, then time, then id."""
        candidates = [
            l for l in self.listings.values()
            if l.status is ListingStatus.OPEN and l.item_id == item_id
            and l.seller != buyer and l.ask_price <= max_price
        ]
        if not candidates:
            return None
        return min(candidates, key=lambda l: (l.ask_price, l.created_step,
                                              l.listing_id))

    # -- operations ------------------------------------------------------

    def npc_buy(self, uid: int, item_id: str, step: int,
                enabled: bool) -> dict:
        if not enabled:
            raise ChannelDisabled("npc shop is disabled")
        price = self.npc_price(item_id)
        self.ledger.transfer(step, player_account(uid), SYSTEM_RESERVE,
                             price, TransferKind.NPC_PURCHASE)
        self.inventories[uid][item_id] += 1
        self.minted[item_id] += 1
        return {"kind": "npc_purchase", "item": item_id, "price": price}

    def market_sell(self, uid: int, item_id: str, ask_price: int, step: int,
                    enabled: bool) -> Listing:
        if not enabled:
            raise ChannelDisabled("black market is disabled")
        if not self.owns(uid, item_id):
            raise NotOwned(f"{uid} does not own {item_id}")
        if not self.items[item_id]["tradable"]:
            raise NotTradable(item_id)
        if ask_price <= 0:
            raise EconomyError("ask_price must be > 0")
        self.inventories[uid][item_id] -= 1  # escrow
        listing = Listing(self._next_listing_id, uid, item_id, ask_price, step)
        self._next_listing_id += 1
        self.listings[listing.listing_id] = listing
        return listing

    def cancel_listing(self, uid: int, listing_id: int) -> Listing:
        listing = self.listings.get(listing_id)
        if listing is None or listing.status is not ListingStatus.OPEN:
            raise ListingClosed(f"listing {listing_id} is not open")
        if listing.seller != uid:
            raise NotOwned("only the seller may cancel")
        listing.status = ListingStatus.CANCELLED
        self.inventories[uid][listing.item_id] += 1
        return listing

    def market_buy(self, buyer: int, listing_id: int, tax_rate: float,
                   step: int) -> dict:
        listing = self.listings.get(listing_id)
        if listing is None or listing.status is not ListingStatus.OPEN:
            raise ListingClosed(f"listing {listing_id} is not open")
        if listing.seller == buyer:
            raise SelfTrade("buyer and seller are the same agent")
        price = listing.ask_price
        tax = tax_due(price, tax_rate)
        # Buyer pays the full ask; the seller nets ask minus tax.
        proceeds = price - tax
        buyer_acct = player_account(buyer)
        if self.ledger.player_balance(buyer) < price:
            from .ledger import InsufficientFunds
            raise InsufficientFunds(f"buyer {buyer} cannot cover {price}")
        if proceeds > 0:
            self.ledger.transfer(step, buyer_acct,
                                 player_account(listing.seller),
                                 proceeds, TransferKind.MARKET_TRADE)
        if tax > 0:
            self.ledger.transfer(step, buyer_acct, BURN, tax, TransferKind.TAX)
        listing.status = ListingStatus.FILLED
        self.inventories[buyer][listing.item_id] += 1
        return {
            "kind": "trade_executed", "listing_id": listing_id,
            "buyer": buyer, "seller": listing.seller,
            "item": listing.item_id, "price": price, "tax": tax,
        }

    def informal_trade(self, u1: int, u2: int, item_id: str,
                       rng: RandomStream, p_fraud: float, price: int,
                       step: int, enabled: bool) -> dict:
        if not enabled:
            raise ChannelDisabled("informal trading is disabled")
        if not self.owns(u1, item_id):
            raise NotOwned(f"{u1} does not own {item_id}")
        self.inventories[u1][item_id] -= 1
        fraud = rng.random() < p_fraud
        payment = 0
        if fraud:
            # The item vanishes with the scammer: tombstoned, no payment.
            self.tombstones.append({"item": item_id, "from": u1, "to": u2,
                                    "step": step})
        else:
            self.inventories[u2][item_id] += 1
            payment = min(price, self.ledger.player_balance(u2))
            if payment > 0:
                self.ledger.transfer(step, player_account(u2),
                                     player_account(u1), payment,
                                     TransferKind.INFORMAL_TRADE)
        return {"kind": "informal_trade_executed", "u1": u1, "u2": u2,
                "item": item_id, "fraud": fraud, "payment": payment}

    def discounted_price(self, item_id: str, ratio: float) -> int:
        """Resale/side-payment price: NPC price scaled, at least 1 credit."""
        exact = Decimal(self.npc_price(item_id)) * Decimal(str(ratio))
        return max(1, round_half_up(exact))

    # -- audits ----------------------------------------------------------

    def item_census(self) -> dict[str, int]:
        """minted == held + escrowed + tombstoned must hold per item."""
        held = Counter()
        for inv in self.inventories.values():
            held.update(inv)
        escrowed = Counter(
            l.item_id for l in self.listings.values()
            if l.status is ListingStatus.OPEN
        )
        tombstoned = Counter(t["item"] for t in self.tombstones)
        return {
            item: held[item] + escrowed[item] + tombstoned[item]
            for item in set(held) | set(escrowed) | set(tombstoned)
        }

    # -- snapshot ----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "prices": dict(sorted(self.prices.items())),
            "inventories": {
                str(u): dict(sorted(c.items()))
                for u, c in sorted(self.inventories.items()) if +c
            },
            "listings": [self.listings[k].to_dict()
                         for k in sorted(self.listings)],
            "next_listing_id": self._next_listing_id,
            "tombstones": list(self.tombstones),
            "minted": dict(sorted(self.minted.items())),
        }

    def restore(self, snap: dict) -> None:
        self.prices.update(snap["prices"])
        for uid in self.inventories:
            self.inventories[uid] = Counter()
        for uid_s, items in snap["inventories"].items():
            self.inventories[int(uid_s)] = Counter(items)
        self.listings = {}
        for d in snap["listings"]:
            self.listings[d["listing_id"]] = Listing(
                d["listing_id"], d["seller"], d["item_id"], d["ask_price"],
                d["created_step"], ListingStatus(d["status"]))
        self._next_listing_id = snap["next_listing_id"]
        self.tombstones = list(snap["tombstones"])
        self.minted = Counter(snap["minted"])
