"""Synthetic ground truth: populations, season match logs, corpora.

The season generator draws from the cluster table's true curves with the
same sampling structure the battle service uses, so it doubles as the
oracle the fitted model is tested against. Everything is deterministic
under (spec, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Optional

from .domain import AgentState, Event, PlayerProfile, ProfileClass
from .rng import RandomStream

CORPUS_VERSION = 1


class DatagenError(Exception):
    pass


class InvalidSpec(DatagenError):
    pass


def _truncated_normal(stream: RandomStream, mean: float, spread: float,
                      lo: float, hi: float) -> float:
    if spread <= 0:
        return min(hi, max(lo, mean))
    for _ in range(64):
        x = stream.normal(mean, spread)
        if lo <= x <= hi:
            return x
    return min(hi, max(lo, mean))


def _apportion(weights: list[float], n: int) -> list[int]:
    """Largest-remainder apportionment; counts sum to n exactly."""
    quotas = [w * n for w in weights]
    counts = [int(math.floor(q)) for q in quotas]
    short = n - sum(counts)
    remainders = sorted(range(len(weights)),
                        key=lambda i: (quotas[i] - counts[i], -i),
                        reverse=True)
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def _validate_specs(specs: dict) -> list[dict]:
    clusters = specs.get("clusters")
    if not clusters:
        raise InvalidSpec("spec has no clusters")
    total = sum(c["mix_weight"] for c in clusters)
    if abs(total - 1.0) > 1e-9:
        raise InvalidSpec(f"mix_weights sum to {total}, expected 1")
    return clusters


def generate_population(specs: dict, n: int, seed: int) -> list[PlayerProfile]:
    """n profiles apportioned over the clusters; class counts are within
    one of n * mix_weight, uids run 1..n in cluster order."""
    if n < 1:
        raise InvalidSpec("population size must be >= 1")
    clusters = _validate_specs(specs)
    counts = _apportion([c["mix_weight"] for c in clusters], n)
    out: list[PlayerProfile] = []
    uid = 1
    for cluster, count in zip(clusters, counts):
        pc = ProfileClass(cluster["profile_class"])
        fields = cluster["fields"]
        for _ in range(count):
            stream = RandomStream(seed, f"profile:{uid}")
            draw = {
                name: _truncated_normal(stream, *fields[name])
                for name in ("skill", "frustration_tolerance",
                             "spend_propensity", "activeness",
                             "habit_informal_trade")
            }
            length = max(1, int(round(_truncated_normal(
                stream, *fields["session_length_mean"]))))
            out.append(PlayerProfile(
                uid=uid, profile_class=pc,
                session_length_mean=length, **draw))
            uid += 1
    return out


# --- true curves (generator ground truth) -------------------------------------

def true_win_probability(specs: dict, profile_class: ProfileClass,
                         n: int) -> float:
    for c in specs["clusters"]:
        if c["profile_class"] == profile_class.value:
            z = c["true_win_curve"]["w0"] + c["true_win_curve"]["w1"] * n
            return 1.0 / (1.0 + math.exp(-z))
    raise InvalidSpec(f"no cluster for {profile_class.value}")


def true_income_mean(specs: dict, profile_class: ProfileClass, n: int) -> float:
    for c in specs["clusters"]:
        if c["profile_class"] == profile_class.value:
            ic = c["true_income_curve"]
            return ic["base"] + ic["slope"] * n
    raise InvalidSpec(f"no cluster for {profile_class.value}")


def generate_season_logs(specs: dict, n_players: int, seed: int,
                         matches_range: tuple[int, int] = (35, 40),
                         seasons: tuple[str, ...] = ("s1", "s2"),
                         ) -> dict[str, list[dict]]:
    """Per-season match logs drawn from the true curves with fresh noise.

    Each player's season match count is uniform in matches_range; the two
    seasons share players and curves but no records (no leakage).
    """
    lo, hi = matches_range
    if not (1 <= lo <= hi <= 200):
        raise InvalidSpec("matches_range must sit within [1, 200]")
    clusters = _validate_specs(specs)
    counts = _apportion([c["mix_weight"] for c in clusters], n_players)

    logs: dict[str, list[dict]] = {s: [] for s in seasons}
    uid = 1
    for cluster, count in zip(clusters, counts):
        pc = cluster["profile_class"]
        wc, ic = cluster["true_win_curve"], cluster["true_income_curve"]
        for _ in range(count):
            for season in seasons:
                stream = RandomStream(seed, f"{season}:match:{uid}")
                n_matches = stream.randint(lo, hi)
                for n in range(1, n_matches + 1):
                    z = wc["w0"] + wc["w1"] * n
                    p = 1.0 / (1.0 + math.exp(-z))
                    win = stream.random() < p
                    mean = ic["base"] + ic["slope"] * n
                    income = mean
                    if ic["sigma"] > 0:
                        income *= stream.lognormal_factor(ic["sigma"])
                    logs[season].append({
                        "season": season, "uid": uid, "profile_class": pc,
                        "n": n, "win": win,
                        "income": max(0, int(round(income))),
                    })
            uid += 1
    return logs


# --- line-delimited record files ----------------------------------------------

def write_records(path: str | Path, records: Iterable[dict],
                  header: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"kind": "header", **header},
                                sort_keys=True, separators=(",", ":")) + "\n")
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def read_records(path: str | Path) -> tuple[Optional[dict], list[dict]]:
    lines = Path(path).read_text("utf-8").splitlines()
    header = None
    records = []
    for i, line in enumerate(lines):
        doc = json.loads(line)
        if i == 0 and doc.get("kind") == "header":
            header = doc
        else:
            records.append(doc)
    return header, records


def records_fingerprint(records: list[dict]) -> str:
    canon = sorted(json.dumps(r, sort_keys=True, separators=(",", ":"))
                   for r in records)
    h = hashlib.sha256()
    for line in canon:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def read_corpus(path: str | Path) -> list[dict]:
    _, records = read_records(path)
    return records


# --- trajectory corpus ---------------------------------------------------------

def export_trajectories(events: Iterable[Event],
                        population: list[PlayerProfile],
                        steps_per_day: int, day: int) -> list[dict]:
    """One record per decision point of `day`: context features + action.

    Reconstructed purely from the log: the state/balance/outcome trackers
    below replay the same movements the engine made.
    """
    classes = {p.uid: p.profile_class.value for p in population}
    state = {p.uid: AgentState.OFFLINE.value for p in population}
    balance: dict[int, int] = {}
    loss_streak: dict[int, int] = {}
    last_win: dict[int, Optional[bool]] = {}
    out: list[dict] = []
    lo, hi = day * steps_per_day, (day + 1) * steps_per_day - 1
    saw_day = False

    for ev in events:
        t = ev.step.abs_step
        if t > hi:
            break
        if t >= lo:
            saw_day = True
        p = ev.payload
        kind = p["kind"]
        if kind == "state_transition":
            state[ev.uid] = p["to"]
        elif kind == "battle_resolved":
            balance[ev.uid] = balance.get(ev.uid, 0) + p["income"]
            if p["win"]:
                loss_streak[ev.uid] = 0
            else:
                loss_streak[ev.uid] = loss_streak.get(ev.uid, 0) + 1
            last_win[ev.uid] = p["win"]
        elif kind == "npc_purchase":
            balance[ev.uid] = balance.get(ev.uid, 0) - p["price"]
        elif kind == "trade_executed":
            balance[p["buyer"]] = balance.get(p["buyer"], 0) - p["price"]
            balance[p["seller"]] = (balance.get(p["seller"], 0)
                                    + p["price"] - p["tax"])
        elif kind == "informal_trade_executed":
            pay = p.get("payment", 0)
            balance[p["u2"]] = balance.get(p["u2"], 0) - pay
            balance[p["u1"]] = balance.get(p["u1"], 0) + pay
        elif kind == "action_chosen" and lo <= t <= hi:
            uid = ev.uid
            out.append({
                "uid": uid,
                "abs_step": t,
                "day": day,
                "state": state[uid],
                "balance_delta": balance.get(uid, 0),
                "profile_class": classes[uid],
                "loss_streak": loss_streak.get(uid, 0),
                "last_win": last_win.get(uid),
                "action": p["action"],
                "rationale": p.get("rationale_text"),
            })
    if not saw_day and day != 0:
        raise DatagenError(f"log does not reach day {day}")
    return out
