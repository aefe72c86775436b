"""Run configuration: file schema, validation, assets, mutable parameters.

A run config is a single JSON document (see README for the schema) with a
top-level ``config_version``. The same document round-trips through the
control API, snapshots, and the CLI.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .domain import PlayerProfile

CONFIG_VERSION = 1

FEATURE_FLAGS = ("npc_shop_enabled", "black_market_enabled", "informal_trade_enabled")

DEFAULT_FLAGS = {
    "npc_shop_enabled": True,
    "black_market_enabled": True,
    "informal_trade_enabled": False,
}


class ConfigError(Exception):
    pass


def _load_asset(name: str) -> dict:
    text = resources.files("mmosim.assets").joinpath(name).read_text("utf-8")
    return json.loads(text)


def load_item_catalog(source: Optional[str | Path] = None) -> list[dict]:
    """Item catalog records; `source` overrides the packaged default."""
    if source is None:
        doc = _load_asset("item_catalog.json")
    else:
        doc = json.loads(Path(source).read_text("utf-8"))
    items = doc["items"]
    seen = set()
    for it in items:
        if it["npc_price"] <= 0:
            raise ConfigError(f"item {it['item_id']}: npc_price must be > 0")
        if it["item_id"] in seen:
            raise ConfigError(f"duplicate item_id {it['item_id']}")
        seen.add(it["item_id"])
    return items


def load_cluster_specs(source: Optional[str | Path] = None) -> dict:
    if source is None:
        return _load_asset("default_clusters.json")
    return json.loads(Path(source).read_text("utf-8"))


def load_policy_weights(source: Optional[str | Path] = None) -> dict:
    if source is None:
        return _load_asset("policy_weights.json")
    return json.loads(Path(source).read_text("utf-8"))


@dataclass
class RunConfig:
    """Everything a run needs; value-identical configs hash identically."""

    run_id: str
    seed: int
    steps_per_day: int = 24
    total_days: int = 7
    # Either an explicit profile list or a generator spec
    # {"clusters": "default"|path, "n": int, "seed": int}.
    population: list[dict] | dict = field(default_factory=dict)
    tax_rate: float = 0.05
    feature_flags: dict[str, bool] = field(default_factory=lambda: dict(DEFAULT_FLAGS))
    battle_duration_steps: int = 1
    max_outbound_inflight: int = 64
    policy_binding: dict[str, Any] = field(default_factory=dict)
    time_acceleration: float = 0.0
    initial_balance: int = 1000
    reserve_initial: int = 10_000_000
    p_fraud: float = 0.15
    habit_decay: float = 0.7
    resale_discount: float = 0.9
    lambda_win: float = 1.0
    history_window: int = 32
    workers: int = 1
    snapshot_every_days: int = 1
    groups: dict[str, list[int]] = field(default_factory=dict)
    policy_weights: Optional[dict] = None
    item_catalog: Optional[list[dict]] = None
    interventions: list[dict] = field(default_factory=list)
    mqtt_bridge: Optional[dict] = None
    # None derives parametric curves from the cluster asset; a path loads
    # fitted parameters saved by `sim fit`.
    battle_model: Optional[str] = None

    def validate(self) -> None:
        if self.steps_per_day < 1:
            raise ConfigError("steps_per_day must be >= 1")
        if self.total_days < 1:
            raise ConfigError("total_days must be >= 1")
        if not (0.0 <= self.tax_rate < 1.0):
            raise ConfigError("tax_rate must be in [0, 1)")
        if not (0.0 <= self.p_fraud <= 1.0):
            raise ConfigError("p_fraud must be in [0, 1]")
        if not (0.0 < self.habit_decay <= 1.0):
            raise ConfigError("habit_decay must be in (0, 1]")
        if self.lambda_win < 1.0:
            raise ConfigError("lambda_win must be >= 1")
        if self.battle_duration_steps < 1:
            raise ConfigError("battle_duration_steps must be >= 1")
        if self.max_outbound_inflight < 1:
            raise ConfigError("max_outbound_inflight must be >= 1")
        if self.initial_balance < 0 or self.reserve_initial < 0:
            raise ConfigError("balances must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.population:
            raise ConfigError("population must be a profile list or generator spec")
        for name in self.feature_flags:
            if name not in FEATURE_FLAGS:
                raise ConfigError(f"unknown feature flag: {name}")
        if isinstance(self.population, list) and not self.population:
            raise ConfigError("population list is empty")

    @property
    def total_steps(self) -> int:
        return self.steps_per_day * self.total_days

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        doc = {"config_version": CONFIG_VERSION}
        for name in self.__dataclass_fields__:
            doc[name] = copy.deepcopy(getattr(self, name))
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("config_version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version: {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "run_id" not in doc or "seed" not in doc:
            raise ConfigError("config requires run_id and seed")
        flags = dict(DEFAULT_FLAGS)
        flags.update(doc.get("feature_flags") or {})
        doc["feature_flags"] = flags
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        """Loads a config document; `builtin:<name>` resolves a packaged
        scenario (e.g. builtin:scenario_black_market)."""
        if isinstance(path, str) and path.startswith("builtin:"):
            doc = _load_asset(path.split(":", 1)[1] + ".json")
            return cls.from_dict(doc)
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(doc)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve_population(self) -> list[PlayerProfile]:
        """Materializes the population (explicit list or generator spec)."""
        if isinstance(self.population, list):
            return [PlayerProfile.from_dict(p) for p in self.population]
        from . import datagen

        spec = self.population
        source = spec.get("clusters", "default")
        specs = load_cluster_specs(None if source == "default" else source)
        return datagen.generate_population(
            specs, int(spec["n"]), int(spec.get("seed", self.seed))
        )

    def resolve_catalog(self) -> list[dict]:
        if self.item_catalog is not None:
            return self.item_catalog
        return load_item_catalog()

    def resolve_policy_weights(self) -> dict:
        base = load_policy_weights()
        if self.policy_weights:
            base = {**base, **self.policy_weights}
            if "base_weight" in self.policy_weights:
                merged = dict(load_policy_weights()["base_weight"])
                merged.update(self.policy_weights["base_weight"])
                base["base_weight"] = merged
        return base


# --- mutable parameters (intervention targets) -------------------------------

def _unit_interval(v: float) -> float:
    v = float(v)
    if not (0.0 <= v <= 1.0):
        raise ValueError("value must be in [0, 1]")
    return v


def _rate(v: float) -> float:
    v = float(v)
    if not (0.0 <= v < 1.0):
        raise ValueError("value must be in [0, 1)")
    return v


def _decay(v: float) -> float:
    v = float(v)
    if not (0.0 < v <= 1.0):
        raise ValueError("value must be in (0, 1]")
    return v


def _multiplier(v: float) -> float:
    v = float(v)
    if v < 1.0:
        raise ValueError("value must be >= 1")
    return v


def _price(v) -> int:
    v = int(v)
    if v <= 0:
        raise ValueError("price must be > 0")
    return v


# Dotted parameter paths a live intervention may set.
MUTABLE_PARAMS = {
    "tax_rate": _rate,
    "p_fraud": _unit_interval,
    "habit_decay": _decay,
    "battle.lambda_win": _multiplier,
    # plus "npc_price.<item_id>" handled below
}


def validate_param(path: str, value, catalog_ids: set[str]):
    """Returns the coerced value or raises for unknown path / bad value."""
    if path in MUTABLE_PARAMS:
        return MUTABLE_PARAMS[path](value)
    if path.startswith("npc_price."):
        item_id = path.split(".", 1)[1]
        if item_id not in catalog_ids:
            raise KeyError(path)
        return _price(value)
    raise KeyError(path)
