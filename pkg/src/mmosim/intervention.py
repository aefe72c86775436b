"""Scheduled and live mutations of a running world.

An intervention flips a feature flag, sets a mutable parameter, or pushes
a broadcast event, at a chosen step. Validation happens at schedule time;
application at the start of the target step is unconditional and atomic,
ordered by intervention id so the final state is independent of
submission order. Every application is logged with its full content, so
parameter history is reconstructible from config plus log alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional

from .config import FEATURE_FLAGS, validate_param

KINDS = ("enable_feature", "disable_feature", "set_param", "broadcast_event")


class InterventionError(Exception):
    pass


class PastStep(InterventionError):
    pass


class UnknownFeature(InterventionError):
    pass


class UnknownParamPath(InterventionError):
    pass


class InvalidParamValue(InterventionError):
    pass


@dataclass(frozen=True)
class Intervention:
    intervention_id: str
    at_step: int
    kind: str
    name: Optional[str] = None      # feature name (enable/disable)
    path: Optional[str] = None      # dotted param path (set_param)
    value: Any = None               # new value (set_param)
    body: Optional[str] = None      # broadcast text (broadcast_event)
    announce: bool = True

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "intervention_id": self.intervention_id,
            "at_step": self.at_step,
            "kind": self.kind,
            "announce": self.announce,
        }
        if self.name is not None:
            doc["name"] = self.name
        if self.path is not None:
            doc["path"] = self.path
            doc["value"] = self.value
        if self.body is not None:
            doc["body"] = self.body
        return doc

    def describe(self) -> str:
        """Broadcast text announcing the change to the population."""
        if self.kind == "enable_feature":
            return f"notice: {self.name} is now enabled"
        if self.kind == "disable_feature":
            return f"notice: {self.name} is now disabled"
        if self.kind == "set_param":
            return f"notice: {self.path} is now {self.value}"
        return self.body or ""


def _content_id(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return "iv-" + hashlib.sha256(blob.encode()).hexdigest()[:12]


def parse_intervention(doc: dict, catalog_ids: set[str]) -> Intervention:
    """Validates the shared schema used by config files and the api."""
    kind = doc.get("kind")
    if kind not in KINDS:
        raise InterventionError(f"unknown intervention kind: {kind!r}")
    at_step = doc.get("at_step")
    if not isinstance(at_step, int) or at_step < 0:
        raise InterventionError("at_step must be a non-negative integer")
    announce = bool(doc.get("announce", True))

    name = path = body = None
    value = None
    if kind in ("enable_feature", "disable_feature"):
        name = doc.get("name")
        if name not in FEATURE_FLAGS:
            raise UnknownFeature(f"unknown feature: {name!r}")
    elif kind == "set_param":
        path = doc.get("path")
        if not isinstance(path, str):
            raise UnknownParamPath("set_param requires a path")
        try:
            value = validate_param(path, doc.get("value"), catalog_ids)
        except KeyError:
            raise UnknownParamPath(path) from None
        except (ValueError, TypeError) as e:
            raise InvalidParamValue(f"{path}: {e}") from None
    else:
        body = doc.get("body")
        if not isinstance(body, str) or not body:
            raise InterventionError("broadcast_event requires a body")

    content = {"at_step": at_step, "kind": kind, "name": name, "path": path,
               "value": value, "body": body, "announce": announce}
    return Intervention(_content_id(content), at_step, kind, name, path,
                        value, body, announce)


class InterventionTimeline:
    """The run's ordered record of scheduled and applied interventions."""

    def __init__(self, catalog_ids: set[str]):
        self.catalog_ids = catalog_ids
        self._by_id: dict[str, Intervention] = {}
        self.applied: list[str] = []

    def schedule(self, doc: dict, current_step: int) -> str:
        iv = parse_intervention(doc, self.catalog_ids)
        if iv.at_step < current_step:
            raise PastStep(
                f"step {iv.at_step} already executed (now at {current_step})")
        # Identical content resubmitted returns the same id.
        self._by_id[iv.intervention_id] = iv
        return iv.intervention_id

    def due(self, step: int) -> list[Intervention]:
        out = [iv for iv in self._by_id.values()
               if iv.at_step == step and iv.intervention_id not in self.applied]
        return sorted(out, key=lambda iv: iv.intervention_id)

    def mark_applied(self, intervention_id: str) -> None:
        self.applied.append(intervention_id)

    def all(self) -> list[Intervention]:
        return sorted(self._by_id.values(),
                      key=lambda iv: (iv.at_step, iv.intervention_id))

    def get(self, intervention_id: str) -> Optional[Intervention]:
        return self._by_id.get(intervention_id)

    # -- snapshot ----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "scheduled": [iv.to_dict() for iv in self.all()],
            "applied": list(self.applied),
        }

    def restore(self, snap: dict) -> None:
        self._by_id = {}
        for doc in snap["scheduled"]:
            iv = parse_intervention(doc, self.catalog_ids)
            self._by_id[iv.intervention_id] = iv
        self.applied = list(snap["applied"])
