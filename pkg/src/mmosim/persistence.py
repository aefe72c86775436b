"""Append-only event log, periodic snapshots, and the run registry.

The log file is one UTF-8 JSON record per line; the first line is a
header carrying config_version, seed, and the config hash. Events are
flushed at step boundaries, so crash recovery reads a prefix that ends at
a step boundary. Snapshots are plain JSON documents listed in a manifest
with content hashes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .config import CONFIG_VERSION
from .domain import Event

SNAPSHOT_VERSION = 1


class PersistenceError(Exception):
    pass


class SeqGap(PersistenceError):
    pass


class VersionMismatch(PersistenceError):
    pass


class CorruptSnapshot(PersistenceError):
    pass


# --- event log ---------------------------------------------------------------

class EventLog:
    """Single-writer append log with strictly continuous seq numbers."""

    def __init__(self, path: str | Path, header: dict, next_seq: int = 1,
                 _append: bool = False):
        self.path = Path(path)
        self.header = header
        self._expected_seq = next_seq
        mode = "a" if _append else "w"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, mode, encoding="utf-8")
        if not _append:
            self._fh.write(json.dumps(
                {"kind": "header", **header},
                sort_keys=True, separators=(",", ":")) + "\n")
            self._fh.flush()

    @classmethod
    def create(cls, path: str | Path, seed: int, config_hash: str,
               steps_per_day: int, next_seq: int = 1) -> "EventLog":
        header = {
            "config_version": CONFIG_VERSION,
            "seed": seed,
            "config_hash": config_hash,
            "steps_per_day": steps_per_day,
            "first_seq": next_seq,
        }
        return cls(path, header, next_seq)

    @classmethod
    def open_for_append(cls, path: str | Path) -> "EventLog":
        header, events = read_log(path)
        next_seq = events[-1].seq + 1 if events else header["first_seq"]
        log = cls(path, header, next_seq, _append=True)
        return log

    def append(self, events: Iterable[Event]) -> tuple[int, int]:
        """Appends in-order events; returns the committed (first, last) seq."""
        first = last = None
        for ev in events:
            if ev.seq != self._expected_seq:
                raise SeqGap(
                    f"expected seq {self._expected_seq}, got {ev.seq}")
            self._fh.write(ev.to_record() + "\n")
            self._expected_seq += 1
            if first is None:
                first = ev.seq
            last = ev.seq
        return (first or self._expected_seq, last or self._expected_seq - 1)

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()


def read_log(path: str | Path) -> tuple[dict, list[Event]]:
    """Strict read of a complete log; raises on any malformed line."""
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines:
        raise PersistenceError("empty log file")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise PersistenceError("log does not start with a header record")
    spd = header["steps_per_day"]
    events = [Event.from_record(line, spd) for line in lines[1:]]
    for prev, cur in zip(events, events[1:]):
        if cur.seq != prev.seq + 1:
            raise SeqGap(f"gap between seq {prev.seq} and {cur.seq}")
    return header, events


def recover_log(path: str | Path) -> tuple[dict, list[Event]]:
    """Crash recovery: returns the longest prefix ending at a step boundary.

    A torn final line is dropped, then every event of the final step seen,
    since that step may have been partially flushed. Resuming re-executes
    the dropped step deterministically.
    """
    raw = Path(path).read_text("utf-8")
    lines = raw.split("\n")
    if raw.endswith("\n"):
        lines = lines[:-1]
    elif len(lines) > 1:
        lines = lines[:-1]  # torn write
    if not lines:
        raise PersistenceError("nothing recoverable")
    header = json.loads(lines[0])
    spd = header["steps_per_day"]
    events = []
    for line in lines[1:]:
        try:
            events.append(Event.from_record(line, spd))
        except (json.JSONDecodeError, KeyError):
            break
    if events:
        tail_step = events[-1].step.abs_step
        events = [e for e in events if e.step.abs_step < tail_step]
    return header, events


def iter_log(path: str | Path) -> Iterator[Event]:
    _, events = read_log(path)
    yield from events


def query(events: Iterable[Event], uid: Optional[int] = None,
          step_range: Optional[tuple[int, int]] = None,
          kind: Optional[str] = None) -> list[Event]:
    """Filter an event stream; results stay in seq order."""
    out = []
    for ev in events:
        if uid is not None and ev.uid != uid:
            continue
        if step_range is not None:
            lo, hi = step_range
            if not (lo <= ev.step.abs_step <= hi):
                continue
        if kind is not None and ev.kind != kind:
            continue
        out.append(ev)
    return out


# --- snapshots ---------------------------------------------------------------

def _doc_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class SnapshotStore:
    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.jsonl"

    def save(self, doc: dict) -> Path:
        if doc.get("snapshot_version") != SNAPSHOT_VERSION:
            raise PersistenceError("snapshot missing version")
        step = doc["taken_at_step"]
        path = self.dir / f"step-{step:08d}.json"
        path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")),
                        "utf-8")
        entry = {"step": step, "file": path.name, "content_hash": _doc_hash(doc)}
        with open(self.manifest_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return path

    def manifest(self) -> list[dict]:
        if not self.manifest_path.exists():
            return []
        return [json.loads(line) for line in
                self.manifest_path.read_text("utf-8").splitlines()]

    def steps(self) -> list[int]:
        return sorted({e["step"] for e in self.manifest()})

    def load(self, step: int) -> dict:
        for entry in self.manifest():
            if entry["step"] == step:
                return load_snapshot(self.dir / entry["file"],
                                     expect_hash=entry["content_hash"])
        raise PersistenceError(f"no snapshot at step {step}")


def load_snapshot(path: str | Path, expect_hash: Optional[str] = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptSnapshot(str(e)) from e
    if doc.get("snapshot_version") != SNAPSHOT_VERSION:
        raise VersionMismatch(
            f"snapshot_version {doc.get('snapshot_version')!r}, "
            f"expected {SNAPSHOT_VERSION}")
    if doc.get("config", {}).get("config_version") != CONFIG_VERSION:
        raise VersionMismatch("config_version mismatch")
    if expect_hash is not None and _doc_hash(doc) != expect_hash:
        raise CorruptSnapshot(f"content hash mismatch for {path}")
    return doc


# --- run registry ------------------------------------------------------------

RUN_STATUSES = ("created", "running", "paused", "finished", "failed")

_FORWARD = {
    "created": {"running", "failed"},
    "running": {"paused", "finished", "failed"},
    "paused": {"running", "finished", "failed"},
    "finished": set(),
    "failed": set(),
}


@dataclass
class RunRecord:
    run_id: str
    config: dict
    status: str = "created"
    created_at: float = field(default_factory=time.time)
    log_path: str = ""
    snapshot_dir: str = ""

    def transition(self, new_status: str) -> None:
        if new_status not in _FORWARD.get(self.status, set()):
            raise PersistenceError(
                f"illegal status transition {self.status} -> {new_status}")
        self.status = new_status

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id, "config": self.config,
            "status": self.status, "created_at": self.created_at,
            "log_path": self.log_path, "snapshot_dir": self.snapshot_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(d["run_id"], d["config"], d["status"], d["created_at"],
                   d["log_path"], d["snapshot_dir"])

    def save(self, run_dir: str | Path) -> None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "run.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True), "utf-8")

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        return cls.from_dict(
            json.loads((Path(run_dir) / "run.json").read_text("utf-8")))
