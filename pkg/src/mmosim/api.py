"""Control plane: run lifecycle, queries, live interventions, event stream.

Plain HTTP + JSON over a local port. Every response carries api_version.
Historical queries fold the event log (pure over config + log, identical
after a restart); live queries read the running engine at step
boundaries. The event stream is Server-Sent Events with id = seq, so a
dropped consumer resumes exactly where it left off.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from . import analytics
from .config import ConfigError, RunConfig
from .domain import AgentState, Event
from .engine import RunFinished, SimulationRun
from .intervention import InterventionError, PastStep
from .persistence import RunRecord, read_log

API_VERSION = 1

CONTROL_COMMANDS = ("start", "pause", "resume", "step_n", "stop")


class ApiError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


class UnknownRun(ApiError):
    def __init__(self, run_id: str):
        super().__init__("UnknownRun", f"no run {run_id!r}", 404)


class IllegalTransition(ApiError):
    def __init__(self, message: str):
        super().__init__("IllegalTransition", message, 409)


class ManagedRun:
    """One run the control plane owns: live engine or on-disk record."""

    def __init__(self, record: RunRecord, run: Optional[SimulationRun] = None):
        self.record = record
        self.run = run
        self.lock = threading.RLock()
        self.subscribers: list[queue.Queue] = []
        self._disk_events: Optional[list[Event]] = None
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._thread: Optional[threading.Thread] = None

    # -- events ------------------------------------------------------------

    def events(self) -> list[Event]:
        if self.run is not None:
            with self.lock:
                return list(self.run.events)
        if self._disk_events is None:
            _, evs = read_log(Path(self.record.log_path))
            self._disk_events = evs
        return self._disk_events

    def config(self) -> RunConfig:
        if self.run is not None:
            return self.run.config
        return RunConfig.from_dict(self.record.config)

    def current_step(self) -> int:
        if self.run is not None:
            return self.run.next_step
        if self.record.status == "finished":
            return self.config().total_steps
        evs = self.events()
        return evs[-1].step.abs_step + 1 if evs else 0

    def snapshot_steps(self) -> list[int]:
        if self.run is not None and self.run.store is not None:
            return self.run.store.steps()
        manifest = Path(self.record.snapshot_dir) / "manifest.jsonl"
        if manifest.exists():
            return sorted({json.loads(line)["step"] for line in
                           manifest.read_text("utf-8").splitlines()})
        return []

    # -- live loop -----------------------------------------------------------

    def _publish(self, events: list[Event]) -> None:
        dead = []
        for q in self.subscribers:
            try:
                for ev in events:
                    q.put_nowait(ev)
            except queue.Full:
                # Slow consumer: drop it; it reconnects from its last seq.
                dead.append(q)
        for q in dead:
            self.subscribers.remove(q)
            try:
                q.put_nowait(None)
            except queue.Full:
                pass  # the stream times out on its own

    def advance_locked(self, n: int) -> int:
        """Advance n steps under the run lock; returns steps executed."""
        assert self.run is not None
        done = 0
        for _ in range(n):
            with self.lock:
                if self.run.finished:
                    break
                new = self.run.advance(1)
            self._publish(new)
            done += 1
        return done

    def start_loop(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        accel = self.config().time_acceleration
        while not self._stop.is_set():
            if self.record.status != "running":
                self._wake.wait(0.05)
                self._wake.clear()
                continue
            if self.run is None or self.run.finished:
                with self.lock:
                    if self.record.status != "finished":
                        self.record.transition("finished")
                        self._persist_record()
                break
            t0 = time.monotonic()
            self.advance_locked(1)
            if accel > 0:
                leftover = accel - (time.monotonic() - t0)
                if leftover > 0:
                    self._stop.wait(leftover)

    def _persist_record(self) -> None:
        run_dir = Path(self.record.log_path).parent if self.record.log_path else None
        if run_dir and run_dir.exists():
            self.record.save(run_dir)

    def control(self, command: str, n: int = 0) -> str:
        with self.lock:
            status = self.record.status
            if command == "start":
                if status != "created":
                    raise IllegalTransition(f"cannot start from {status}")
                self.record.transition("running")
            elif command == "pause":
                if status != "running":
                    raise IllegalTransition(f"cannot pause from {status}")
                self.record.transition("paused")
            elif command == "resume":
                if status != "paused":
                    raise IllegalTransition(f"cannot resume from {status}")
                self.record.transition("running")
            elif command == "stop":
                if status not in ("running", "paused", "created"):
                    raise IllegalTransition(f"cannot stop from {status}")
                if status == "created":
                    self.record.transition("failed")
                else:
                    self.record.transition("finished")
                self._stop.set()
            elif command == "step_n":
                if status != "paused":
                    raise IllegalTransition("step_n is only valid while paused")
                if self.run is None:
                    raise IllegalTransition("run is not live")
            else:
                raise ApiError("BadCommand", f"unknown command {command!r}")
            self._persist_record()
        if command == "step_n":
            try:
                self.advance_locked(max(1, n))
            except RunFinished:
                pass
        if command in ("start", "resume"):
            self.start_loop()
            self._wake.set()
        return self.record.status

    def close(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        if self.run is not None:
            self.run.close()


class RunManager:
    def __init__(self, base_dir: str | Path):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)
        self.runs: dict[str, ManagedRun] = {}
        self._lock = threading.Lock()
        self.load_existing()

    def load_existing(self) -> None:
        for run_json in sorted(self.base_dir.glob("*/run.json")):
            record = RunRecord.load(run_json.parent)
            if record.run_id not in self.runs:
                self.runs[record.run_id] = ManagedRun(record)

    def create(self, config_doc: dict) -> str:
        try:
            config = RunConfig.from_dict(config_doc)
        except ConfigError as e:
            raise ApiError("InvalidConfig", str(e)) from e
        with self._lock:
            if config.run_id in self.runs:
                raise ApiError("DuplicateRun",
                               f"run {config.run_id!r} already exists", 409)
            run_dir = self.base_dir / config.run_id
            run = SimulationRun(config, out_dir=run_dir)
            record = RunRecord(
                run_id=config.run_id, config=config.to_dict(),
                log_path=str(run_dir / "events.log"),
                snapshot_dir=str(run_dir / "snapshots"))
            record.save(run_dir)
            managed = ManagedRun(record, run)
            self.runs[config.run_id] = managed
        return config.run_id

    def get(self, run_id: str) -> ManagedRun:
        m = self.runs.get(run_id)
        if m is None:
            raise UnknownRun(run_id)
        return m

    def close(self) -> None:
        for m in self.runs.values():
            m.close()


# --- query helpers -------------------------------------------------------------

def agents_by_state(managed: ManagedRun, state: AgentState,
                    step: int) -> list[dict]:
    config = managed.config()
    current = managed.current_step()
    if step >= current and not (step == 0 and current == 0):
        raise ApiError("StepNotReached", f"step {step} not executed yet", 409)
    fold = analytics.LogFold(config)
    for ev in managed.events():
        if ev.step.abs_step > step:
            break
        fold.feed(ev)
    out = []
    for uid in sorted(fold.states):
        if fold.states[uid] is state:
            out.append({"uid": uid,
                        "profile_class": fold.classes[uid].value,
                        "balance": fold.balances[uid]})
    return out


def agent_detail(managed: ManagedRun, uid: int, step: int) -> dict:
    config = managed.config()
    population = {p.uid: p for p in config.resolve_population()}
    if uid not in population:
        raise ApiError("UnknownAgent", f"no agent {uid}", 404)
    fold = analytics.LogFold(config)
    history: list[dict] = []
    for ev in managed.events():
        if ev.step.abs_step > step:
            break
        fold.feed(ev)
        if ev.uid == uid:
            history.append({"seq": ev.seq, "step": ev.step.abs_step,
                            **ev.payload})
    history = history[-config.history_window:]
    return {
        "profile": population[uid].to_dict(),
        "state": fold.states[uid].value,
        "balance": fold.balances[uid],
        "history": history,
        "latest_rationale": fold.last_rationale.get(uid),
    }


# --- HTTP layer -----------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}


def make_handler(manager: RunManager, console_dir: Optional[Path]):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        # -- plumbing ------------------------------------------------------

        def _send_json(self, doc: dict, status: int = 200) -> None:
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, e: ApiError) -> None:
            self._send_json({"api_version": API_VERSION, "error": e.message,
                             "code": e.code}, e.status)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError as e:
                raise ApiError("BadRequest", f"body is not JSON: {e}") from e

        # -- routing --------------------------------------------------------

        def do_GET(self):
            try:
                self._route("GET")
            except ApiError as e:
                self._send_error(e)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def do_POST(self):
            try:
                self._route("POST")
            except ApiError as e:
                self._send_error(e)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def _route(self, method: str) -> None:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            params = {k: v[0] for k, v in parse_qs(url.query).items()}

            if not parts or parts[0] != "api":
                if method == "GET":
                    return self._serve_static(url.path)
                raise ApiError("NotFound", "unknown route", 404)

            parts = parts[1:]
            if parts == ["runs"] and method == "POST":
                run_id = manager.create(self._read_body())
                return self._send_json(
                    {"api_version": API_VERSION, "run_id": run_id}, 201)
            if parts == ["runs"] and method == "GET":
                listing = []
                for run_id in sorted(manager.runs):
                    m = manager.runs[run_id]
                    listing.append({
                        "run_id": run_id, "status": m.record.status,
                        "current_step": m.current_step(),
                        "total_steps": m.config().total_steps,
                    })
                return self._send_json(
                    {"api_version": API_VERSION, "runs": listing})

            if len(parts) >= 2 and parts[0] == "runs":
                m = manager.get(parts[1])
                rest = parts[2:]
                if rest == ["control"] and method == "POST":
                    body = self._read_body()
                    command = body.get("command")
                    if command not in CONTROL_COMMANDS:
                        raise ApiError("BadCommand",
                                       f"command must be one of {CONTROL_COMMANDS}")
                    status = m.control(command, int(body.get("n", 0)))
                    return self._send_json(
                        {"api_version": API_VERSION, "status": status,
                         "current_step": m.current_step()})
                if rest == ["timeline"] and method == "GET":
                    cfg = m.config()
                    ivs = []
                    if m.run is not None:
                        with m.lock:
                            applied = set(m.run.timeline.applied)
                            for iv in m.run.timeline.all():
                                ivs.append({**iv.to_dict(),
                                            "applied": iv.intervention_id in applied})
                    else:
                        fold = analytics.LogFold(cfg).feed_all(m.events())
                        ivs = [{**iv, "applied": True}
                               for iv in fold.interventions.values()]
                    return self._send_json({
                        "api_version": API_VERSION,
                        "run_id": m.record.run_id,
                        "status": m.record.status,
                        "current_step": m.current_step(),
                        "total_steps": cfg.total_steps,
                        "steps_per_day": cfg.steps_per_day,
                        "snapshot_steps": m.snapshot_steps(),
                        "interventions": ivs,
                    })
                if rest == ["agents"] and method == "GET":
                    state = AgentState(params.get("state", "online"))
                    step = int(params.get("step", m.current_step() - 1))
                    agents = agents_by_state(m, state, step)
                    return self._send_json({
                        "api_version": API_VERSION, "state": state.value,
                        "step": step, "agents": agents})
                if len(rest) == 2 and rest[0] == "agent" and method == "GET":
                    step = int(params.get("step", m.current_step() - 1))
                    detail = agent_detail(m, int(rest[1]), step)
                    return self._send_json(
                        {"api_version": API_VERSION, "step": step, **detail})
                if rest == ["stats"] and method == "GET":
                    step = int(params.get("step", m.current_step() - 1))
                    window = params.get("window")
                    try:
                        frame = analytics.compute_frame(
                            m.events(), m.config(), step,
                            int(window) if window else None,
                            last_executed=m.current_step() - 1)
                    except analytics.StepNotReached as e:
                        raise ApiError("StepNotReached", str(e), 409) from e
                    return self._send_json(
                        {"api_version": API_VERSION, **frame.to_dict()})
                if rest == ["interventions"] and method == "POST":
                    return self._intervene(m)
                if rest == ["events"] and method == "GET":
                    from_seq = int(params.get("from_seq",
                                              self.headers.get("Last-Event-ID", 1)))
                    return self._stream_events(m, from_seq)
            raise ApiError("NotFound", "unknown route", 404)

        # -- interventions ----------------------------------------------------

        def _intervene(self, m: ManagedRun) -> None:
            if m.run is None:
                raise ApiError("RunNotLive",
                               "interventions need a live run", 409)
            doc = self._read_body()
            with m.lock:
                next_step = m.run.next_step
                if doc.get("at_step") is None:
                    # Live submissions land on the next unexecuted step.
                    doc["at_step"] = next_step
                try:
                    iv_id = m.run.timeline.schedule(doc, next_step)
                except PastStep as e:
                    raise ApiError("PastStep", str(e), 409) from e
                except InterventionError as e:
                    raise ApiError(type(e).__name__, str(e)) from e
            return self._send_json(
                {"api_version": API_VERSION, "intervention_id": iv_id,
                 "at_step": doc["at_step"]}, 201)

        # -- SSE ---------------------------------------------------------------

        def _stream_events(self, m: ManagedRun, from_seq: int) -> None:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()

            q: queue.Queue = queue.Queue(maxsize=4096)
            live = m.run is not None and m.record.status in (
                "created", "running", "paused")
            if live:
                m.subscribers.append(q)
            try:
                last = from_seq - 1
                for ev in m.events():
                    if ev.seq > last:
                        self._write_sse(ev)
                        last = ev.seq
                if not live:
                    return
                while True:
                    try:
                        ev = q.get(timeout=15.0)
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    if ev is None:
                        break
                    if ev.seq > last:
                        self._write_sse(ev)
                        last = ev.seq
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                if q in m.subscribers:
                    m.subscribers.remove(q)

        def _write_sse(self, ev: Event) -> None:
            frame = f"id: {ev.seq}\ndata: {ev.to_record()}\n\n"
            self.wfile.write(frame.encode("utf-8"))
            self.wfile.flush()

        # -- static console -----------------------------------------------------

        def _serve_static(self, path: str) -> None:
            if console_dir is None:
                raise ApiError("NotFound", "no console assets configured", 404)
            rel = path.lstrip("/") or "index.html"
            target = (console_dir / rel).resolve()
            if not str(target).startswith(str(console_dir.resolve())):
                raise ApiError("NotFound", "outside console dir", 404)
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                raise ApiError("NotFound", f"no asset {rel}", 404)
            body = target.read_bytes()
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def serve(manager: RunManager, host: str = "127.0.0.1", port: int = 8642,
          console_dir: Optional[str | Path] = None) -> ThreadingHTTPServer:
    handler = make_handler(
        manager, Path(console_dir) if console_dir else None)
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
