"""Local HTTP API exposing one live run to the operator console.

All mutation of the run happens on a single host thread; HTTP handlers hand
closures to it and wait for the reply, so API calls are serialized at tick
granularity. Pipeline events stream over Server-Sent Events with resume via
Last-Event-ID. Responses are JSON; KPI rows are passed through verbatim so a
client can render exactly what ``kpis.csv`` holds.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional
from urllib.parse import parse_qs, urlparse

from ranorch.apps import DESCRIPTORS
from ranorch.intent import (
    BackendMisbehavior,
    BackendUnavailable,
    UnintelligibleIntent,
    classify_and_extract,
)
from ranorch.runtime import IntentRecord, SimulationRun
from ranorch.validation import InsufficientHistory, ValidationVerdict, predict_traffic, validate

log = logging.getLogger("ranorch.server")


class ServiceStopped(RuntimeError):
    pass


def verdict_to_json(verdict: ValidationVerdict) -> dict:
    # numpy bools are not JSON serializable, so cast every leaf explicitly
    return {
        "valid": bool(verdict.valid),
        "branch": verdict.branch.value,
        "reasons": list(verdict.reasons),
        "thresholds": {
            "high": float(verdict.thresholds[0]),
            "low": float(verdict.thresholds[1]),
        },
        "forecast_bps": float(verdict.forecast.predicted_bps),
        "drifted": bool(verdict.any_drifted),
        "drift": [
            {
                "traffic_class": report.traffic_class.value
                if report.traffic_class
                else None,
                "entries": [
                    {
                        "metric": e.metric.value,
                        "target": float(e.target),
                        "achieved": float(e.achieved),
                        "shortfall": float(e.shortfall),
                        "drifted": bool(e.drifted),
                    }
                    for e in report.entries
                ],
            }
            for report in verdict.drift
        ],
    }


def intent_to_json(rec: IntentRecord) -> dict:
    out: dict[str, Any] = {
        "intent_id": rec.intent_id,
        "text": rec.text,
        "submitted_tick": rec.submitted_tick,
        "status": rec.status,
        "reasons": list(rec.reasons),
        "error": rec.error,
    }
    if rec.processed is not None:
        out["processed"] = {
            "intent_type": rec.processed.intent_type.value,
            "magnitude_pct": rec.processed.magnitude_pct,
            "keywords": list(rec.processed.keywords),
            "source": rec.processed.source,
        }
    if rec.verdict is not None:
        out["verdict"] = verdict_to_json(rec.verdict)
    if rec.goal is not None:
        out["goal"] = {
            "metric": rec.goal.metric.value,
            "baseline": rec.goal.baseline_value,
            "target": rec.goal.target_value,
            "bucket_pct": rec.goal.bucket_pct,
            "deadline_ticks": rec.goal.deadline_ticks,
        }
    if rec.action_index is not None:
        out["action_index"] = rec.action_index
        out["filtered_size"] = rec.filtered_size
        out["filter_fallback"] = rec.filter_fallback
    if rec.outcome is not None:
        out["outcome"] = rec.outcome
        out["extrinsic"] = rec.extrinsic
        out["completed_tick"] = rec.completed_tick
    return out


class RunHost(threading.Thread):
    """Single writer thread that owns the run and serializes API work."""

    def __init__(self, run: SimulationRun):
        super().__init__(daemon=True, name="ranorch-run-host")
        self.sim_run = run
        self.status = "paused"  # paused | running | stopped
        self._commands: queue.Queue = queue.Queue()
        self._step_budget = 0
        self._stopped = threading.Event()

    def call(self, fn: Callable[[SimulationRun], Any], timeout: float = 30.0) -> Any:
        """Execute ``fn(run)`` on the host thread and return its result."""
        if self.status == "stopped":
            raise ServiceStopped("run is stopped")
        box: queue.Queue = queue.Queue(maxsize=1)
        self._commands.put((fn, box))
        ok, value = box.get(timeout=timeout)
        if ok:
            return value
        raise value

    def control(self, command: str, ticks: int = 0) -> dict:
        def apply(run: SimulationRun) -> dict:
            if command == "start":
                self.status = "running"
            elif command == "pause":
                self.status = "paused"
                self._step_budget = 0
            elif command == "step":
                self._step_budget += max(0, ticks)
            elif command == "stop":
                self.status = "stopped"
            else:
                raise ValueError(f"unknown command {command!r}")
            return {"status": self.status, "tick": run.sim.tick}

        return self.call(apply)

    def run(self) -> None:  # thread body
        try:
            while self.status != "stopped":
                busy = self.status == "running" or self._step_budget > 0
                try:
                    fn, box = self._commands.get(timeout=0.0 if busy else 0.05)
                except queue.Empty:
                    fn = None
                if fn is not None:
                    try:
                        box.put((True, fn(self.sim_run)))
                    except BaseException as exc:  # reply must always arrive
                        box.put((False, exc))
                    continue
                if self.status == "running" or self._step_budget > 0:
                    self.sim_run.run_ticks(1)
                    if self._step_budget > 0:
                        self._step_budget -= 1
        finally:
            self.sim_run.close()
            self.status = "stopped"
            self._stopped.set()

    def stop(self, timeout: float = 10.0) -> None:
        if self.status != "stopped":
            try:
                self.control("stop")
            except ServiceStopped:
                pass
        self._stopped.wait(timeout)


class ApiHandler(BaseHTTPRequestHandler):
    host: RunHost  # bound by serve_run
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s " + fmt, self.address_string(), *args)

    # -- plumbing

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID")

    def _send_json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, code: int, text: str, content_type: str) -> None:
        body = text.encode("utf-8")
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        return json.loads(raw.decode("utf-8"))

    # -- verbs

    def do_OPTIONS(self) -> None:
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self) -> None:
        url = urlparse(self.path)
        try:
            if url.path == "/":
                self._send_json(200, {
                    "service": "ranorch",
                    "endpoints": [
                        "/api/status", "/api/control", "/api/intents",
                        "/api/whatif", "/api/kpis", "/api/events",
                        "/api/stream/events", "/api/scenario",
                    ],
                })
            elif url.path == "/api/status":
                self._send_json(200, self._status())
            elif url.path == "/api/kpis":
                self._get_kpis(url)
            elif url.path == "/api/intents":
                records = self.host.call(
                    lambda run: [intent_to_json(r) for r in run.intents]
                )
                self._send_json(200, {"intents": records})
            elif url.path == "/api/events":
                self._get_events(url)
            elif url.path == "/api/stream/events":
                self._stream_events(url)
            elif url.path == "/api/scenario":
                self._send_text(
                    200, self.host.sim_run.scenario.source_text,
                    "text/plain; charset=utf-8",
                )
            else:
                self._send_json(404, {"error": f"no such path {url.path}"})
        except ServiceStopped:
            self._send_json(409, {"error": "run is stopped"})
        except BrokenPipeError:
            pass

    def do_POST(self) -> None:
        url = urlparse(self.path)
        try:
            body = self._read_json()
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_json(400, {"error": f"bad JSON body: {exc}"})
            return
        try:
            if url.path == "/api/control":
                command = body.get("command", "")
                ticks = int(body.get("ticks", 0))
                if command not in ("start", "pause", "step", "stop"):
                    self._send_json(400, {"error": f"unknown command {command!r}"})
                    return
                self._send_json(200, self.host.control(command, ticks))
            elif url.path == "/api/intents":
                text = body.get("text", "")
                if not isinstance(text, str) or not text.strip():
                    self._send_json(400, {"error": "intent text is required"})
                    return
                intent_id = self.host.call(lambda run: run.submit_intent(text))
                self._send_json(202, {"intent_id": intent_id, "queued": True})
            elif url.path == "/api/whatif":
                text = body.get("text", "")
                if not isinstance(text, str) or not text.strip():
                    self._send_json(400, {"error": "intent text is required"})
                    return
                self._what_if(text)
            else:
                self._send_json(404, {"error": f"no such path {url.path}"})
        except ServiceStopped:
            self._send_json(409, {"error": "run is stopped"})
        except BrokenPipeError:
            pass

    # -- endpoint bodies

    def _status(self) -> dict:
        def read(run: SimulationRun) -> dict:
            option = run.orchestrator.option
            active = run._active_intent
            return {
                "run_id": run.run_id,
                "status": self.host.status,
                "tick": run.sim.tick,
                "slot": run.sim.slot,
                "attention_enabled": run.orchestrator.attention_enabled,
                "validation_enabled": run.validation_enabled,
                "baseline_apps": sorted(
                    DESCRIPTORS[a].name for a in run.baseline_apps
                ),
                "active_intent": active.intent_id if active else None,
                "option": None
                if option is None
                else {
                    "metric": option.goal.metric.value,
                    "target": option.goal.target_value,
                    "ticks_elapsed": option.ticks_elapsed,
                    "deadline_ticks": option.goal.deadline_ticks,
                    "extrinsic_so_far": option.extrinsic,
                    "current_action": run.orchestrator.current_action,
                },
                "event_count": len(run.events),
                "kpi_ticks": len(run.kpi_rows),
            }

        return self.host.call(read)

    def _get_kpis(self, url) -> None:
        params = parse_qs(url.query)
        try:
            start = int(params.get("start", ["0"])[0])
            end_raw = params.get("end", [None])[0]
            end = None if end_raw is None else int(end_raw)
        except ValueError:
            self._send_json(400, {"error": "start/end must be integers"})
            return
        kpis = self.host.call(lambda run: run.query_kpis(start, end))
        self._send_json(
            200,
            {
                "header": kpis.header,
                "start_tick": kpis.start_tick,
                "rows": list(kpis.rows),
                "clipped": kpis.clipped,
                "timeline": list(kpis.timeline),
            },
        )

    def _get_events(self, url) -> None:
        params = parse_qs(url.query)
        try:
            since = int(params.get("since", ["-1"])[0])
        except ValueError:
            self._send_json(400, {"error": "since must be an integer"})
            return
        events = self.host.sim_run.events
        self._send_json(200, {"events": events[since + 1 :]})

    def _what_if(self, text: str) -> None:
        def preview(run: SimulationRun) -> dict:
            try:
                processed = classify_and_extract(text, run.examples, run.llm_backend)
            except UnintelligibleIntent as exc:
                return {"parse_error": str(exc)}
            out: dict[str, Any] = {
                "processed": {
                    "intent_type": processed.intent_type.value,
                    "magnitude_pct": processed.magnitude_pct,
                    "keywords": list(processed.keywords),
                    "source": processed.source,
                }
            }
            if not run.validation_enabled:
                out["verdict"] = {"valid": True, "skipped": True}
                return out
            snapshot = run.sim.last_tick_snapshot
            try:
                if snapshot is None:
                    raise InsufficientHistory("no completed measurement tick yet")
                forecast = predict_traffic(
                    run.traffic_history, run.scenario.validation
                )
                verdict = validate(
                    processed,
                    forecast,
                    run.scenario.sim.qos,
                    snapshot,
                    run.traffic_history,
                    run.scenario.validation,
                )
            except InsufficientHistory as exc:
                out["verdict"] = {
                    "valid": False,
                    "reasons": ["insufficient_history"],
                    "error": str(exc),
                }
                return out
            out["verdict"] = verdict_to_json(verdict)
            return out

        try:
            self._send_json(200, self.host.call(preview))
        except (BackendUnavailable, BackendMisbehavior) as exc:
            self._send_json(502, {"error": str(exc)})

    def _stream_events(self, url) -> None:
        params = parse_qs(url.query)
        last_id = self.headers.get("Last-Event-ID") or params.get("since", ["-1"])[0]
        try:
            idx = int(last_id) + 1
        except ValueError:
            idx = 0
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "text/event-stream; charset=utf-8")
        self.send_header("Cache-Control", "no-store")
        # The stream has no length; close delimits it even under HTTP/1.1.
        self.send_header("Connection", "close")
        self.close_connection = True
        self.end_headers()
        run = self.host.sim_run
        try:
            self.wfile.write(b"retry: 1000\n\n")
            self.wfile.flush()
            last_ping = time.monotonic()
            while self.host.status != "stopped":
                events = run.events
                while idx < len(events):
                    ev = events[idx]
                    chunk = f"id: {ev['seq']}\ndata: {json.dumps(ev)}\n\n"
                    self.wfile.write(chunk.encode("utf-8"))
                    idx += 1
                self.wfile.flush()
                now = time.monotonic()
                if now - last_ping > 5.0:
                    self.wfile.write(b": ping\n\n")
                    self.wfile.flush()
                    last_ping = now
                time.sleep(0.05)
        except (BrokenPipeError, ConnectionResetError):
            pass


def serve_run(
    run: SimulationRun, host: str = "127.0.0.1", port: int = 8765
) -> tuple[ThreadingHTTPServer, RunHost]:
    """Start the host thread and an HTTP server bound to it.

    Returns (server, run_host); the caller owns both lifetimes. Use port 0 to
    bind an ephemeral port (read it back from ``server.server_address``).
    """
    run_host = RunHost(run)
    run_host.start()
    handler = type("BoundApiHandler", (ApiHandler,), {"host": run_host})
    server = ThreadingHTTPServer((host, port), handler)
    return server, run_host
