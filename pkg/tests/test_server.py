"""HTTP API: control, queries, intent intake, what-if previews, event stream."""

from __future__ import annotations

import http.client
import json
import threading
import time
import urllib.request

import pytest

from ranorch.cli import main as cli_main
from ranorch.runtime import KPI_HEADER, SimulationRun
from ranorch.server import serve_run

from conftest import TINY_TOML


class Client:
    def __init__(self, port: int):
        self.base = f"http://127.0.0.1:{port}"

    def get(self, path: str) -> tuple[int, dict]:
        req = urllib.request.Request(self.base + path)
        return self._send(req)

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        req = urllib.request.Request(
            self.base + path,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        return self._send(req)

    def _send(self, req) -> tuple[int, dict]:
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                return resp.status, json.loads(resp.read().decode())
        except urllib.error.HTTPError as err:
            return err.code, json.loads(err.read().decode())

    def wait_for_tick(self, n: int, timeout: float = 20.0) -> dict:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            _, status = self.get("/api/status")
            if status["tick"] >= n:
                return status
            time.sleep(0.02)
        raise AssertionError(f"tick {n} not reached before timeout")


@pytest.fixture()
def service(tiny_scenario, tmp_path):
    run = SimulationRun(tiny_scenario, tmp_path / "run", validation_enabled=False)
    server, host = serve_run(run, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    client = Client(server.server_address[1])
    yield client, host, tmp_path / "run"
    host.stop()
    server.shutdown()
    server.server_close()
    thread.join(timeout=5)


def test_root_lists_the_endpoints(service):
    client, _, _ = service
    code, body = client.get("/")
    assert code == 200
    assert "/api/status" in body["endpoints"]
    assert "/api/stream/events" in body["endpoints"]


def test_status_reports_a_paused_fresh_run(service):
    client, _, _ = service
    code, status = client.get("/api/status")
    assert code == 200
    assert status["status"] == "paused"
    assert status["tick"] == 0
    assert status["active_intent"] is None
    assert status["option"] is None
    assert status["kpi_ticks"] == 0
    assert status["validation_enabled"] is False


def test_step_control_advances_exactly(service):
    client, _, _ = service
    code, out = client.post("/api/control", {"command": "step", "ticks": 3})
    assert code == 200
    status = client.wait_for_tick(3)
    assert status["tick"] == 3  # paused again once the budget is spent
    assert status["kpi_ticks"] == 3
    assert status["status"] == "paused"


def test_start_and_pause(service):
    client, _, _ = service
    _, out = client.post("/api/control", {"command": "start"})
    assert out["status"] == "running"
    client.wait_for_tick(1)
    _, out = client.post("/api/control", {"command": "pause"})
    assert out["status"] == "paused"
    _, a = client.get("/api/status")
    time.sleep(0.2)
    _, b = client.get("/api/status")
    assert b["tick"] == a["tick"]  # paused means the clock holds still


def test_unknown_control_command_is_rejected(service):
    client, _, _ = service
    code, body = client.post("/api/control", {"command": "sprint"})
    assert code == 400
    assert "sprint" in body["error"]


def test_kpi_rows_match_the_trace_file(service):
    client, host, run_dir = service
    client.post("/api/control", {"command": "step", "ticks": 4})
    client.wait_for_tick(4)
    code, kpis = client.get("/api/kpis")
    assert code == 200
    assert kpis["header"] == KPI_HEADER
    assert len(kpis["rows"]) == 4
    assert not kpis["clipped"]
    host.stop()  # flushes and closes the trace
    file_rows = (run_dir / "kpis.csv").read_text().splitlines()[1:]
    aggregates = [r for r in file_rows if r.endswith(",all")]
    assert kpis["rows"] == aggregates


def test_kpi_window_params(service):
    client, _, _ = service
    client.post("/api/control", {"command": "step", "ticks": 5})
    client.wait_for_tick(5)
    _, sl = client.get("/api/kpis?start=1&end=3")
    assert sl["start_tick"] == 1
    assert len(sl["rows"]) == 2
    _, over = client.get("/api/kpis?start=2&end=99")
    assert over["clipped"]
    code, bad = client.get("/api/kpis?start=x")
    assert code == 400


def test_intent_intake_and_listing(service):
    client, _, _ = service
    client.post("/api/control", {"command": "step", "ticks": 1})
    client.wait_for_tick(1)
    code, body = client.post("/api/intents", {"text": "Boost system throughput by 15%"})
    assert code == 202
    assert body["queued"] is True
    client.post("/api/control", {"command": "step", "ticks": 2})
    client.wait_for_tick(3)
    _, listing = client.get("/api/intents")
    (rec,) = listing["intents"]
    assert rec["text"] == "Boost system throughput by 15%"
    assert rec["status"] in ("accepted", "completed")
    assert rec["processed"]["intent_type"] == "throughput"
    assert rec["goal"]["metric"] == "throughput"
    assert "action_index" in rec


def test_empty_intent_is_a_client_error(service):
    client, _, _ = service
    code, body = client.post("/api/intents", {"text": "   "})
    assert code == 400
    code, body = client.post("/api/whatif", {})
    assert code == 400


def test_whatif_previews_without_mutating(service):
    client, _, _ = service
    code, body = client.post("/api/whatif", {"text": "Reduce network delay by 13%"})
    assert code == 200
    assert body["processed"]["intent_type"] == "delay"
    assert body["processed"]["magnitude_pct"] == -13.0
    assert body["verdict"] == {"valid": True, "skipped": True}  # validation is off
    _, listing = client.get("/api/intents")
    assert listing["intents"] == []  # a preview queues nothing


def test_whatif_reports_parse_errors(service):
    client, _, _ = service
    code, body = client.post("/api/whatif", {"text": "make the network nice"})
    assert code == 200
    assert "parse_error" in body
    assert "missing" in body["parse_error"]


def test_whatif_under_validation_requires_history(tiny_scenario, tmp_path):
    run = SimulationRun(tiny_scenario, None, validation_enabled=True)
    server, host = serve_run(run, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = Client(server.server_address[1])
        _, body = client.post("/api/whatif", {"text": "Boost system throughput by 15%"})
        assert body["verdict"]["valid"] is False
        assert body["verdict"]["reasons"] == ["insufficient_history"]
    finally:
        host.stop()
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def test_event_catchup_via_since(service):
    client, _, _ = service
    client.post("/api/control", {"command": "step", "ticks": 1})
    client.wait_for_tick(1)
    client.post("/api/intents", {"text": "Boost system throughput by 15%"})
    client.post("/api/control", {"command": "step", "ticks": 1})
    client.wait_for_tick(2)
    _, all_events = client.get("/api/events")
    seqs = [e["seq"] for e in all_events["events"]]
    assert seqs == list(range(len(seqs)))
    assert len(seqs) >= 6
    _, tail = client.get(f"/api/events?since={seqs[2]}")
    assert [e["seq"] for e in tail["events"]] == seqs[3:]


def _read_sse_events(port: int, n: int, last_event_id: str) -> list[dict]:
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=10)
    conn.request(
        "GET", "/api/stream/events", headers={"Last-Event-ID": last_event_id}
    )
    resp = conn.getresponse()
    assert resp.status == 200
    assert resp.headers["Content-Type"].startswith("text/event-stream")
    events = []
    current_id = None
    deadline = time.monotonic() + 10
    while len(events) < n and time.monotonic() < deadline:
        line = resp.fp.readline().decode().rstrip("\n")
        if line.startswith("id: "):
            current_id = int(line[4:])
        elif line.startswith("data: "):
            payload = json.loads(line[6:])
            payload["_sse_id"] = current_id
            events.append(payload)
    conn.close()
    return events


def test_event_stream_resumes_from_last_event_id(service):
    client, _, _ = service
    client.post("/api/control", {"command": "step", "ticks": 1})
    client.wait_for_tick(1)
    client.post("/api/intents", {"text": "Boost system throughput by 15%"})
    client.post("/api/control", {"command": "step", "ticks": 1})
    client.wait_for_tick(2)

    port = int(client.base.rsplit(":", 1)[1])
    first = _read_sse_events(port, 3, last_event_id="-1")
    assert [e["_sse_id"] for e in first] == [0, 1, 2]
    assert [e["seq"] for e in first] == [0, 1, 2]
    assert first[0]["step"] == "received"

    resumed = _read_sse_events(port, 2, last_event_id="2")
    assert [e["seq"] for e in resumed] == [3, 4]


def test_unknown_paths_are_404(service):
    client, _, _ = service
    code, _ = client.get("/api/nope")
    assert code == 404
    code, _ = client.post("/api/nope", {})
    assert code == 404


def test_stopped_service_rejects_work(tiny_scenario):
    run = SimulationRun(tiny_scenario, None)
    server, host = serve_run(run, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = Client(server.server_address[1])
        _, out = client.post("/api/control", {"command": "stop"})
        assert out["status"] == "stopped"
        deadline = time.monotonic() + 5
        code = 200
        while time.monotonic() < deadline and code != 409:
            code, _ = client.get("/api/status")
            time.sleep(0.02)
        assert code == 409
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def test_scenario_endpoint_returns_the_source_text(service, tiny_scenario):
    client, _, _ = service
    req = urllib.request.Request(client.base + "/api/scenario")
    with urllib.request.urlopen(req, timeout=10) as resp:
        assert resp.read().decode() == tiny_scenario.source_text


def test_serve_rejects_malformed_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("traffic = 5\n\n[sim]\nseed = 1\n")
    rc = cli_main(["serve", str(bad), "--port", "0"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "[traffic]" in err
