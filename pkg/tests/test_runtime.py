"""Run lifecycle: pipeline events, persisted artifacts, replay, training."""

from __future__ import annotations

import json

import numpy as np
import pytest

from ranorch.config import (
    KpiKind,
    QosDirection,
    QoSProfile,
    QosRequirement,
    TrafficKind,
    parse_scenario,
)
from ranorch.network import Simulator
from ranorch.runtime import (
    KPI_HEADER,
    TRAINING_LOG_HEADER,
    SimulationRun,
    Trainer,
    compare_run_outputs,
    count_qos_violations,
    load_intent_schedule,
    replay_run,
)
from test_sim import IDLE_TOML

from conftest import TINY_TOML

# always routes to the low-traffic branch once history exists
LOWGATE_TOML = TINY_TOML + "\n[validation]\nlow_bps = 1e15\nhigh_bps = 1e16\n"

SHORT_DEADLINE_TOML = TINY_TOML + "\n[orchestrator]\ndeadline_ticks = 4\n"

THROUGHPUT_PUSH = "Boost system throughput by 15%"


def _events_for(run: SimulationRun, intent_id: str) -> list[dict]:
    return [e for e in run.events if e["intent_id"] == intent_id]


# -- pipeline event streams -------------------------------------------------------


def test_accepted_intent_emits_all_six_steps(tiny_scenario):
    run = SimulationRun(tiny_scenario, None, validation_enabled=False)
    run.run_ticks(1)  # a measurement tick so the goal has a baseline
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(1)
    rec = run.intents[0]
    assert rec.status == "accepted"
    steps = [e["step"] for e in _events_for(run, rec.intent_id)]
    assert steps == [
        "received",
        "processed",
        "validated",
        "goal_issued",
        "action_selected",
        "apps_applied",
    ]


def test_unintelligible_intent_stops_after_processing(tiny_scenario):
    run = SimulationRun(tiny_scenario, None, validation_enabled=False)
    run.run_ticks(1)
    run.submit_intent("make the network nice")
    run.run_ticks(1)
    rec = run.intents[0]
    assert rec.status == "rejected"
    assert rec.reasons == ("unintelligible",)
    steps = [e["step"] for e in _events_for(run, rec.intent_id)]
    assert steps == ["received", "processed"]
    assert "error" in _events_for(run, rec.intent_id)[-1]["payload"]


def test_intent_without_history_is_rejected(tiny_scenario):
    run = SimulationRun(tiny_scenario, None, validation_enabled=True)
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(1)  # processed on the very first tick: no history yet
    rec = run.intents[0]
    assert rec.status == "rejected"
    assert rec.reasons == ("insufficient_history",)
    steps = [e["step"] for e in _events_for(run, rec.intent_id)]
    assert steps == ["received", "processed", "validated"]


def test_invalid_intent_stops_at_validation():
    scenario = parse_scenario(LOWGATE_TOML)
    run = SimulationRun(scenario, None, validation_enabled=True)
    run.run_ticks(24)  # enough history for the seasonal forecaster
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(1)
    rec = run.intents[0]
    assert rec.status == "rejected"
    assert "low_traffic_throughput_push" in rec.reasons
    events = _events_for(run, rec.intent_id)
    assert [e["step"] for e in events] == ["received", "processed", "validated"]
    v = events[-1]["payload"]
    assert v["valid"] is False
    assert v["branch"] == "low_traffic"


def test_degenerate_baseline_is_rejected_at_goal_issue():
    scenario = parse_scenario(IDLE_TOML)  # no arrivals: throughput is zero
    run = SimulationRun(scenario, None, validation_enabled=False)
    run.run_ticks(1)
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(1)
    rec = run.intents[0]
    assert rec.status == "rejected"
    assert rec.reasons == ("degenerate_baseline",)
    steps = [e["step"] for e in _events_for(run, rec.intent_id)]
    assert steps == ["received", "processed", "validated", "goal_issued"]


def test_event_clock_and_sequence(tiny_scenario):
    run = SimulationRun(tiny_scenario, None, validation_enabled=False)
    run.run_ticks(1)
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(2)
    seqs = [e["seq"] for e in run.events]
    assert seqs == list(range(len(run.events)))
    tick_s = tiny_scenario.sim.tick_s
    for e in run.events:
        assert e["t_s"] == pytest.approx(e["tick"] * tick_s)


# -- QoS violation counting --------------------------------------------------------


def _fresh(scenario):
    sim = Simulator(scenario.sim)
    return sim, sim.state()


def test_throughput_floor_binds_only_when_offered(tiny_scenario):
    sim, state = _fresh(tiny_scenario)
    profiles = {
        TrafficKind.VIDEO: QoSProfile(
            (QosRequirement(KpiKind.THROUGHPUT, QosDirection.AT_LEAST, 0.8e6),)
        )
    }
    video = np.flatnonzero(sim.ue_class == 0)
    tick_s = sim.cfg.tick_s
    need_bits = 0.8e6 * tick_s
    sim.last_tick_ue_offered[:] = 0.0
    sim.last_tick_ue_delivered[:] = 0.0
    # starved but demanding UE counts; idle UE does not
    sim.last_tick_ue_offered[video[0]] = need_bits * 2
    sim.last_tick_ue_delivered[video[0]] = need_bits * 0.1
    sim.last_tick_ue_offered[video[1]] = need_bits * 0.1
    assert count_qos_violations(sim, state, profiles) == 1


def test_delay_violation_via_mean_and_via_stall(tiny_scenario):
    sim, state = _fresh(tiny_scenario)
    profiles = {
        TrafficKind.VIDEO: QoSProfile(
            (QosRequirement(KpiKind.DELAY, QosDirection.AT_MOST, 0.15),)
        )
    }
    video = np.flatnonzero(sim.ue_class == 0)
    sim.last_tick_ue_delay_cnt[:] = 0
    sim.last_tick_ue_delay_sum[:] = 0.0
    # served late
    sim.last_tick_ue_delay_cnt[video[0]] = 2
    sim.last_tick_ue_delay_sum[video[0]] = 2 * 0.30
    assert count_qos_violations(sim, state, profiles) == 1
    # stalled with an old head-of-line packet
    state.queue_pkts[video[1]] = 3
    state.hol_delay_s[video[1]] = 0.4
    assert count_qos_violations(sim, state, profiles) == 2
    # a young head-of-line packet is fine
    state.hol_delay_s[video[1]] = 0.01
    assert count_qos_violations(sim, state, profiles) == 1


def test_efficiency_requirements_are_not_counted_per_ue(tiny_scenario):
    sim, state = _fresh(tiny_scenario)
    profiles = {
        TrafficKind.VIDEO: QoSProfile(
            (QosRequirement(KpiKind.ENERGY_EFFICIENCY, QosDirection.AT_LEAST, 1e9),)
        )
    }
    assert count_qos_violations(sim, state, profiles) == 0


# -- KPI persistence and queries -----------------------------------------------------


def test_kpi_trace_has_aggregate_and_class_rows(tiny_scenario, tmp_path):
    with SimulationRun(tiny_scenario, tmp_path / "run") as run:
        run.run_ticks(3)
    lines = (tmp_path / "run" / "kpis.csv").read_text().splitlines()
    assert lines[0] == KPI_HEADER
    body = lines[1:]
    assert len(body) == 3 * 5  # one aggregate plus four class rows per tick
    labels = [row.rsplit(",", 1)[1] for row in body[:5]]
    assert labels == ["all", "video", "gaming", "voice", "urllc"]
    for base in range(0, len(body), 5):
        agg = body[base].split(",")
        cls_rows = [body[base + k].split(",") for k in (1, 2, 3, 4)]
        # all five rows carry the same slot stamp and network energy
        assert {r[0] for r in cls_rows} == {agg[0]}
        assert {r[4] for r in cls_rows} == {agg[4]}
        # class efficiency shares the network denominator, so it sums up
        assert sum(float(r[3]) for r in cls_rows) == pytest.approx(
            float(agg[3]), rel=1e-9
        )


def test_query_rows_are_verbatim_file_lines(tiny_scenario, tmp_path):
    with SimulationRun(tiny_scenario, tmp_path / "run") as run:
        run.run_ticks(4)
        got = run.query_kpis()
    file_rows = (tmp_path / "run" / "kpis.csv").read_text().splitlines()[1:]
    aggregates = tuple(r for r in file_rows if r.endswith(",all"))
    assert got.header == KPI_HEADER
    assert got.rows == aggregates
    assert len(got.rows) == 4
    assert not got.clipped


def test_query_windows_clip_and_flag(tiny_scenario):
    run = SimulationRun(tiny_scenario, None)
    run.run_ticks(150)
    full = run.query_kpis()
    assert len(full.rows) == 150 and not full.clipped
    mid = run.query_kpis(5, 8)
    assert len(mid.rows) == 3 and mid.start_tick == 5 and not mid.clipped
    assert mid.rows == full.rows[5:8]
    over = run.query_kpis(100, 200)
    assert len(over.rows) == 50
    assert over.clipped
    assert over.rows == full.rows[100:150]
    empty = run.query_kpis(300, 400)
    assert empty.rows == () and empty.clipped
    neg = run.query_kpis(-5, 3)
    assert neg.clipped and len(neg.rows) == 3


def test_run_directory_artifacts(tiny_scenario, tmp_path):
    d = tmp_path / "run"
    with SimulationRun(tiny_scenario, d) as run:
        run.run_ticks(2)
        run.submit_intent(THROUGHPUT_PUSH)
        run.run_ticks(1)
    for name in (
        "config",
        "kpis.csv",
        "traffic_history.csv",
        "events.log",
        "intents.log",
        "meta.json",
    ):
        assert (d / name).exists(), name
    assert (d / "checkpoints" / "final.json").exists()
    assert (d / "config").read_text() == tiny_scenario.source_text
    history = (d / "traffic_history.csv").read_text().splitlines()
    assert history[0] == "tick,offered_bps"
    assert len(history) == 1 + 3
    meta = json.loads((d / "meta.json").read_text())
    assert meta["seed"] == tiny_scenario.sim.seed
    assert meta["ticks_completed"] == 3
    assert set(meta) == {
        "run_id",
        "seed",
        "config_sha256",
        "attention_enabled",
        "validation_enabled",
        "baseline_apps",
        "ticks_completed",
        "rejected_controls",
    }


# -- determinism and replay ---------------------------------------------------------


def _drive(out_dir) -> None:
    # the short deadline lets the first option finish inside the run,
    # freeing the controller for the second scheduled intent
    scenario = parse_scenario(SHORT_DEADLINE_TOML)
    with SimulationRun(scenario, out_dir, validation_enabled=False) as run:
        run.run_ticks(2)
        run.schedule_intent(3, THROUGHPUT_PUSH)
        run.schedule_intent(5, "Reduce network delay by 13%")
        run.run_ticks(10)


def test_identical_runs_write_identical_bytes(tmp_path):
    _drive(tmp_path / "a")
    _drive(tmp_path / "b")
    verdicts = compare_run_outputs(tmp_path / "a", tmp_path / "b")
    assert verdicts == {"kpis.csv": True, "events.log": True}


def test_replay_reproduces_a_run_byte_for_byte(tmp_path):
    _drive(tmp_path / "orig")
    replay_run(tmp_path / "orig", tmp_path / "replayed")
    verdicts = compare_run_outputs(tmp_path / "orig", tmp_path / "replayed")
    assert verdicts == {"kpis.csv": True, "events.log": True}


def test_intent_schedule_round_trips(tmp_path):
    d = tmp_path / "run"
    _drive(d)
    schedule = load_intent_schedule(d)
    assert [s["text"] for s in schedule] == [
        THROUGHPUT_PUSH,
        "Reduce network delay by 13%",
    ]
    assert schedule[0]["tick"] == 3
    assert schedule[0]["processed"]["intent_type"] == "throughput"
    assert schedule[0]["processed"]["magnitude_pct"] == 15.0


def test_checkpoints_restore_the_learners(tiny_scenario, tmp_path):
    d = tmp_path / "run"
    run = SimulationRun(tiny_scenario, d, validation_enabled=False)
    run.run_ticks(1)
    run.submit_intent(THROUGHPUT_PUSH)
    run.run_ticks(4)
    path = run.save_checkpoint("mid")
    q_then = run.orchestrator.table.q.copy()
    run.close()
    assert path is not None

    fresh = SimulationRun(tiny_scenario, None, validation_enabled=False)
    assert not np.array_equal(fresh.orchestrator.table.q, q_then) or not q_then.any()
    fresh.load_checkpoint(path)
    assert np.array_equal(fresh.orchestrator.table.q, q_then)


# -- training --------------------------------------------------------------------


def test_trainer_runs_episodes_and_logs(tmp_path):
    scenario = parse_scenario(SHORT_DEADLINE_TOML)
    log = tmp_path / "training.csv"
    trainer = Trainer(scenario, [THROUGHPUT_PUSH], log_path=log)
    results = trainer.run(2)
    assert [r.episode for r in results] == [0, 1]
    assert all(r.outcome in ("reached", "deadline") for r in results)
    assert all(r.seed == scenario.sim.seed + r.episode for r in results)
    lines = log.read_text().splitlines()
    assert lines[0] == TRAINING_LOG_HEADER
    assert len(lines) == 3
    # learners persist across episodes
    assert trainer.orchestrator.table.decisions > 0


def test_trainer_requires_an_intent():
    scenario = parse_scenario(TINY_TOML)
    with pytest.raises(ValueError):
        Trainer(scenario, [])
