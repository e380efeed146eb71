"""Run lifecycle: intent intake, the validation gate, the control loop, persistence.

A :class:`SimulationRun` owns one simulator and drives the full pipeline:
an operator intent is classified, validated against forecast traffic and QoS
drift, converted to a goal, and pursued by the hierarchical controller, which
enables app combinations tick by tick until the goal is reached or the
deadline passes. Everything observable is persisted under a run directory in
append-only files whose bytes are a pure function of (config, seed, intent
schedule).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, TextIO

import numpy as np

from ranorch import hrl
from ranorch.apps import APP_BY_NAME, AppId, AppManager, DESCRIPTORS, index_to_combo
from ranorch.config import (
    KpiKind,
    QosDirection,
    QoSProfile,
    ScenarioConfig,
    TrafficKind,
    parse_scenario,
)
from ranorch.hrl import Goal, GoalError, Orchestrator, compute_rewards, intent_to_goal
from ranorch.intent import (
    IntentExample,
    LlmBackend,
    ProcessedIntent,
    UnintelligibleIntent,
    classify_and_extract,
    load_default_examples,
)
from ranorch.network import KpiSnapshot, NetworkState, Simulator
from ranorch.validation import (
    InsufficientHistory,
    ValidationVerdict,
    predict_traffic,
    validate,
)

KINDS = tuple(TrafficKind)

# The six pipeline steps, in contract order. A rejection terminates the
# stream at whichever step it occurred.
STEP_RECEIVED = "received"
STEP_PROCESSED = "processed"
STEP_VALIDATED = "validated"
STEP_GOAL_ISSUED = "goal_issued"
STEP_ACTION_SELECTED = "action_selected"
STEP_APPS_APPLIED = "apps_applied"

KPI_FIELDS = (
    "slot",
    "throughput_bps",
    "mean_delay_s",
    "ee_bits_per_joule",
    "energy_j",
    "class",
)
KPI_HEADER = ",".join(KPI_FIELDS)
AGGREGATE_CLASS = "all"

TRAINING_LOG_HEADER = "episode,extrinsic_reward,filtered_set_size,epsilon2"


def _fmt(v: float) -> str:
    return format(float(v), ".10g")


def _json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def kpi_rows_for_tick(snap: KpiSnapshot) -> tuple[str, ...]:
    """One aggregate trace row plus one per traffic class, same header.

    Class rows share the network energy denominator, so their efficiency
    cells sum to the aggregate row's; the energy cell repeats the network
    total rather than pretending energy splits by class.
    """
    def line(thr: float, delay: float, ee: float, label: str) -> str:
        return ",".join(
            (
                str(snap.slot),
                _fmt(thr),
                _fmt(delay),
                _fmt(ee),
                _fmt(snap.energy_j),
                label,
            )
        )

    rows = [
        line(
            snap.throughput_bps,
            snap.mean_delay_s,
            snap.ee_bits_per_joule,
            AGGREGATE_CLASS,
        )
    ]
    for kind in KINDS:
        c = snap.per_class[kind]
        rows.append(
            line(c.throughput_bps, c.mean_delay_s, c.ee_bits_per_joule, kind.value)
        )
    return tuple(rows)


def count_qos_violations(
    sim: Simulator, state: NetworkState, profiles: Mapping[TrafficKind, QoSProfile]
) -> int:
    """UEs whose own last-tick service breaks any requirement of their class.

    Throughput requirements only bind when the UE actually offered at least
    the required volume; delay uses the tick's mean packet delay, or the
    head-of-line age when nothing was delivered but packets are waiting.
    Energy-efficiency requirements are a network-level concern and are not
    counted per UE.
    """
    tick_s = sim.cfg.tick_s
    thr = sim.last_tick_ue_delivered / tick_s
    offered = sim.last_tick_ue_offered / tick_s
    cnt = sim.last_tick_ue_delay_cnt
    with np.errstate(invalid="ignore"):
        mean_delay = np.where(cnt > 0, sim.last_tick_ue_delay_sum / np.maximum(cnt, 1), 0.0)
    violated = np.zeros(sim.n_ues, np.bool_)
    for ci, kind in enumerate(KINDS):
        profile = profiles.get(kind)
        if profile is None:
            continue
        members = sim.ue_class == ci
        for req in profile.requirements:
            if req.metric == KpiKind.THROUGHPUT and req.direction == QosDirection.AT_LEAST:
                violated |= members & (offered >= req.value) & (thr < req.value)
            elif req.metric == KpiKind.DELAY and req.direction == QosDirection.AT_MOST:
                served_late = (cnt > 0) & (mean_delay > req.value)
                stalled = (cnt == 0) & (state.queue_pkts > 0) & (
                    state.hol_delay_s > req.value
                )
                violated |= members & (served_late | stalled)
    return int(violated.sum())


@dataclass
class IntentRecord:
    """One intent's journey through the pipeline; mutated in place."""

    intent_id: str
    text: str
    submitted_tick: int
    status: str  # received | rejected | accepted | completed
    processed: Optional[ProcessedIntent] = None
    verdict: Optional[ValidationVerdict] = None
    goal: Optional[Goal] = None
    reasons: tuple[str, ...] = ()
    error: Optional[str] = None
    action_index: Optional[int] = None
    filtered_size: Optional[int] = None
    filter_fallback: bool = False
    epsilon2: Optional[float] = None
    outcome: Optional[str] = None  # reached | deadline
    extrinsic: Optional[float] = None
    completed_tick: Optional[int] = None


@dataclass(frozen=True)
class KpiSlice:
    """Verbatim aggregate trace rows for a [start, end) tick window.

    One row per tick (the ``all`` line of the trace file), so row count
    equals ticks covered; per-class rows are only in ``kpis.csv``.
    """

    header: str
    start_tick: int
    rows: tuple[str, ...]
    clipped: bool
    timeline: tuple[dict, ...]


@dataclass
class RunRecord:
    run_id: str
    config_sha256: str
    seed: int
    intents: list[IntentRecord]
    timeline: list[dict]
    kpi_path: Optional[str]
    checkpoints: list[str] = field(default_factory=list)


class SimulationRun:
    """One live run: simulator, apps, controller, and its persisted artifacts.

    ``run_dir=None`` keeps everything in memory (used by training loops and
    tests); otherwise the directory receives ``config``, ``kpis.csv``,
    ``traffic_history.csv``, ``intents.log``, ``events.log``, ``meta.json``
    and a ``checkpoints/`` directory, all deterministic for a fixed scenario
    and intent schedule.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        run_dir: Optional[str | Path] = None,
        *,
        attention_enabled: bool = True,
        validation_enabled: bool = True,
        forced_actions: Optional[tuple[int, ...]] = None,
        llm_backend: Optional[LlmBackend] = None,
        examples: Optional[Sequence[IntentExample]] = None,
        orchestrator: Optional[Orchestrator] = None,
        app_manager: Optional[AppManager] = None,
        run_id: Optional[str] = None,
    ):
        self.scenario = scenario
        self.sim = Simulator(scenario.sim)
        self.apps = app_manager or AppManager(scenario.sim, scenario.apps)
        self.orchestrator = orchestrator or Orchestrator(
            scenario.orchestrator,
            scenario.sim.seed,
            attention_enabled=attention_enabled,
            forced_actions=forced_actions,
        )
        self.validation_enabled = validation_enabled
        self.llm_backend = llm_backend
        self.examples = (
            tuple(examples) if examples is not None else load_default_examples()
        )
        unknown = [
            n for n in scenario.orchestrator.baseline_apps if n not in APP_BY_NAME
        ]
        if unknown:
            raise ValueError(f"unknown baseline apps: {unknown}")
        self.baseline_apps = frozenset(
            APP_BY_NAME[n] for n in scenario.orchestrator.baseline_apps
        )

        self._state = self.sim.state()
        self._intent_seq = 0
        self._event_seq = 0
        self._pending: deque[tuple[str, Optional[ProcessedIntent]]] = deque()
        self._schedule: dict[int, list[tuple[str, Optional[ProcessedIntent]]]] = {}
        self._active_intent: Optional[IntentRecord] = None
        self._option_announced = False
        self.intents: list[IntentRecord] = []
        self.events: list[dict] = []
        self.kpi_rows: list[str] = []
        self.traffic_history: list[float] = []
        self.timeline: list[dict] = []
        self._enabled_now: frozenset[AppId] = frozenset()
        self._closed = False

        config_hash = hashlib.sha256(scenario.source_text.encode("utf-8")).hexdigest()
        self.run_id = run_id or f"run-s{scenario.sim.seed}-{config_hash[:8]}"
        self.record = RunRecord(
            run_id=self.run_id,
            config_sha256=config_hash,
            seed=scenario.sim.seed,
            intents=self.intents,
            timeline=self.timeline,
            kpi_path=None,
        )

        self.run_dir = Path(run_dir) if run_dir is not None else None
        self._kpi_f: Optional[TextIO] = None
        self._traffic_f: Optional[TextIO] = None
        self._events_f: Optional[TextIO] = None
        self._intents_f: Optional[TextIO] = None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "checkpoints").mkdir(exist_ok=True)
            (self.run_dir / "config").write_text(
                scenario.source_text, encoding="utf-8"
            )
            self._kpi_f = self._open("kpis.csv")
            self._kpi_f.write(KPI_HEADER + "\n")
            self._traffic_f = self._open("traffic_history.csv")
            self._traffic_f.write("tick,offered_bps\n")
            self._events_f = self._open("events.log")
            self._intents_f = self._open("intents.log")
            self.record.kpi_path = str(self.run_dir / "kpis.csv")

    def _open(self, name: str) -> TextIO:
        return open(self.run_dir / name, "w", encoding="utf-8", newline="\n")

    def __enter__(self) -> "SimulationRun":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- intake --------------------------------------------------------------

    def submit_intent(
        self, text: str, processed: Optional[ProcessedIntent] = None
    ) -> str:
        """Queue an intent; it is picked up at the next strategic tick."""
        self._pending.append((text, processed))
        return f"i{self._intent_seq + len(self._pending):04d}"

    def schedule_intent(
        self, tick: int, text: str, processed: Optional[ProcessedIntent] = None
    ) -> None:
        """Queue an intent for a specific future tick (CLI schedules)."""
        self._schedule.setdefault(tick, []).append((text, processed))

    def _emit(self, step: str, intent_id: str, payload: dict) -> dict:
        event = {
            "seq": self._event_seq,
            "t_s": self.sim.tick * self.scenario.sim.tick_s,
            "tick": self.sim.tick,
            "intent_id": intent_id,
            "step": step,
            "payload": payload,
        }
        self._event_seq += 1
        self.events.append(event)
        if self._events_f is not None:
            self._events_f.write(_json_line(event) + "\n")
        return event

    def _log_intent(self, rec: IntentRecord, status: str, extra: dict) -> None:
        line = {
            "id": rec.intent_id,
            "tick": self.sim.tick,
            "t_s": self.sim.tick * self.scenario.sim.tick_s,
            "status": status,
            **extra,
        }
        if self._intents_f is not None:
            self._intents_f.write(_json_line(line) + "\n")

    def _reject(self, rec: IntentRecord, reasons: tuple[str, ...], error: str) -> None:
        rec.status = "rejected"
        rec.reasons = reasons
        rec.error = error
        self._log_intent(rec, "rejected", {"reasons": list(reasons), "error": error})

    def _process_intent(
        self, text: str, pre_processed: Optional[ProcessedIntent], state: NetworkState
    ) -> IntentRecord:
        self._intent_seq += 1
        rec = IntentRecord(
            intent_id=f"i{self._intent_seq:04d}",
            text=text,
            submitted_tick=self.sim.tick,
            status="received",
        )
        self.intents.append(rec)
        self._log_intent(rec, "received", {"text": text})
        self._emit(STEP_RECEIVED, rec.intent_id, {"text": text})

        try:
            processed = pre_processed or classify_and_extract(
                text, self.examples, self.llm_backend
            )
        except UnintelligibleIntent as exc:
            self._emit(STEP_PROCESSED, rec.intent_id, {"error": str(exc)})
            self._reject(rec, ("unintelligible",), str(exc))
            return rec
        rec.processed = processed
        payload = {
            "intent_type": processed.intent_type.value,
            "magnitude_pct": processed.magnitude_pct,
            "keywords": list(processed.keywords),
            "source": processed.source,
        }
        self._emit(STEP_PROCESSED, rec.intent_id, payload)
        self._log_intent(rec, "processed", payload)

        if self.validation_enabled:
            snapshot = self.sim.last_tick_snapshot
            try:
                if snapshot is None:
                    raise InsufficientHistory("no completed measurement tick yet")
                forecast = predict_traffic(
                    self.traffic_history, self.scenario.validation
                )
            except InsufficientHistory as exc:
                self._emit(
                    STEP_VALIDATED,
                    rec.intent_id,
                    {"valid": False, "reasons": ["insufficient_history"],
                     "error": str(exc)},
                )
                self._reject(rec, ("insufficient_history",), str(exc))
                return rec
            verdict = validate(
                processed,
                forecast,
                self.scenario.sim.qos,
                snapshot,
                self.traffic_history,
                self.scenario.validation,
            )
            rec.verdict = verdict
            v_payload = {
                "valid": bool(verdict.valid),
                "branch": verdict.branch.value,
                "reasons": list(verdict.reasons),
                "thresholds": [float(verdict.thresholds[0]),
                               float(verdict.thresholds[1])],
                "forecast_bps": float(verdict.forecast.predicted_bps),
                "drifted": bool(verdict.any_drifted),
            }
            self._emit(STEP_VALIDATED, rec.intent_id, v_payload)
            if not verdict.valid:
                self._reject(rec, verdict.reasons, "validation failed")
                return rec
        else:
            self._emit(
                STEP_VALIDATED, rec.intent_id, {"valid": True, "skipped": True}
            )

        snapshot = self.sim.last_tick_snapshot
        try:
            if snapshot is None:
                raise GoalError("no completed measurement tick yet")
            goal = intent_to_goal(
                processed,
                snapshot.value(processed.intent_type),
                self.scenario.orchestrator,
            )
        except GoalError as exc:
            self._emit(STEP_GOAL_ISSUED, rec.intent_id, {"error": str(exc)})
            self._reject(rec, ("degenerate_baseline",), str(exc))
            return rec
        rec.goal = goal
        rec.status = "accepted"
        g_payload = {
            "metric": goal.metric.value,
            "baseline": goal.baseline_value,
            "target": goal.target_value,
            "magnitude_pct": goal.magnitude_pct,
            "bucket_pct": goal.bucket_pct,
            "deadline_ticks": goal.deadline_ticks,
        }
        self._emit(STEP_GOAL_ISSUED, rec.intent_id, g_payload)
        self._log_intent(rec, "accepted", g_payload)
        self.orchestrator.start_option(goal, state)
        self._active_intent = rec
        self._option_announced = False
        return rec

    # -- the loop --------------------------------------------------------------

    def _update_timeline(self, enabled: frozenset[AppId]) -> None:
        tick = self.sim.tick
        for aid in sorted(enabled - self._enabled_now):
            self.timeline.append(
                {"app": DESCRIPTORS[aid].name, "start_tick": tick, "end_tick": None}
            )
        for aid in sorted(self._enabled_now - enabled):
            name = DESCRIPTORS[aid].name
            for entry in reversed(self.timeline):
                if entry["app"] == name and entry["end_tick"] is None:
                    entry["end_tick"] = tick
                    break
        self._enabled_now = enabled

    def run_ticks(self, n: int) -> None:
        for _ in range(n):
            self._run_one_tick()

    def _run_one_tick(self) -> None:
        if self._closed:
            raise RuntimeError("run is closed")
        state = self._state
        for item in self._schedule.pop(self.sim.tick, []):
            self._pending.append(item)
        if self.orchestrator.option is None and self._pending:
            text, processed = self._pending.popleft()
            self._process_intent(text, processed, state)

        if self.orchestrator.option is not None:
            action, filtered, eps = self.orchestrator.select_action(state)
            # the option's policy is the combination itself; the idle posture
            # does not leak in, so pursuing a goal can switch an app off
            enabled = index_to_combo(action)
            rec = self._active_intent
            if not self._option_announced and rec is not None:
                rec.action_index = action
                rec.filtered_size = len(filtered.actions)
                rec.filter_fallback = filtered.fallback_used
                rec.epsilon2 = eps
                self._emit(
                    STEP_ACTION_SELECTED,
                    rec.intent_id,
                    {
                        "action_index": action,
                        "apps": sorted(DESCRIPTORS[a].name for a in index_to_combo(action)),
                        "filtered_size": len(filtered.actions),
                        "fallback": filtered.fallback_used,
                        "epsilon": eps,
                    },
                )
        else:
            enabled = self.baseline_apps
        self.apps.set_enabled(enabled)
        self._update_timeline(enabled)
        if self.orchestrator.option is not None and not self._option_announced:
            self._emit(
                STEP_APPS_APPLIED,
                self._active_intent.intent_id,
                {"enabled": sorted(DESCRIPTORS[a].name for a in enabled)},
            )
            self._option_announced = True

        strategic = self.apps.strategic_controls(self.sim, state)
        for s in range(self.scenario.sim.slots_per_tick):
            tactical = self.apps.tactical_controls(self.sim, state)
            controls = (strategic + tactical) if s == 0 else tactical
            state, _ = self.sim.step(controls)
        self._state = state

        snap = self.sim.last_tick_snapshot
        assert snap is not None
        done_tick = self.sim.tick - 1
        rows = kpi_rows_for_tick(snap)
        # query slices count ticks, so only the aggregate row is indexed;
        # the class rows still land in the trace file
        self.kpi_rows.append(rows[0])
        if self._kpi_f is not None:
            for row in rows:
                self._kpi_f.write(row + "\n")
        self.traffic_history.append(snap.offered_bps)
        if self._traffic_f is not None:
            self._traffic_f.write(f"{done_tick},{_fmt(snap.offered_bps)}\n")

        if self.orchestrator.option is not None:
            goal = self.orchestrator.option.goal
            achieved = snap.value(goal.metric)
            violations = count_qos_violations(self.sim, state, self.scenario.sim.qos)
            breakdown = compute_rewards(
                goal, achieved, violations, self.scenario.orchestrator.penalty_weight
            )
            finished = self.orchestrator.observe(breakdown, state, achieved)
            if finished is not None:
                rec = self._active_intent
                assert rec is not None
                tol = self.scenario.orchestrator.reach_tolerance
                rec.outcome = "reached" if goal.reached(achieved, tol) else "deadline"
                rec.extrinsic = finished.extrinsic
                rec.completed_tick = self.sim.tick
                rec.status = "completed"
                self._log_intent(
                    rec,
                    "completed",
                    {
                        "outcome": rec.outcome,
                        "achieved": achieved,
                        "target": goal.target_value,
                        "extrinsic": finished.extrinsic,
                        "ticks": finished.ticks_elapsed,
                    },
                )
                self._active_intent = None

    # -- queries ---------------------------------------------------------------

    def query_kpis(
        self, start_tick: int = 0, end_tick: Optional[int] = None
    ) -> KpiSlice:
        """Persisted KPI rows for [start_tick, end_tick), verbatim.

        A window reaching beyond the recorded trace is clipped and flagged.
        """
        total = len(self.kpi_rows)
        want_end = total if end_tick is None else end_tick
        lo = max(0, start_tick)
        hi = max(lo, min(want_end, total))
        clipped = start_tick < 0 or want_end > total
        spans = tuple(
            dict(entry) for entry in self.timeline
            if (entry["end_tick"] is None or entry["end_tick"] > lo)
            and entry["start_tick"] < hi
        )
        return KpiSlice(
            header=KPI_HEADER,
            start_tick=lo,
            rows=tuple(self.kpi_rows[lo:hi]),
            clipped=clipped,
            timeline=spans,
        )

    def save_checkpoint(self, name: str = "final") -> Optional[Path]:
        if self.run_dir is None:
            return None
        path = self.run_dir / "checkpoints" / f"{name}.json"
        payload = {
            "version": 1,
            "tick": self.sim.tick,
            "qtable": self.orchestrator.table.checkpoint(),
            "apps": self.apps.checkpoint(),
        }
        path.write_text(_json_line(payload) + "\n", encoding="utf-8")
        self.record.checkpoints.append(str(path))
        return path

    def load_checkpoint(self, path: str | Path) -> None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        self.orchestrator.table.load(data["qtable"])
        self.apps.load(data["apps"])

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.run_dir is not None:
            self.save_checkpoint("final")
            meta = {
                "run_id": self.run_id,
                "seed": self.scenario.sim.seed,
                "config_sha256": self.record.config_sha256,
                "attention_enabled": self.orchestrator.attention_enabled,
                "validation_enabled": self.validation_enabled,
                "baseline_apps": sorted(
                    DESCRIPTORS[a].name for a in self.baseline_apps
                ),
                "ticks_completed": self.sim.tick,
                "rejected_controls": self.sim.rejected_controls,
            }
            (self.run_dir / "meta.json").write_text(
                json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
        for f in (self._kpi_f, self._traffic_f, self._events_f, self._intents_f):
            if f is not None:
                f.close()
        self._kpi_f = self._traffic_f = self._events_f = self._intents_f = None


# ---------------------------------------------------------------------------
# replay

def load_intent_schedule(run_dir: str | Path) -> list[dict]:
    """Recover (tick, text, processed fields) per intent from intents.log."""
    path = Path(run_dir) / "intents.log"
    by_id: dict[str, dict] = {}
    order: list[str] = []
    if not path.exists():
        return []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = json.loads(raw)
        iid = line["id"]
        if iid not in by_id:
            by_id[iid] = {"id": iid}
            order.append(iid)
        if line["status"] == "received":
            by_id[iid]["tick"] = line["tick"]
            by_id[iid]["text"] = line["text"]
        elif line["status"] == "processed":
            by_id[iid]["processed"] = {
                "intent_type": line["intent_type"],
                "magnitude_pct": line["magnitude_pct"],
                "keywords": line["keywords"],
                "source": line["source"],
            }
    return [by_id[i] for i in order]


def replay_run(run_dir: str | Path, out_dir: str | Path) -> Path:
    """Re-execute a persisted run from its config, seed and intent schedule.

    The replay bypasses any LLM back-end by re-injecting the recorded
    processed intents, so its outputs are comparable byte for byte.
    """
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "meta.json").read_text(encoding="utf-8"))
    scenario = parse_scenario((run_dir / "config").read_text(encoding="utf-8"))
    if meta["seed"] != scenario.sim.seed:  # CLI --seed overrode the file
        scenario = dataclasses.replace(
            scenario, sim=dataclasses.replace(scenario.sim, seed=meta["seed"])
        )
    out = Path(out_dir)
    with SimulationRun(
        scenario,
        out,
        attention_enabled=meta["attention_enabled"],
        validation_enabled=meta["validation_enabled"],
    ) as run:
        for entry in load_intent_schedule(run_dir):
            processed = None
            p = entry.get("processed")
            if p is not None:
                processed = ProcessedIntent(
                    raw_text=entry["text"],
                    intent_type=KpiKind(p["intent_type"]),
                    keywords=tuple(p["keywords"]),
                    magnitude_pct=float(p["magnitude_pct"]),
                    source=p["source"],
                )
            run.schedule_intent(entry["tick"], entry["text"], processed)
        run.run_ticks(meta["ticks_completed"])
    return out


def compare_run_outputs(
    a: str | Path, b: str | Path, names: Sequence[str] = ("kpis.csv", "events.log")
) -> dict[str, bool]:
    """Byte-compare the named artifacts of two run directories."""
    out = {}
    for name in names:
        pa, pb = Path(a) / name, Path(b) / name
        out[name] = pa.exists() and pb.exists() and pa.read_bytes() == pb.read_bytes()
    return out


# ---------------------------------------------------------------------------
# episodic training

@dataclass(frozen=True)
class EpisodeResult:
    episode: int
    seed: int
    intent_text: str
    outcome: str  # reached | deadline | rejected
    extrinsic: float
    ticks: int
    filtered_size: int
    fallback: bool
    epsilon2: float
    state_bucket: int
    goal_bucket: int


class Trainer:
    """Runs episodes of one scenario against a persistent controller.

    Each episode reseeds the simulator (base seed + episode index), warms it
    up under the baseline app posture, injects the next intent from the
    rotation, and runs until the option terminates. App learners and the
    orchestrator's tables carry over across episodes; validation is bypassed
    because training explores actions a gate would veto.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        intents: Sequence[str],
        *,
        attention_enabled: bool = True,
        forced_actions: Optional[tuple[int, ...]] = None,
        warmup_ticks: int = 2,
        log_path: Optional[str | Path] = None,
    ):
        if not intents:
            raise ValueError("at least one training intent is required")
        self.scenario = scenario
        self.warmup_ticks = warmup_ticks
        self.log_path = Path(log_path) if log_path is not None else None
        self.orchestrator = Orchestrator(
            scenario.orchestrator,
            scenario.sim.seed,
            attention_enabled=attention_enabled,
            forced_actions=forced_actions,
        )
        self.apps = AppManager(scenario.sim, scenario.apps)
        examples = load_default_examples()
        self._processed = [
            classify_and_extract(text, examples, None) for text in intents
        ]
        self.results: list[EpisodeResult] = []

    def run(self, episodes: int) -> list[EpisodeResult]:
        log_f = None
        if self.log_path is not None:
            new = not self.log_path.exists()
            log_f = open(self.log_path, "a", encoding="utf-8", newline="\n")
            if new:
                log_f.write(TRAINING_LOG_HEADER + "\n")
        try:
            for _ in range(episodes):
                result = self._episode(len(self.results))
                self.results.append(result)
                if log_f is not None:
                    log_f.write(
                        f"{result.episode},{_fmt(result.extrinsic)},"
                        f"{result.filtered_size},{_fmt(result.epsilon2)}\n"
                    )
        finally:
            if log_f is not None:
                log_f.close()
        return self.results[-episodes:]

    def _episode(self, index: int) -> EpisodeResult:
        ep_seed = self.scenario.sim.seed + index
        scen = dataclasses.replace(
            self.scenario, sim=dataclasses.replace(self.scenario.sim, seed=ep_seed)
        )
        processed = self._processed[index % len(self._processed)]
        run = SimulationRun(
            scen,
            None,
            validation_enabled=False,
            orchestrator=self.orchestrator,
            app_manager=self.apps,
        )
        run.run_ticks(self.warmup_ticks)
        run.submit_intent(processed.raw_text, processed)
        deadline = self.scenario.orchestrator.deadline_ticks
        rec: Optional[IntentRecord] = None
        for _ in range(deadline + 2):
            run._run_one_tick()
            rec = run.intents[-1] if run.intents else None
            if rec is not None and rec.status in ("completed", "rejected"):
                break
        assert rec is not None
        state_b = hrl.state_bucket(run._state)
        if rec.status == "rejected":
            return EpisodeResult(
                episode=index,
                seed=ep_seed,
                intent_text=processed.raw_text,
                outcome="rejected",
                extrinsic=0.0,
                ticks=0,
                filtered_size=0,
                fallback=False,
                epsilon2=hrl.epsilon2(
                    self.scenario.orchestrator, self.orchestrator.table.decisions
                ),
                state_bucket=state_b,
                goal_bucket=-1,
            )
        assert rec.goal is not None and rec.extrinsic is not None
        return EpisodeResult(
            episode=index,
            seed=ep_seed,
            intent_text=processed.raw_text,
            outcome=rec.outcome or "deadline",
            extrinsic=rec.extrinsic,
            ticks=rec.completed_tick - rec.submitted_tick,
            filtered_size=rec.filtered_size or 0,
            fallback=rec.filter_fallback,
            epsilon2=rec.epsilon2 if rec.epsilon2 is not None else 0.0,
            state_bucket=state_b,
            goal_bucket=hrl.goal_bucket_index(rec.goal, self.scenario.orchestrator),
        )
