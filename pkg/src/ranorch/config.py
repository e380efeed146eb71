"""Scenario configuration: typed defaults plus a TOML loader.

A scenario file is plain TOML. Every key has a default, so the empty document
is a valid scenario; semantic errors are reported with the section and key
that caused them, syntax errors with the parser's line/column message.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib as _toml
except ImportError:  # Python < 3.11
    import tomli as _toml


class ConfigError(ValueError):
    """Scenario file is syntactically valid TOML but semantically wrong."""


class TrafficKind(str, Enum):
    VIDEO = "video"
    GAMING = "gaming"
    VOICE = "voice"
    URLLC = "urllc"


class KpiKind(str, Enum):
    THROUGHPUT = "throughput"
    DELAY = "delay"
    ENERGY_EFFICIENCY = "energy_efficiency"


class QosDirection(str, Enum):
    AT_LEAST = "at_least"
    AT_MOST = "at_most"


class Band(IntEnum):
    """Logical carrier tiers. Interference is confined within a band."""

    LTE_LOW = 0
    NR_MID = 1
    NR_HIGH = 2


@dataclass(frozen=True)
class RatParams:
    """Per-carrier radio parameters."""

    band: Band
    carrier_hz: float
    bandwidth_hz: float
    subcarrier_hz: float
    max_tx_dbm: float
    pathloss_exponent: float
    se_cap_bps_hz: float  # modulation ceiling applied on top of log2(1+sinr)

    @property
    def pl0_db(self) -> float:
        """Free-space loss at the 1 m reference distance."""
        return 20.0 * math.log10(4.0 * math.pi * self.carrier_hz / 299_792_458.0)


@dataclass(frozen=True)
class TrafficClass:
    """One traffic type: arrival process, packet size and UE population."""

    kind: TrafficKind
    n_ues: int
    mean_interarrival_s: float
    packet_bits: int
    process: str  # "pareto" | "uniform" | "poisson"
    pareto_shape: float = 1.5

    def offered_bps(self) -> float:
        """Long-run offered load of the whole class."""
        return self.n_ues * self.packet_bits / self.mean_interarrival_s


@dataclass(frozen=True)
class QosRequirement:
    metric: KpiKind
    direction: QosDirection
    value: float


@dataclass(frozen=True)
class QoSProfile:
    """Per-class service expectations, checked per UE and per class."""

    requirements: tuple[QosRequirement, ...]

    def metrics(self) -> set[KpiKind]:
        return {r.metric for r in self.requirements}


@dataclass(frozen=True)
class BeamCodebook:
    """Evenly spaced analog beams for high-band cells."""

    n_beams: int = 16
    num_antennas: int = 64
    off_lobe_floor: float = 0.01  # linear cos() floor, -20 dB

    def angles(self) -> tuple[float, ...]:
        step = 2.0 * math.pi / self.n_beams
        return tuple(-math.pi + step * i for i in range(self.n_beams))

    @property
    def boresight_gain_db(self) -> float:
        return 10.0 * math.log10(self.num_antennas)


@dataclass(frozen=True)
class PowerLevels:
    """Discrete transmit-power menu for small sites."""

    candidates_dbm: tuple[float, ...] = (24.0, 30.0, 37.0, 43.0)
    default_index: int = 0


@dataclass(frozen=True)
class EnergyParams:
    p0_w: float
    delta: float  # slope vs transmit power in watts
    sleep_w: float


@dataclass(frozen=True)
class SimConfig:
    """Everything the simulator needs to build a reproducible network."""

    seed: int = 1
    slot_s: float = 0.01
    slots_per_tick: int = 100
    n_small: int = 6
    macro_radius_m: float = 500.0
    small_ring_m: float = 260.0
    ue_speed_mps: float = 1.5
    noise_figure_db: float = 7.0
    thermal_dbm_hz: float = -174.0
    shadowing_sigma_db: float = 6.0
    queue_capacity_packets: int = 8192
    rats: tuple[RatParams, ...] = (
        RatParams(Band.LTE_LOW, 800e6, 40e6, 15e3, 38.0, 2.8, 4.0),
        RatParams(Band.NR_MID, 3.5e9, 60e6, 15e3, 43.0, 3.0, 7.6),
        RatParams(Band.NR_HIGH, 30e9, 60e6, 15e3, 43.0, 3.5, 7.6),
    )
    beams: BeamCodebook = BeamCodebook()
    power: PowerLevels = PowerLevels()
    macro_energy: EnergyParams = EnergyParams(130.0, 4.7, 10.0)
    small_energy: EnergyParams = EnergyParams(6.8, 4.0, 1.0)
    traffic: tuple[TrafficClass, ...] = (
        TrafficClass(TrafficKind.VIDEO, 15, 0.0125, 1500 * 8, "pareto"),
        TrafficClass(TrafficKind.GAMING, 15, 0.040, 1500 * 8, "uniform"),
        TrafficClass(TrafficKind.VOICE, 15, 0.020, 500 * 8, "poisson"),
        TrafficClass(TrafficKind.URLLC, 15, 0.0005, 256 * 8, "poisson"),
    )
    qos: dict[TrafficKind, QoSProfile] = field(
        default_factory=lambda: dict(DEFAULT_QOS)
    )

    @property
    def n_ues(self) -> int:
        return sum(t.n_ues for t in self.traffic)

    @property
    def tick_s(self) -> float:
        return self.slot_s * self.slots_per_tick

    def rat(self, band: Band) -> RatParams:
        for r in self.rats:
            if r.band == band:
                return r
        raise KeyError(band)

    def offered_bps(self) -> float:
        return sum(t.offered_bps() for t in self.traffic)


DEFAULT_QOS: dict[TrafficKind, QoSProfile] = {
    TrafficKind.VIDEO: QoSProfile(
        (
            QosRequirement(KpiKind.THROUGHPUT, QosDirection.AT_LEAST, 0.8e6),
            QosRequirement(KpiKind.DELAY, QosDirection.AT_MOST, 0.15),
        )
    ),
    TrafficKind.GAMING: QoSProfile(
        (
            QosRequirement(KpiKind.THROUGHPUT, QosDirection.AT_LEAST, 0.2e6),
            QosRequirement(KpiKind.DELAY, QosDirection.AT_MOST, 0.10),
        )
    ),
    TrafficKind.VOICE: QoSProfile(
        (QosRequirement(KpiKind.DELAY, QosDirection.AT_MOST, 0.15),)
    ),
    TrafficKind.URLLC: QoSProfile(
        (QosRequirement(KpiKind.DELAY, QosDirection.AT_MOST, 0.05),)
    ),
}


@dataclass(frozen=True)
class ValidationConfig:
    """Traffic thresholds and drift settings for intent validation."""

    high_bps: float = 50e6
    low_bps: float = 8e6
    season_ticks: int = 24
    min_window_ticks: int = 24
    percentile_high: float = 80.0
    percentile_low: float = 20.0
    recompute_window_ticks: int = 72
    equal_widen_frac: float = 0.01
    forecaster: str = "seasonal_naive"
    # None means the intent targets every class with a matching profiled metric
    targeted_classes: Optional[tuple[TrafficKind, ...]] = None


@dataclass(frozen=True)
class AttentionConfig:
    """Relevance scorer over (state, intent, action) feature vectors."""

    # Hand-calibrated so each intent type keeps at most 12 of 31 actions at
    # the default threshold while every kept set covers the intent KPI.
    weights: tuple[float, ...] = (5.2, 1.6, -3.4, 0.8, 0.0, -1.2)
    bias: float = -5.45
    threshold: float = 0.3
    fallback_top_k: int = 3


@dataclass(frozen=True)
class OrchestratorConfig:
    """Hierarchical controller hyperparameters."""

    q_alpha: float = 0.00025
    q_gamma: float = 0.99
    eps_start: float = 1.0
    eps_floor: float = 0.1
    eps_hold_decisions: int = 0
    eps_anneal_decisions: int = 400
    deadline_ticks: int = 50
    reach_tolerance: float = 0.02
    penalty_weight: float = 0.1
    goal_buckets: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 30.0)
    baseline_apps: tuple[str, ...] = ()
    attention: AttentionConfig = AttentionConfig()


@dataclass(frozen=True)
class AppConfig:
    """Shared hyperparameters of the per-app learners and heuristics."""

    q_alpha: float = 0.5
    q_gamma: float = 0.9
    batch_size: int = 32
    exploring_steps: int = 3000
    explore_eps: float = 0.05
    replay_capacity: int = 20000
    sleep_load_threshold: float = 0.1
    wake_load_threshold: float = 0.7
    handover_max_per_slot: int = 3


@dataclass(frozen=True)
class ScenarioConfig:
    sim: SimConfig = SimConfig()
    validation: ValidationConfig = ValidationConfig()
    orchestrator: OrchestratorConfig = OrchestratorConfig()
    apps: AppConfig = AppConfig()
    source_text: str = ""  # verbatim scenario file, copied into run dirs


# ---------------------------------------------------------------------------
# TOML loading


def _section(table: dict, name: str) -> dict:
    sub = table.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section [{name}] must be a table")
    return sub


def _take(table: dict, section: str, key: str, kind, default):
    if key not in table:
        return default
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"section [{section}]: key {key!r} expects {kind.__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def _check_unknown(table: dict, section: str, known: Sequence[str]) -> None:
    for key in table:
        if key not in known:
            raise ConfigError(f"section [{section}]: unknown key {key!r}")


def _parse_rat(table: dict, section: str, base: RatParams) -> RatParams:
    _check_unknown(
        table,
        section,
        (
            "carrier_hz",
            "bandwidth_hz",
            "subcarrier_hz",
            "max_tx_dbm",
            "pathloss_exponent",
            "se_cap_bps_hz",
        ),
    )
    return RatParams(
        band=base.band,
        carrier_hz=_take(table, section, "carrier_hz", float, base.carrier_hz),
        bandwidth_hz=_take(table, section, "bandwidth_hz", float, base.bandwidth_hz),
        subcarrier_hz=_take(table, section, "subcarrier_hz", float, base.subcarrier_hz),
        max_tx_dbm=_take(table, section, "max_tx_dbm", float, base.max_tx_dbm),
        pathloss_exponent=_take(
            table, section, "pathloss_exponent", float, base.pathloss_exponent
        ),
        se_cap_bps_hz=_take(
            table, section, "se_cap_bps_hz", float, base.se_cap_bps_hz
        ),
    )


def _parse_traffic(table: dict, defaults: SimConfig) -> tuple[TrafficClass, ...]:
    by_kind = {t.kind: t for t in defaults.traffic}
    out = []
    for kind in TrafficKind:
        sub = table.get(kind.value, {})
        section = f"traffic.{kind.value}"
        if not isinstance(sub, dict):
            raise ConfigError(f"section [{section}] must be a table")
        base = by_kind[kind]
        _check_unknown(
            sub,
            section,
            ("ues", "mean_interarrival_s", "packet_bits", "process", "pareto_shape"),
        )
        process = _take(sub, section, "process", str, base.process)
        if process not in ("pareto", "uniform", "poisson"):
            raise ConfigError(
                f"section [{section}]: process must be pareto|uniform|poisson"
            )
        cls = TrafficClass(
            kind=kind,
            n_ues=_take(sub, section, "ues", int, base.n_ues),
            mean_interarrival_s=_take(
                sub, section, "mean_interarrival_s", float, base.mean_interarrival_s
            ),
            packet_bits=_take(sub, section, "packet_bits", int, base.packet_bits),
            process=process,
            pareto_shape=_take(sub, section, "pareto_shape", float, base.pareto_shape),
        )
        if cls.n_ues < 0:
            raise ConfigError(f"section [{section}]: ues must be >= 0")
        if cls.mean_interarrival_s <= 0:
            raise ConfigError(f"section [{section}]: mean_interarrival_s must be > 0")
        if cls.pareto_shape <= 1.0:
            raise ConfigError(
                f"section [{section}]: pareto_shape must be > 1 for a finite mean"
            )
        out.append(cls)
    return tuple(out)


_METRIC_KEYS = {
    "throughput_min_bps": (KpiKind.THROUGHPUT, QosDirection.AT_LEAST),
    "delay_max_s": (KpiKind.DELAY, QosDirection.AT_MOST),
    "energy_efficiency_min_bpj": (KpiKind.ENERGY_EFFICIENCY, QosDirection.AT_LEAST),
}


def _parse_qos(table: dict) -> dict[TrafficKind, QoSProfile]:
    out = dict(DEFAULT_QOS)
    for kind in TrafficKind:
        sub = table.get(kind.value)
        if sub is None:
            continue
        section = f"qos.{kind.value}"
        if not isinstance(sub, dict):
            raise ConfigError(f"section [{section}] must be a table")
        _check_unknown(sub, section, tuple(_METRIC_KEYS))
        reqs = []
        for key, (metric, direction) in _METRIC_KEYS.items():
            if key in sub:
                value = _take(sub, section, key, float, None)
                if value is None or value <= 0:
                    raise ConfigError(f"section [{section}]: {key} must be > 0")
                reqs.append(QosRequirement(metric, direction, value))
        out[kind] = QoSProfile(tuple(reqs))
    return out


_APP_NAMES = (
    "traffic_steering",
    "cell_sleeping",
    "beamforming",
    "power_allocation",
    "handover",
)


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario document; raise ConfigError with an anchored message."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"malformed scenario: {exc}") from exc

    _check_unknown(
        doc,
        "top level",
        ("sim", "rat", "traffic", "qos", "power", "validation", "orchestrator", "apps"),
    )
    defaults = SimConfig()

    sim_t = _section(doc, "sim")
    _check_unknown(
        sim_t,
        "sim",
        (
            "seed",
            "slot_s",
            "slots_per_tick",
            "n_small",
            "macro_radius_m",
            "small_ring_m",
            "ue_speed_mps",
            "noise_figure_db",
            "shadowing_sigma_db",
            "queue_capacity_packets",
            "beam_count",
            "beam_antennas",
        ),
    )

    rat_t = _section(doc, "rat")
    _check_unknown(rat_t, "rat", ("lte", "nr_mid", "nr_high"))
    rat_names = {"lte": Band.LTE_LOW, "nr_mid": Band.NR_MID, "nr_high": Band.NR_HIGH}
    rats = []
    for name, band in rat_names.items():
        base = defaults.rat(band)
        rats.append(_parse_rat(_section(rat_t, name), f"rat.{name}", base))

    power_t = _section(doc, "power")
    _check_unknown(power_t, "power", ("candidates_dbm", "default_index"))
    candidates = power_t.get("candidates_dbm", list(defaults.power.candidates_dbm))
    if not isinstance(candidates, list) or not all(
        isinstance(c, (int, float)) for c in candidates
    ):
        raise ConfigError("section [power]: candidates_dbm must be a number array")
    if not candidates:
        raise ConfigError("section [power]: candidates_dbm must be non-empty")
    default_index = _take(
        power_t, "power", "default_index", int, defaults.power.default_index
    )
    if not 0 <= default_index < len(candidates):
        raise ConfigError("section [power]: default_index out of range")

    beams = BeamCodebook(
        n_beams=_take(sim_t, "sim", "beam_count", int, defaults.beams.n_beams),
        num_antennas=_take(
            sim_t, "sim", "beam_antennas", int, defaults.beams.num_antennas
        ),
    )
    if beams.n_beams < 1:
        raise ConfigError("section [sim]: beam_count must be >= 1")

    sim = SimConfig(
        seed=_take(sim_t, "sim", "seed", int, defaults.seed),
        slot_s=_take(sim_t, "sim", "slot_s", float, defaults.slot_s),
        slots_per_tick=_take(
            sim_t, "sim", "slots_per_tick", int, defaults.slots_per_tick
        ),
        n_small=_take(sim_t, "sim", "n_small", int, defaults.n_small),
        macro_radius_m=_take(
            sim_t, "sim", "macro_radius_m", float, defaults.macro_radius_m
        ),
        small_ring_m=_take(sim_t, "sim", "small_ring_m", float, defaults.small_ring_m),
        ue_speed_mps=_take(sim_t, "sim", "ue_speed_mps", float, defaults.ue_speed_mps),
        noise_figure_db=_take(
            sim_t, "sim", "noise_figure_db", float, defaults.noise_figure_db
        ),
        shadowing_sigma_db=_take(
            sim_t, "sim", "shadowing_sigma_db", float, defaults.shadowing_sigma_db
        ),
        queue_capacity_packets=_take(
            sim_t, "sim", "queue_capacity_packets", int, defaults.queue_capacity_packets
        ),
        rats=tuple(rats),
        beams=beams,
        power=PowerLevels(tuple(float(c) for c in candidates), default_index),
        traffic=_parse_traffic(_section(doc, "traffic"), defaults),
        qos=_parse_qos(_section(doc, "qos")),
    )
    if sim.slot_s <= 0 or sim.slots_per_tick < 1:
        raise ConfigError("section [sim]: slot_s must be > 0, slots_per_tick >= 1")
    if sim.n_small < 0:
        raise ConfigError("section [sim]: n_small must be >= 0")
    if sim.n_ues == 0:
        raise ConfigError("section [traffic]: scenario has no UEs")

    val_t = _section(doc, "validation")
    _check_unknown(
        val_t,
        "validation",
        (
            "high_bps",
            "low_bps",
            "season_ticks",
            "min_window_ticks",
            "percentile_high",
            "percentile_low",
            "recompute_window_ticks",
            "forecaster",
            "targeted_classes",
        ),
    )
    vd = ValidationConfig()
    targeted = val_t.get("targeted_classes")
    targeted_parsed: Optional[tuple[TrafficKind, ...]] = None
    if targeted is not None:
        if not isinstance(targeted, list):
            raise ConfigError(
                "section [validation]: targeted_classes must be a string array"
            )
        try:
            targeted_parsed = tuple(TrafficKind(t) for t in targeted)
        except ValueError as exc:
            raise ConfigError(
                f"section [validation]: unknown traffic class in targeted_classes: {exc}"
            ) from exc
    validation = ValidationConfig(
        high_bps=_take(val_t, "validation", "high_bps", float, vd.high_bps),
        low_bps=_take(val_t, "validation", "low_bps", float, vd.low_bps),
        season_ticks=_take(val_t, "validation", "season_ticks", int, vd.season_ticks),
        min_window_ticks=_take(
            val_t, "validation", "min_window_ticks", int, vd.min_window_ticks
        ),
        percentile_high=_take(
            val_t, "validation", "percentile_high", float, vd.percentile_high
        ),
        percentile_low=_take(
            val_t, "validation", "percentile_low", float, vd.percentile_low
        ),
        recompute_window_ticks=_take(
            val_t, "validation", "recompute_window_ticks", int, vd.recompute_window_ticks
        ),
        forecaster=_take(val_t, "validation", "forecaster", str, vd.forecaster),
        targeted_classes=targeted_parsed,
    )
    if validation.low_bps >= validation.high_bps:
        raise ConfigError("section [validation]: low_bps must be < high_bps")
    if not 0 < validation.percentile_low < validation.percentile_high < 100:
        raise ConfigError(
            "section [validation]: percentiles must satisfy 0 < low < high < 100"
        )

    orch_t = _section(doc, "orchestrator")
    _check_unknown(
        orch_t,
        "orchestrator",
        (
            "deadline_ticks",
            "penalty_weight",
            "eps_hold_decisions",
            "eps_anneal_decisions",
            "baseline_apps",
            "attention",
        ),
    )
    od = OrchestratorConfig()
    baseline = orch_t.get("baseline_apps", list(od.baseline_apps))
    if not isinstance(baseline, list) or not all(isinstance(b, str) for b in baseline):
        raise ConfigError(
            "section [orchestrator]: baseline_apps must be a string array"
        )
    for b in baseline:
        if b not in _APP_NAMES:
            raise ConfigError(
                f"section [orchestrator]: unknown app {b!r} in baseline_apps"
            )
    att_t = _section(orch_t, "attention")
    _check_unknown(att_t, "orchestrator.attention", ("threshold", "weights", "bias"))
    ad = od.attention
    weights = att_t.get("weights", list(ad.weights))
    if not isinstance(weights, list) or len(weights) != len(ad.weights):
        raise ConfigError(
            "section [orchestrator.attention]: weights must be an array of "
            f"{len(ad.weights)} numbers"
        )
    attention = AttentionConfig(
        weights=tuple(float(w) for w in weights),
        bias=_take(att_t, "orchestrator.attention", "bias", float, ad.bias),
        threshold=_take(
            att_t, "orchestrator.attention", "threshold", float, ad.threshold
        ),
    )
    orchestrator = OrchestratorConfig(
        deadline_ticks=_take(
            orch_t, "orchestrator", "deadline_ticks", int, od.deadline_ticks
        ),
        penalty_weight=_take(
            orch_t, "orchestrator", "penalty_weight", float, od.penalty_weight
        ),
        eps_hold_decisions=_take(
            orch_t, "orchestrator", "eps_hold_decisions", int, od.eps_hold_decisions
        ),
        eps_anneal_decisions=_take(
            orch_t, "orchestrator", "eps_anneal_decisions", int, od.eps_anneal_decisions
        ),
        baseline_apps=tuple(baseline),
        attention=attention,
    )
    if orchestrator.deadline_ticks < 1:
        raise ConfigError("section [orchestrator]: deadline_ticks must be >= 1")
    if orchestrator.eps_hold_decisions < 0:
        raise ConfigError("section [orchestrator]: eps_hold_decisions must be >= 0")

    apps_t = _section(doc, "apps")
    _check_unknown(
        apps_t,
        "apps",
        (
            "exploring_steps",
            "sleep_load_threshold",
            "wake_load_threshold",
            "handover_max_per_slot",
        ),
    )
    appd = AppConfig()
    apps = AppConfig(
        exploring_steps=_take(
            apps_t, "apps", "exploring_steps", int, appd.exploring_steps
        ),
        sleep_load_threshold=_take(
            apps_t, "apps", "sleep_load_threshold", float, appd.sleep_load_threshold
        ),
        wake_load_threshold=_take(
            apps_t, "apps", "wake_load_threshold", float, appd.wake_load_threshold
        ),
        handover_max_per_slot=_take(
            apps_t, "apps", "handover_max_per_slot", int, appd.handover_max_per_slot
        ),
    )

    return ScenarioConfig(
        sim=sim,
        validation=validation,
        orchestrator=orchestrator,
        apps=apps,
        source_text=text,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc}") from exc
    try:
        return parse_scenario(text)
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
