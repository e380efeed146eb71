"""Intent validation: traffic forecast gating plus QoS drift analysis.

The forecast routes validation into one of three branches. Outside the
configured thresholds the drift check runs directly; between them the
thresholds themselves are recomputed from recent history percentiles and the
drift check decides alone. Two declared conflict rules can invalidate an
intent regardless of drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ranorch.config import (
    KpiKind,
    QosDirection,
    QoSProfile,
    TrafficKind,
    ValidationConfig,
)
from ranorch.intent import ProcessedIntent
from ranorch.network import KpiSnapshot


class ValidationError(Exception):
    pass


class InsufficientHistory(ValidationError):
    """Not enough traffic history for the configured forecaster."""


class DegenerateMeasurement(ValidationError):
    """An achieved KPI cannot be normalized (e.g. a zero delay)."""


class Branch(str, Enum):
    HIGH_TRAFFIC = "high_traffic"
    LOW_TRAFFIC = "low_traffic"
    THRESHOLDS_RECOMPUTED = "thresholds_recomputed"


@dataclass(frozen=True)
class ForecastResult:
    predicted_bps: float
    model: str
    horizon_ticks: int


@dataclass(frozen=True)
class DriftEntry:
    """One profiled metric compared against what the network achieved.

    ``shortfall`` is measured after normalization (upper-bounded metrics are
    inverted so that bigger is always better); raw values keep their units.
    """

    metric: KpiKind
    target: float
    achieved: float
    normalized_target: float
    normalized_achieved: float
    shortfall: float
    drifted: bool


@dataclass(frozen=True)
class DriftReport:
    traffic_class: Optional[TrafficKind]
    entries: tuple[DriftEntry, ...]

    @property
    def any_drifted(self) -> bool:
        return any(e.drifted for e in self.entries)


@dataclass(frozen=True)
class ValidationVerdict:
    valid: bool
    branch: Branch
    forecast: ForecastResult
    thresholds: tuple[float, float]  # (high, low), possibly recomputed
    drift: tuple[DriftReport, ...] = ()
    reasons: tuple[str, ...] = field(default=())

    @property
    def any_drifted(self) -> bool:
        return any(r.any_drifted for r in self.drift)


# ---------------------------------------------------------------------------
# forecasting

Forecaster = Callable[[Sequence[float], ValidationConfig], ForecastResult]

_FORECASTERS: dict[str, Forecaster] = {}


def register_forecaster(name: str, fn: Forecaster) -> None:
    """Plug in a forecaster; the name is referenced from scenario config."""
    _FORECASTERS[name] = fn


def _seasonal_naive(history: Sequence[float], cfg: ValidationConfig) -> ForecastResult:
    season = cfg.season_ticks
    need = max(season, cfg.min_window_ticks)
    if len(history) < need:
        raise InsufficientHistory(
            f"seasonal-naive needs {need} ticks of history, have {len(history)}"
        )
    return ForecastResult(float(history[-season]), "seasonal_naive", 1)


register_forecaster("seasonal_naive", _seasonal_naive)


def predict_traffic(
    history: Sequence[float], cfg: ValidationConfig
) -> ForecastResult:
    """Forecast next-tick offered volume with the configured model."""
    try:
        fn = _FORECASTERS[cfg.forecaster]
    except KeyError:
        raise ValidationError(f"unknown forecaster {cfg.forecaster!r}") from None
    return fn(history, cfg)


# ---------------------------------------------------------------------------
# drift

def _normalize(metric_direction: QosDirection, value: float, what: str) -> float:
    if metric_direction == QosDirection.AT_MOST:
        if value <= 0:
            raise DegenerateMeasurement(f"cannot normalize non-positive {what}")
        return 1.0 / value
    return value


def compute_drift(
    profile: QoSProfile,
    achieved: Mapping[KpiKind, float],
    traffic_class: Optional[TrafficKind] = None,
) -> DriftReport:
    """Compare achieved KPIs against a profile's requirements.

    Upper-bounded requirements are inverted before comparison, so in
    normalized space an entry drifts exactly when achievement falls short of
    the target. Overshoot is not drift.
    """
    entries = []
    for req in profile.requirements:
        a_raw = achieved[req.metric]
        d_norm = _normalize(req.direction, req.value, f"target {req.metric.value}")
        a_norm = _normalize(req.direction, a_raw, f"achieved {req.metric.value}")
        shortfall = d_norm - a_norm if a_norm <= d_norm else 0.0
        entries.append(
            DriftEntry(
                metric=req.metric,
                target=req.value,
                achieved=a_raw,
                normalized_target=d_norm,
                normalized_achieved=a_norm,
                shortfall=shortfall,
                drifted=shortfall > 0.0,
            )
        )
    return DriftReport(traffic_class, tuple(entries))


def recompute_thresholds(
    history: Sequence[float], cfg: ValidationConfig
) -> tuple[float, float]:
    """New (high, low) thresholds from windowed history percentiles."""
    window = np.asarray(history[-cfg.recompute_window_ticks :], dtype=np.float64)
    if window.size == 0 or not np.any(window > 0):
        raise ValidationError(
            "traffic history is all zero; thresholds cannot be recomputed"
        )
    high = float(np.percentile(window, cfg.percentile_high))
    low = float(np.percentile(window, cfg.percentile_low))
    if high == low:
        high = high * (1.0 + cfg.equal_widen_frac)
        low = low * (1.0 - cfg.equal_widen_frac)
    return high, low


# ---------------------------------------------------------------------------
# the verdict

def _affected_classes(
    intent: ProcessedIntent,
    profiles: Mapping[TrafficKind, QoSProfile],
    cfg: ValidationConfig,
) -> list[TrafficKind]:
    targeted = cfg.targeted_classes or tuple(TrafficKind)
    return [
        kind
        for kind in targeted
        if kind in profiles and intent.intent_type in profiles[kind].metrics()
    ]


def validate(
    intent: ProcessedIntent,
    forecast: ForecastResult,
    profiles: Mapping[TrafficKind, QoSProfile],
    achieved: KpiSnapshot,
    history: Sequence[float],
    cfg: ValidationConfig,
) -> ValidationVerdict:
    """Gate an intent on predicted traffic and current QoS drift."""
    high, low = cfg.high_bps, cfg.low_bps
    t_p = forecast.predicted_bps
    if t_p > high:
        branch = Branch.HIGH_TRAFFIC
    elif t_p < low:
        branch = Branch.LOW_TRAFFIC
    else:
        branch = Branch.THRESHOLDS_RECOMPUTED
        high, low = recompute_thresholds(history, cfg)

    reports = tuple(
        compute_drift(profiles[kind], achieved.view(kind), kind)
        for kind in _affected_classes(intent, profiles, cfg)
    )
    any_drifted = any(r.any_drifted for r in reports)

    reasons: list[str] = []
    if any_drifted:
        reasons.append("qos_drift")
    if (
        branch == Branch.LOW_TRAFFIC
        and intent.intent_type == KpiKind.THROUGHPUT
        and intent.magnitude_pct > 0
    ):
        reasons.append("low_traffic_throughput_push")
    if (
        branch == Branch.HIGH_TRAFFIC
        and intent.intent_type == KpiKind.ENERGY_EFFICIENCY
        and intent.magnitude_pct > 0
        and any_drifted
    ):
        reasons.append("high_traffic_efficiency_under_drift")

    return ValidationVerdict(
        valid=not reasons,
        branch=branch,
        forecast=forecast,
        thresholds=(high, low),
        drift=reports,
        reasons=tuple(reasons),
    )
