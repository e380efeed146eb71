"""Hierarchical orchestration: goals, action relevance, tabular Q-learning.

A validated intent becomes a :class:`Goal`. While pursuing it, the
controller picks one of 31 app combinations each strategic tick;
combinations are pre-filtered by a logistic relevance scorer over
hand-declared features, and epsilon-greedy tabular Q-learning chooses within
the filtered set. Intrinsic reward is goal progress minus a QoS violation
penalty; the undiscounted episode sum is the extrinsic return.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ranorch.apps import (
    ALL_ACTIONS,
    DESCRIPTORS,
    combo_covers,
    combo_has_conflict,
    index_to_combo,
)
from ranorch.config import AttentionConfig, KpiKind, OrchestratorConfig
from ranorch.intent import ProcessedIntent
from ranorch.network import NetworkState

log = logging.getLogger("ranorch.hrl")

N_ACTIONS = len(ALL_ACTIONS)
N_STATE_BUCKETS = 12  # dominant class (4) x mean-load tercile (3)
METRICS = tuple(KpiKind)


class GoalError(Exception):
    pass


class DegenerateBaseline(GoalError):
    """The KPI an intent wants to scale is currently zero."""


class DegenerateGoal(GoalError):
    """Target equals baseline; progress would divide by zero."""


class TrainingDegenerate(ValueError):
    """Scorer training was handed nothing to learn from."""


class ScorerUnavailable(RuntimeError):
    """No usable relevance weights; callers fall back to the full action set."""


@dataclass(frozen=True)
class Goal:
    metric: KpiKind
    magnitude_pct: float  # signed, negative for reductions
    baseline_value: float
    target_value: float
    bucket_pct: float
    deadline_ticks: int

    def reached(self, achieved: float, tolerance: float) -> bool:
        """Within tolerance of the target, or past it in the improving direction."""
        band = tolerance * abs(self.target_value)
        if self.target_value >= self.baseline_value:
            return achieved >= self.target_value - band
        return achieved <= self.target_value + band


def snap_to_bucket(magnitude_pct: float, buckets: Sequence[float]) -> float:
    """Nearest bucket by absolute magnitude; ties round down."""
    mag = abs(magnitude_pct)
    return min(buckets, key=lambda b: (abs(b - mag), b))


def intent_to_goal(
    intent: ProcessedIntent, current_value: float, cfg: OrchestratorConfig
) -> Goal:
    if current_value <= 0:
        raise DegenerateBaseline(
            f"current {intent.intent_type.value} is {current_value}; cannot scale it"
        )
    target = current_value * (1.0 + intent.magnitude_pct / 100.0)
    if target == current_value:
        raise DegenerateGoal("target equals baseline")
    return Goal(
        metric=intent.intent_type,
        magnitude_pct=intent.magnitude_pct,
        baseline_value=current_value,
        target_value=target,
        bucket_pct=snap_to_bucket(intent.magnitude_pct, cfg.goal_buckets),
        deadline_ticks=cfg.deadline_ticks,
    )


def goal_bucket_index(goal: Goal, cfg: OrchestratorConfig) -> int:
    return METRICS.index(goal.metric) * len(cfg.goal_buckets) + list(
        cfg.goal_buckets
    ).index(goal.bucket_pct)


def n_goal_buckets(cfg: OrchestratorConfig) -> int:
    return len(METRICS) * len(cfg.goal_buckets)


def state_bucket(state: NetworkState) -> int:
    dominant = int(np.argmax(state.traffic_mix))
    active = state.cell_load[state.cell_active]
    load = float(active.mean()) if active.size else 0.0
    tercile = 0 if load < 1 / 3 else (1 if load < 2 / 3 else 2)
    return dominant * 3 + tercile


# ---------------------------------------------------------------------------
# relevance scoring

# How strongly each traffic class's experience couples to each KPI.
_MIX_AFFINITY = {
    KpiKind.THROUGHPUT: np.array([1.0, 0.7, 0.2, 0.3]),
    KpiKind.DELAY: np.array([0.3, 0.8, 0.9, 1.0]),
    KpiKind.ENERGY_EFFICIENCY: np.array([0.5, 0.5, 0.5, 0.5]),
}

N_FEATURES = 6


def action_features(
    traffic_mix: np.ndarray, mean_load: float, metric: KpiKind, action_index: int
) -> np.ndarray:
    """Feature vector for one (state, intent, action) triple.

    Order: capability coverage fraction, binary coverage, conflict flag,
    traffic-mix affinity to the intent metric, mean active-cell load,
    combination size fraction.
    """
    combo = index_to_combo(action_index)
    covering = sum(1 for a in combo if metric in DESCRIPTORS[a].capabilities)
    return np.array(
        [
            covering / len(combo),
            1.0 if covering else 0.0,
            1.0 if combo_has_conflict(action_index) else 0.0,
            float(_MIX_AFFINITY[metric] @ traffic_mix),
            mean_load,
            len(combo) / 5.0,
        ]
    )


def attention_scores(
    traffic_mix: np.ndarray,
    mean_load: float,
    metric: KpiKind,
    cfg: AttentionConfig,
) -> np.ndarray:
    """Relevance score in (0, 1) for every action index 1..31."""
    w = np.asarray(cfg.weights, dtype=np.float64)
    if w.shape != (N_FEATURES,):
        raise ScorerUnavailable(
            f"scorer expects {N_FEATURES} weights, config has {w.shape[0]}"
        )
    feats = np.stack(
        [action_features(traffic_mix, mean_load, metric, a) for a in ALL_ACTIONS]
    )
    z = feats @ w + cfg.bias
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class FilteredActionSet:
    """Actions that survived the relevance threshold (or the fallback)."""

    metric: KpiKind
    actions: tuple[int, ...]
    scores: tuple[float, ...]  # aligned with ``actions``
    threshold: float
    fallback_used: bool

    def __post_init__(self):
        if not self.actions:
            raise ValueError("filtered action set must not be empty")


def filter_actions(
    scores: np.ndarray, metric: KpiKind, cfg: AttentionConfig
) -> FilteredActionSet:
    """Keep actions scoring above the threshold; never return empty.

    If nothing clears the threshold the top ``fallback_top_k`` actions by
    score are kept (lowest index wins ties) and the set is flagged.
    """
    keep = [a for a, s in zip(ALL_ACTIONS, scores) if s > cfg.threshold]
    fallback = not keep
    if fallback:
        order = np.argsort(-scores, kind="stable")[: cfg.fallback_top_k]
        keep = sorted(int(ALL_ACTIONS[i]) for i in order)
    return FilteredActionSet(
        metric=metric,
        actions=tuple(keep),
        scores=tuple(float(scores[a - 1]) for a in keep),
        threshold=cfg.threshold,
        fallback_used=fallback,
    )


def full_action_set(metric: KpiKind) -> FilteredActionSet:
    """The unfiltered action space (attention disabled)."""
    return FilteredActionSet(
        metric=metric,
        actions=ALL_ACTIONS,
        scores=tuple(1.0 for _ in ALL_ACTIONS),
        threshold=0.0,
        fallback_used=False,
    )


# ---------------------------------------------------------------------------
# scorer training

def train_scorer(
    samples: Sequence[tuple[np.ndarray, int]],
    base: AttentionConfig,
    lr: float = 0.5,
    iters: int = 400,
    l2: float = 1e-4,
) -> AttentionConfig:
    """Fit the logistic scorer by full-batch gradient descent on cross-entropy.

    Deterministic: zero init, fixed iteration count, no shuffling. Returns a
    config carrying the fitted weights/bias with the base thresholds.
    """
    if not samples:
        raise TrainingDegenerate("no training samples")
    x = np.stack([f for f, _ in samples])
    y = np.array([float(label) for _, label in samples])
    if y.min() == y.max():
        raise TrainingDegenerate("all samples share one label; nothing to separate")
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return AttentionConfig(
        weights=tuple(float(v) for v in w),
        bias=float(b),
        threshold=base.threshold,
        fallback_top_k=base.fallback_top_k,
    )


def capability_labels(
    rng: np.random.Generator, n_states: int = 40
) -> list[tuple[np.ndarray, int]]:
    """Synthesize a labeled set from the capability/conflict oracle.

    A triple is labeled fulfilled when the combination covers the intent
    metric and carries no conflicting pair.
    """
    samples = []
    for _ in range(n_states):
        mix = rng.dirichlet(np.ones(4))
        load = float(rng.uniform(0, 1))
        for metric in METRICS:
            for action in ALL_ACTIONS:
                label = int(
                    combo_covers(action, metric) and not combo_has_conflict(action)
                )
                samples.append((action_features(mix, load, metric, action), label))
    return samples


# ---------------------------------------------------------------------------
# rewards

@dataclass(frozen=True)
class RewardBreakdown:
    progress: float  # clamped normalized movement toward the target
    violations: int  # UEs with at least one violated QoS requirement
    penalty_weight: float
    intrinsic: float


def compute_rewards(
    goal: Goal, achieved: float, violations: int, penalty_weight: float
) -> RewardBreakdown:
    span = goal.target_value - goal.baseline_value
    progress = (achieved - goal.baseline_value) / span
    progress = max(-1.0, min(1.0, progress))
    return RewardBreakdown(
        progress=progress,
        violations=violations,
        penalty_weight=penalty_weight,
        intrinsic=progress - penalty_weight * violations,
    )


# ---------------------------------------------------------------------------
# Q tables

class QTable:
    """Controller and meta-controller tables with the shared learning rate."""

    def __init__(self, cfg: OrchestratorConfig):
        self.alpha = cfg.q_alpha
        self.gamma = cfg.q_gamma
        self.q = np.zeros((N_STATE_BUCKETS, n_goal_buckets(cfg), N_ACTIONS))
        self.meta_q = np.zeros((N_STATE_BUCKETS, n_goal_buckets(cfg)))
        self.visits = np.zeros(self.q.shape, np.int64)
        self.decisions = 0

    def greedy_action(self, s: int, g: int, actions: Sequence[int]) -> int:
        vals = self.q[s, g, [a - 1 for a in actions]]
        best = float(vals.max())
        # ties go to the lowest action index, whatever order the set came in
        return min(int(a) for a, v in zip(actions, vals) if v == best)

    def update(
        self,
        s: int,
        g: int,
        action: int,
        reward: float,
        s_next: int,
        next_actions: Optional[Sequence[int]],
    ) -> None:
        """One-step Q update; ``next_actions=None`` marks a terminal step."""
        if next_actions is None:
            target = reward
        else:
            nxt = self.q[s_next, g, [a - 1 for a in next_actions]]
            target = reward + self.gamma * float(nxt.max())
        self.q[s, g, action - 1] += self.alpha * (target - self.q[s, g, action - 1])
        self.visits[s, g, action - 1] += 1

    def meta_update(self, s: int, g: int, extrinsic: float) -> None:
        self.meta_q[s, g] += self.alpha * (extrinsic - self.meta_q[s, g])

    def checkpoint(self) -> dict:
        return {
            "version": 1,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "decisions": self.decisions,
            "q": self.q.tolist(),
            "meta_q": self.meta_q.tolist(),
            "visits": self.visits.tolist(),
        }

    def load(self, data: dict) -> None:
        self.alpha = float(data["alpha"])
        self.gamma = float(data["gamma"])
        self.decisions = int(data["decisions"])
        self.q = np.array(data["q"], np.float64)
        self.meta_q = np.array(data["meta_q"], np.float64)
        if "visits" in data:
            self.visits = np.array(data["visits"], np.int64)
        else:
            self.visits = np.zeros(self.q.shape, np.int64)


def epsilon2(cfg: OrchestratorConfig, decisions: int) -> float:
    """Annealed exploration rate of the controller; monotone non-increasing.

    Held at the start value for the first ``eps_hold_decisions`` so every
    action accumulates unbiased visits before greedy selection carries any
    weight, then annealed linearly to the floor by ``eps_anneal_decisions``.
    """
    if decisions < cfg.eps_hold_decisions:
        return cfg.eps_start
    span = cfg.eps_anneal_decisions - cfg.eps_hold_decisions
    if span <= 0:
        return cfg.eps_floor
    frac = min((decisions - cfg.eps_hold_decisions) / span, 1.0)
    return cfg.eps_start + (cfg.eps_floor - cfg.eps_start) * frac


# ---------------------------------------------------------------------------
# option lifecycle

@dataclass
class OptionDescriptor:
    goal: Goal
    start_tick: int
    start_bucket: int
    extrinsic: float = 0.0
    ticks_elapsed: int = 0

    def deadline_passed(self) -> bool:
        return self.ticks_elapsed >= self.goal.deadline_ticks


class Orchestrator:
    """Per-run controller state machine, stepped once per strategic tick."""

    def __init__(
        self,
        cfg: OrchestratorConfig,
        seed: int,
        attention_enabled: bool = True,
        forced_actions: Optional[tuple[int, ...]] = None,
    ):
        self.cfg = cfg
        self.attention_enabled = attention_enabled
        self.forced_actions = forced_actions
        self.table = QTable(cfg)
        self.option: Optional[OptionDescriptor] = None
        self.current_action: Optional[int] = None
        self.last_filtered: Optional[FilteredActionSet] = None
        self._pending: Optional[tuple[int, int, int]] = None
        self._rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, 0x08C)))
        )

    # -- helpers

    def filtered_for(self, state: NetworkState, metric: KpiKind) -> FilteredActionSet:
        if self.forced_actions is not None:
            return FilteredActionSet(
                metric=metric,
                actions=self.forced_actions,
                scores=tuple(1.0 for _ in self.forced_actions),
                threshold=0.0,
                fallback_used=False,
            )
        if not self.attention_enabled:
            return full_action_set(metric)
        active = state.cell_load[state.cell_active]
        load = float(active.mean()) if active.size else 0.0
        try:
            scores = attention_scores(
                state.traffic_mix, load, metric, self.cfg.attention
            )
        except ScorerUnavailable as exc:
            log.warning("relevance filter disabled: %s", exc)
            return full_action_set(metric)
        return filter_actions(scores, metric, self.cfg.attention)

    # -- lifecycle

    def start_option(self, goal: Goal, state: NetworkState) -> OptionDescriptor:
        if self.option is not None:
            raise RuntimeError("an option is already active")
        self.option = OptionDescriptor(goal, state.tick, state_bucket(state))
        self.current_action = None
        self._pending = None
        return self.option

    def select_action(self, state: NetworkState) -> tuple[int, FilteredActionSet, float]:
        """Pick the app combination for the coming tick."""
        assert self.option is not None
        goal = self.option.goal
        s = state_bucket(state)
        g = goal_bucket_index(goal, self.cfg)
        filtered = self.filtered_for(state, goal.metric)
        eps = epsilon2(self.cfg, self.table.decisions)
        if self._rng.random() < eps:
            action = int(filtered.actions[self._rng.integers(len(filtered.actions))])
        else:
            action = self.table.greedy_action(s, g, filtered.actions)
        self.table.decisions += 1
        self.current_action = action
        self.last_filtered = filtered
        self._pending = (s, g, action)
        return action, filtered, eps

    def observe(
        self, breakdown: RewardBreakdown, next_state: NetworkState, achieved: float
    ) -> Optional[OptionDescriptor]:
        """Digest one tick's reward; returns the option if it terminated."""
        assert self.option is not None and self._pending is not None
        option = self.option
        option.extrinsic += breakdown.intrinsic
        option.ticks_elapsed += 1
        s, g, action = self._pending
        terminal = (
            option.goal.reached(achieved, self.cfg.reach_tolerance)
            or option.deadline_passed()
        )
        if terminal:
            self.table.update(s, g, action, breakdown.intrinsic, 0, None)
            self.table.meta_update(option.start_bucket, g, option.extrinsic)
            self.option = None
            self.current_action = None
            self._pending = None
            return option
        nxt = self.filtered_for(next_state, option.goal.metric)
        self.table.update(
            s, g, action, breakdown.intrinsic, state_bucket(next_state), nxt.actions
        )
        self._pending = None
        return None


# ---------------------------------------------------------------------------
# checkpoint files

def save_scorer(cfg: AttentionConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "version": 1,
                "weights": list(cfg.weights),
                "bias": cfg.bias,
                "threshold": cfg.threshold,
                "fallback_top_k": cfg.fallback_top_k,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )


def load_scorer(path: str | Path) -> AttentionConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != 1:
        raise ValueError(f"unsupported scorer checkpoint version {data.get('version')}")
    return AttentionConfig(
        weights=tuple(data["weights"]),
        bias=float(data["bias"]),
        threshold=float(data["threshold"]),
        fallback_top_k=int(data["fallback_top_k"]),
    )


def save_qtable(table: QTable, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(table.checkpoint()) + "\n", encoding="utf-8"
    )


def load_qtable(path: str | Path, cfg: OrchestratorConfig) -> QTable:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != 1:
        raise ValueError(f"unsupported q-table checkpoint version {data.get('version')}")
    table = QTable(cfg)
    table.load(data)
    return table
