"""The five network automation apps and their shared control surface.

Every app exposes the same interface: ``act(sim, state)`` returning an
:class:`~ranorch.network.AppControls`. Tactical apps are called every slot,
the strategic one every tick. Apps with a learned policy checkpoint it as a
JSON-able dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np

from ranorch.config import AppConfig, KpiKind, SimConfig
from ranorch.network import AppControls, NetworkState, Simulator

BAND_COUNT = 3  # low, mid, high tiers; see config.Band


class AppId(IntEnum):
    """App identifiers; the bit (id - 1) encodes membership in a combination."""

    TRAFFIC_STEERING = 1
    CELL_SLEEPING = 2
    BEAMFORMING = 3
    POWER_ALLOCATION = 4
    HANDOVER = 5


@dataclass(frozen=True)
class AppDescriptor:
    app_id: AppId
    name: str
    capabilities: frozenset[KpiKind]
    timescale: str  # "tactical" | "strategic"
    conflicts_with: frozenset[AppId]


DESCRIPTORS: dict[AppId, AppDescriptor] = {
    AppId.TRAFFIC_STEERING: AppDescriptor(
        AppId.TRAFFIC_STEERING,
        "traffic_steering",
        frozenset({KpiKind.THROUGHPUT, KpiKind.DELAY}),
        "tactical",
        frozenset(),
    ),
    AppId.CELL_SLEEPING: AppDescriptor(
        AppId.CELL_SLEEPING,
        "cell_sleeping",
        frozenset({KpiKind.ENERGY_EFFICIENCY}),
        "strategic",
        frozenset({AppId.BEAMFORMING, AppId.POWER_ALLOCATION}),
    ),
    AppId.BEAMFORMING: AppDescriptor(
        AppId.BEAMFORMING,
        "beamforming",
        frozenset({KpiKind.THROUGHPUT}),
        "tactical",
        frozenset({AppId.CELL_SLEEPING}),
    ),
    AppId.POWER_ALLOCATION: AppDescriptor(
        AppId.POWER_ALLOCATION,
        "power_allocation",
        frozenset({KpiKind.THROUGHPUT}),
        "tactical",
        frozenset({AppId.CELL_SLEEPING}),
    ),
    AppId.HANDOVER: AppDescriptor(
        AppId.HANDOVER,
        "handover",
        frozenset({KpiKind.ENERGY_EFFICIENCY}),
        "tactical",
        frozenset(),
    ),
}

APP_BY_NAME = {d.name: d.app_id for d in DESCRIPTORS.values()}

ALL_ACTIONS = tuple(range(1, 32))  # every non-empty subset of the five apps


def combo_to_index(apps: Iterable[AppId]) -> int:
    idx = 0
    for a in apps:
        idx |= 1 << (int(a) - 1)
    if idx == 0:
        raise ValueError("an action is a non-empty app subset")
    return idx


def index_to_combo(index: int) -> frozenset[AppId]:
    if not 1 <= index <= 31:
        raise ValueError(f"action index {index} outside 1..31")
    return frozenset(a for a in AppId if index & (1 << (int(a) - 1)))


def combo_covers(index: int, metric: KpiKind) -> bool:
    """True when at least one app in the combination improves ``metric``."""
    return any(metric in DESCRIPTORS[a].capabilities for a in index_to_combo(index))


def combo_has_conflict(index: int) -> bool:
    combo = index_to_combo(index)
    return any(
        other in DESCRIPTORS[a].conflicts_with for a in combo for other in combo
    )


# ---------------------------------------------------------------------------
# shared estimation helpers


def estimate_rates(sim: Simulator) -> np.ndarray:
    """[U, B] estimated per-UE rate if attached to each cell, current radio.

    Uses the live beam/power configuration; the bandwidth share assumes the
    UE joins the cell (current attachment count, plus one when the UE is not
    already there). Sleeping cells estimate to 0.
    """
    rx_dbm = sim.rx_power_dbm()
    rx_w = 10.0 ** ((rx_dbm - 30.0) / 10.0)
    psd = rx_w / sim.cell_bw[None, :]
    psd = np.where(sim.cell_active[None, :], psd, 0.0)
    noise = 10.0 ** ((sim.noise_dbm_hz - 30.0) / 10.0)
    band_tot = np.zeros((sim.n_ues, BAND_COUNT))
    for band in range(BAND_COUNT):
        band_tot[:, band] = psd[:, sim.cell_band == band].sum(axis=1)
    interf = band_tot[:, sim.cell_band] - psd
    sinr = psd / (noise + interf)
    se = np.minimum(np.log2(1.0 + sinr), sim.cell_se_cap[None, :])
    attached = np.zeros(sim.n_cells)
    np.add.at(attached, sim.serving, 1.0)
    n_eff = attached[None, :] + (sim.serving[:, None] != np.arange(sim.n_cells)[None, :])
    n_eff = np.maximum(n_eff, 1.0)
    rates = (sim.cell_bw[None, :] / n_eff) * se
    return np.where(sim.cell_active[None, :], rates, 0.0)


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# apps


class TrafficSteeringApp:
    """Per-class band steering driven by a small Q-table.

    State is (dominant traffic class, mean-load tercile); the action picks
    the band the dominant class should prefer. Individual UEs only move when
    the estimated rate on the target band beats their current one.
    """

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.cfg = app_cfg
        self.descriptor = DESCRIPTORS[AppId.TRAFFIC_STEERING]
        self.q = np.full((4 * 3, BAND_COUNT), 1.0)  # optimistic init
        self.steps = 0
        self._rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((sim_cfg.seed, 0xA99, 1)))
        )
        self._replay: list[tuple[int, int, float, int]] = []
        self._last: Optional[tuple[int, int]] = None
        self._tick_s = sim_cfg.tick_s

    @staticmethod
    def _bucket(state: NetworkState) -> int:
        dominant = int(np.argmax(state.traffic_mix))
        active = state.cell_load[state.cell_active]
        load = float(active.mean()) if active.size else 0.0
        tercile = 0 if load < 1 / 3 else (1 if load < 2 / 3 else 2)
        return dominant * 3 + tercile

    def _epsilon(self) -> float:
        n = self.cfg.exploring_steps
        if self.steps >= n:
            return self.cfg.explore_eps
        return 1.0 - (1.0 - self.cfg.explore_eps) * self.steps / n

    def act(self, sim: Simulator, state: NetworkState) -> AppControls:
        bucket = self._bucket(state)
        if self._rng.random() < self._epsilon():
            band = int(self._rng.integers(0, BAND_COUNT))
        else:
            band = int(np.argmax(self.q[bucket]))
        self._learn(sim, state, bucket, band)

        dominant = int(np.argmax(state.traffic_mix))
        ues = np.flatnonzero(state.ue_class == dominant)
        rates = estimate_rates(sim)
        current = rates[ues, state.serving[ues]]
        band_cells = np.flatnonzero(sim.cell_band == band)
        moves = {}
        if band_cells.size:
            cand = band_cells[np.argmax(rates[np.ix_(ues, band_cells)], axis=1)]
            gain = rates[ues, cand] - current
            for u, c, g in zip(ues, cand, gain):
                if g > 0 and state.serving[u] != c:
                    moves[int(u)] = int(c)
        self.steps += 1
        return AppControls(source=self.descriptor.name, steering=moves)

    def _learn(self, sim: Simulator, state: NetworkState, bucket: int, band: int) -> None:
        dominant = int(np.argmax(state.traffic_mix))
        if self._last is not None:
            last_bucket, last_band = self._last
            ues = state.ue_class == dominant
            offered = float(sim.tick_ue_offered[ues].sum()) / self._tick_s
            delivered = float(sim.last_slot_delivered[ues].sum()) / sim.cfg.slot_s
            reward = min(delivered / offered, 1.0) if offered > 0 else 1.0
            self._replay.append((last_bucket, last_band, reward, bucket))
            if len(self._replay) > self.cfg.replay_capacity:
                self._replay.pop(0)
            if len(self._replay) >= self.cfg.batch_size:
                picks = self._rng.integers(0, len(self._replay), self.cfg.batch_size)
                a, g = self.cfg.q_alpha, self.cfg.q_gamma
                for i in picks:
                    s0, a0, r, s1 = self._replay[i]
                    target = r + g * float(self.q[s1].max())
                    self.q[s0, a0] += a * (target - self.q[s0, a0])
        self._last = (bucket, band)

    def checkpoint_state(self) -> dict:
        return {"q": self.q.tolist(), "steps": self.steps}

    def load_state(self, data: dict) -> None:
        self.q = np.array(data["q"], np.float64)
        self.steps = int(data["steps"])


class CellSleepingApp:
    """Puts idle small sites to sleep; wakes them back on sustained load.

    A site is sleep-eligible only after a full tick below the load threshold
    with no queued packets on any of its attached UEs; the macro never
    sleeps. When the mean load of active cells exceeds the wake threshold,
    the sleeping site closest to the busiest cell is released.
    """

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.cfg = app_cfg
        self.descriptor = DESCRIPTORS[AppId.CELL_SLEEPING]

    def act(self, sim: Simulator, state: NetworkState) -> AppControls:
        sleeping = set(np.flatnonzero(sim.site_sleeping).tolist())
        for site in range(1, sim.n_sites):
            if site in sleeping:
                continue
            cells = np.flatnonzero(sim.cell_site == site)
            if np.any(state.cell_load[cells] >= self.cfg.sleep_load_threshold):
                continue
            attached = np.isin(sim.serving, cells)
            if sim.q_len[attached].sum() > 0:
                continue
            sleeping.add(site)
        active_cells = np.flatnonzero(state.cell_active)
        if sleeping and active_cells.size:
            loads = state.cell_load[active_cells]
            if float(loads.mean()) > self.cfg.wake_load_threshold:
                busiest = active_cells[int(np.argmax(loads))]
                busy_xy = sim.cell_xy[busiest]
                nearest = min(
                    sleeping,
                    key=lambda s: float(np.hypot(*(sim.site_xy[s] - busy_xy))),
                )
                sleeping.discard(nearest)
        return AppControls(
            source=self.descriptor.name, sleep_sites=tuple(sorted(sleeping))
        )

    def checkpoint_state(self) -> dict:
        return {}

    def load_state(self, data: dict) -> None:
        pass


class BeamformingApp:
    """Points each high-band cell's analog beam at its served users.

    The chosen codebook entry minimizes the mean absolute circular error to
    the served UEs' bearings (for a single UE this is simply the nearest
    steering angle). An empty cell aims at the strongest-gain UE of the
    dominant traffic class so the band stays usable for steering the users
    most likely to come.
    """

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.descriptor = DESCRIPTORS[AppId.BEAMFORMING]
        self._cache_tick = -1
        self._prev_serving: Optional[np.ndarray] = None
        self._cache: dict[int, int] = {}

    def act(self, sim: Simulator, state: NetworkState) -> AppControls:
        # Bearings only change at tick boundaries; attachments any slot.
        stale = (
            state.tick != self._cache_tick
            or self._prev_serving is None
            or not np.array_equal(self._prev_serving, sim.serving)
        )
        if stale:
            beams = {}
            angles = sim.beam_angles
            dominant = int(np.argmax(state.traffic_mix))
            candidates = np.flatnonzero(state.ue_class == dominant)
            if candidates.size == 0:
                candidates = np.arange(sim.n_ues)
            for cell in np.flatnonzero(sim.cell_is_high & sim.cell_active):
                ues = np.flatnonzero(sim.serving == cell)
                if ues.size == 0:
                    best = candidates[int(np.argmax(sim.base_gain_db[candidates, cell]))]
                    ues = np.array([best])
                bearings = sim.bearing[ues, cell]
                err = np.abs(_wrap_angle(angles[None, :] - bearings[:, None]))
                beams[int(cell)] = int(np.argmin(err.mean(axis=0)))
            self._cache = beams
            self._cache_tick = state.tick
            self._prev_serving = sim.serving.copy()
        return AppControls(source=self.descriptor.name, beam_index=dict(self._cache))

    def checkpoint_state(self) -> dict:
        return {}

    def load_state(self, data: dict) -> None:
        pass


class PowerAllocationApp:
    """Greedy ascent on estimated network throughput over the power menu.

    Each act evaluates one +-1 index move per small site and applies the best
    improving one; successive slots continue the ascent, so the fixed point
    is the greedy solution. Estimates use the same link model as the
    simulator.
    """

    _RECHECK_SLOTS = 10

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.descriptor = DESCRIPTORS[AppId.POWER_ALLOCATION]
        # Backoff counts acts, not absolute slots: the app outlives any one
        # simulator, and slot clocks restart from zero on a reseed.
        self._cooldown = 0

    def act(self, sim: Simulator, state: NetworkState) -> AppControls:
        if self._cooldown > 0:
            self._cooldown -= 1
            return AppControls(source=self.descriptor.name)
        menu_len = len(sim.cfg.power.candidates_dbm)
        base = self._total_rate(sim)
        best_gain = 0.0
        best_move: Optional[tuple[int, int]] = None
        saved = sim.power_idx.copy()
        for site in range(1, sim.n_sites):
            if sim.site_sleeping[site]:
                continue
            for delta in (+1, -1):
                idx = int(saved[site]) + delta
                if not 0 <= idx < menu_len:
                    continue
                sim.power_idx[site] = idx
                sim._apply_power()
                gain = self._total_rate(sim) - base
                sim.power_idx[site] = saved[site]
                if gain > best_gain * (1 + 1e-12) and gain > 1e-6:
                    best_gain = gain
                    best_move = (site, idx)
        sim._apply_power()
        if best_move is None:
            self._cooldown = self._RECHECK_SLOTS
            return AppControls(source=self.descriptor.name)
        return AppControls(
            source=self.descriptor.name, power_index={best_move[0]: best_move[1]}
        )

    @staticmethod
    def _total_rate(sim: Simulator) -> float:
        rates = estimate_rates(sim)
        return float(rates[np.arange(sim.n_ues), sim.serving].sum())

    def checkpoint_state(self) -> dict:
        return {}

    def load_state(self, data: dict) -> None:
        pass


class HandoverApp:
    """Moves UEs whose estimated energy-per-bit strictly improves elsewhere.

    The estimate splits each site's electrical power over its attached UEs;
    only strictly negative deltas are emitted, at most a configured number
    per slot (most negative first).
    """

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.cfg = app_cfg
        self.descriptor = DESCRIPTORS[AppId.HANDOVER]
        self.last_deltas: dict[int, float] = {}

    def act(self, sim: Simulator, state: NetworkState) -> AppControls:
        rates = estimate_rates(sim)
        site_ptx_w = np.zeros(sim.n_sites)
        np.add.at(
            site_ptx_w,
            sim.cell_site,
            np.where(sim.cell_active, 10.0 ** ((sim.cell_tx_dbm - 30.0) / 10.0), 0.0),
        )
        site_power = np.where(
            ~sim.site_sleeping,
            sim.site_p0 + sim.site_delta * site_ptx_w,
            np.inf,  # sleeping sites are not handover targets
        )
        site_att = np.zeros(sim.n_sites)
        np.add.at(site_att, sim.cell_site[sim.serving], 1.0)
        cell_site_power = site_power[sim.cell_site]
        cell_site_att = site_att[sim.cell_site]
        joins = cell_site_att[None, :] + (
            sim.cell_site[sim.serving][:, None] != sim.cell_site[None, :]
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            epb = np.where(
                rates > 0, (cell_site_power[None, :] / joins) / rates, np.inf
            )
        cur = epb[np.arange(sim.n_ues), sim.serving]
        best_cell = np.argmin(epb, axis=1)
        best = epb[np.arange(sim.n_ues), best_cell]
        delta = best - cur
        order = np.argsort(delta, kind="stable")
        moves = {}
        self.last_deltas = {}
        for u in order[: self.cfg.handover_max_per_slot]:
            u = int(u)
            if delta[u] >= 0 or not np.isfinite(delta[u]):
                break
            if int(best_cell[u]) == int(sim.serving[u]):
                continue
            moves[u] = int(best_cell[u])
            self.last_deltas[u] = float(delta[u])
        return AppControls(source=self.descriptor.name, handover=moves)

    def checkpoint_state(self) -> dict:
        return {}

    def load_state(self, data: dict) -> None:
        pass


_APP_TYPES = {
    AppId.TRAFFIC_STEERING: TrafficSteeringApp,
    AppId.CELL_SLEEPING: CellSleepingApp,
    AppId.BEAMFORMING: BeamformingApp,
    AppId.POWER_ALLOCATION: PowerAllocationApp,
    AppId.HANDOVER: HandoverApp,
}


class AppManager:
    """Owns app instances and dispatches them on the two-level clock."""

    def __init__(self, sim_cfg: SimConfig, app_cfg: AppConfig):
        self.apps = {aid: _APP_TYPES[aid](sim_cfg, app_cfg) for aid in AppId}
        self.enabled: frozenset[AppId] = frozenset()

    def set_enabled(self, apps: Iterable[AppId]) -> None:
        self.enabled = frozenset(apps)

    def tactical_controls(
        self, sim: Simulator, state: NetworkState
    ) -> list[AppControls]:
        out = []
        for aid in sorted(self.enabled):
            app = self.apps[aid]
            if app.descriptor.timescale == "tactical":
                out.append(app.act(sim, state))
        return out

    def strategic_controls(
        self, sim: Simulator, state: NetworkState
    ) -> list[AppControls]:
        out = []
        for aid in sorted(self.enabled):
            app = self.apps[aid]
            if app.descriptor.timescale == "strategic":
                out.append(app.act(sim, state))
        if AppId.CELL_SLEEPING not in self.enabled and sim.site_sleeping.any():
            # sleeping only persists while its app is part of the active set
            out.append(AppControls(source="app_manager", sleep_sites=()))
        return out

    def checkpoint(self) -> dict:
        return {
            "version": 1,
            "apps": {
                self.apps[aid].descriptor.name: self.apps[aid].checkpoint_state()
                for aid in AppId
            },
        }

    def load(self, data: dict) -> None:
        for aid in AppId:
            name = self.apps[aid].descriptor.name
            if name in data.get("apps", {}):
                self.apps[aid].load_state(data["apps"][name])
