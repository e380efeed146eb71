"""Discrete-time cellular network simulator.

Topology is one macro site carrying the low-band carrier plus a ring of small
sites, each exposing a mid-band and a high-band logical cell. UEs hold one
attachment at a time; apps move them via steering/handover controls. The
clock has two levels: every slot the radio/queue kernels run, and every
``slots_per_tick`` slots the UEs drift, arrivals are prefetched and KPI
aggregates roll over.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ranorch.config import Band, KpiKind, SimConfig, TrafficKind
from ranorch.kernels import compute_rates, serve_queues
from ranorch.traffic import ArrivalStream

log = logging.getLogger("ranorch.sim")

KINDS = tuple(TrafficKind)


def link_rate(sinr_linear: float, bandwidth_share_hz: float) -> float:
    """Shannon rate of one share: share * log2(1 + sinr), bits per second."""
    if sinr_linear < 0 or bandwidth_share_hz < 0:
        raise ValueError("sinr and bandwidth share must be non-negative")
    return bandwidth_share_hz * math.log2(1.0 + sinr_linear)


def bs_energy(
    active: bool, p0_w: float, delta: float, ptx_w: float, sleep_w: float, dt_s: float
) -> float:
    """Energy of one site over ``dt_s``: load-independent base plus tx slope."""
    if active:
        return (p0_w + delta * ptx_w) * dt_s
    return sleep_w * dt_s


@dataclass(frozen=True)
class AppControls:
    """One app's requested changes for the upcoming slot.

    Only the populated fields are applied; cell/site indices refer to the
    simulator's layout. Controls are applied in the order given to
    :meth:`Simulator.step`, and entries that would attach a UE to a sleeping
    or unknown cell are rejected (counted and logged) without aborting the
    slot.
    """

    source: str = ""
    steering: Mapping[int, int] = field(default_factory=dict)
    handover: Mapping[int, int] = field(default_factory=dict)
    beam_index: Mapping[int, int] = field(default_factory=dict)
    power_index: Mapping[int, int] = field(default_factory=dict)
    sleep_sites: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class ClassKpis:
    throughput_bps: float
    mean_delay_s: float
    ee_bits_per_joule: float
    delivered_bits: float
    offered_bps: float
    n_ues: int


@dataclass(frozen=True)
class KpiSnapshot:
    """Aggregated KPIs over a window ending at ``slot`` (inclusive)."""

    slot: int
    window_slots: int
    throughput_bps: float
    mean_delay_s: float
    ee_bits_per_joule: float
    energy_j: float
    offered_bps: float
    per_class: Mapping[TrafficKind, ClassKpis]

    def view(self, kind: Optional[TrafficKind] = None) -> dict[KpiKind, float]:
        """Metric mapping used by QoS drift checks.

        Per-class throughput is reported per UE because service floors are
        per-UE expectations; the network-wide view keeps aggregate values.
        """
        if kind is None:
            return {
                KpiKind.THROUGHPUT: self.throughput_bps,
                KpiKind.DELAY: self.mean_delay_s,
                KpiKind.ENERGY_EFFICIENCY: self.ee_bits_per_joule,
            }
        c = self.per_class[kind]
        return {
            KpiKind.THROUGHPUT: c.throughput_bps / c.n_ues if c.n_ues else 0.0,
            KpiKind.DELAY: c.mean_delay_s,
            KpiKind.ENERGY_EFFICIENCY: c.ee_bits_per_joule,
        }

    def value(self, metric: KpiKind) -> float:
        return self.view()[metric]


@dataclass(frozen=True)
class NetworkState:
    """Per-slot observable state. Arrays are views; treat them as read-only."""

    slot: int
    tick: int
    ue_class: np.ndarray  # [U] int, index into KINDS
    serving: np.ndarray  # [U] logical cell
    sinr_db: np.ndarray  # [U]
    hol_delay_s: np.ndarray  # [U] head-of-line packet age
    queue_pkts: np.ndarray  # [U]
    cell_active: np.ndarray  # [B] bool
    cell_load: np.ndarray  # [B] last completed tick, in [0, 1]
    cell_tx_dbm: np.ndarray  # [B]
    cell_attached: np.ndarray  # [B]
    traffic_mix: np.ndarray  # [4] offered share per class, sums to 1

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.slot,
            self.tick,
            self.ue_class.copy(),
            self.serving.copy(),
            self.sinr_db.copy(),
            self.hol_delay_s.copy(),
            self.queue_pkts.copy(),
            self.cell_active.copy(),
            self.cell_load.copy(),
            self.cell_tx_dbm.copy(),
            self.cell_attached.copy(),
            self.traffic_mix.copy(),
        )


class Simulator:
    """Seeded, deterministic network simulator."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        ns = cfg.n_small
        self.n_sites = 1 + ns
        self.n_cells = 1 + 2 * ns
        self.n_ues = cfg.n_ues

        # Cell layout: 0 = macro low-band, 1..ns = mid-band, ns+1..2ns = high-band.
        self.cell_site = np.zeros(self.n_cells, np.int64)
        self.cell_band = np.zeros(self.n_cells, np.int64)
        for k in range(ns):
            self.cell_site[1 + k] = 1 + k
            self.cell_site[1 + ns + k] = 1 + k
            self.cell_band[1 + k] = int(Band.NR_MID)
            self.cell_band[1 + ns + k] = int(Band.NR_HIGH)
        self.cell_is_high = self.cell_band == int(Band.NR_HIGH)

        rat_by_band = {int(r.band): r for r in cfg.rats}
        self.cell_bw = np.array(
            [rat_by_band[b].bandwidth_hz for b in self.cell_band], np.float64
        )
        self.cell_se_cap = np.array(
            [rat_by_band[b].se_cap_bps_hz for b in self.cell_band], np.float64
        )
        self._pl0 = np.array(
            [rat_by_band[b].pl0_db for b in self.cell_band], np.float64
        )
        self._plexp = np.array(
            [rat_by_band[b].pathloss_exponent for b in self.cell_band], np.float64
        )
        self._max_tx = np.array(
            [rat_by_band[b].max_tx_dbm for b in self.cell_band], np.float64
        )

        self.site_xy = np.zeros((self.n_sites, 2), np.float64)
        for k in range(ns):
            ang = 2.0 * math.pi * k / ns + math.pi / ns
            self.site_xy[1 + k] = (
                cfg.small_ring_m * math.cos(ang),
                cfg.small_ring_m * math.sin(ang),
            )
        self.cell_xy = self.site_xy[self.cell_site]

        self.site_p0 = np.empty(self.n_sites, np.float64)
        self.site_delta = np.empty(self.n_sites, np.float64)
        self.site_sleep_w = np.empty(self.n_sites, np.float64)
        self.site_p0[0] = cfg.macro_energy.p0_w
        self.site_delta[0] = cfg.macro_energy.delta
        self.site_sleep_w[0] = cfg.macro_energy.sleep_w
        self.site_p0[1:] = cfg.small_energy.p0_w
        self.site_delta[1:] = cfg.small_energy.delta
        self.site_sleep_w[1:] = cfg.small_energy.sleep_w

        self.noise_dbm_hz = cfg.thermal_dbm_hz + cfg.noise_figure_db
        self.beam_angles = np.array(cfg.beams.angles(), np.float64)
        self._beam_mu = float(cfg.beams.num_antennas)
        self._beam_floor = float(cfg.beams.off_lobe_floor)

        self.ue_class = np.concatenate(
            [np.full(t.n_ues, i, np.int64) for i, t in enumerate(cfg.traffic)]
        )
        self.packet_bits = np.array(
            [cfg.traffic[c].packet_bits for c in self.ue_class], np.float64
        )

        self._geom_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.seed, 0x9E0)))
        )
        self._streams = [
            ArrivalStream(cfg.traffic[self.ue_class[u]], cfg.seed, u)
            for u in range(self.n_ues)
        ]

        self.rejected_controls = 0
        self.reset()

    # -- geometry ----------------------------------------------------------

    def _draw_positions(self, n: int) -> np.ndarray:
        r = self.cfg.macro_radius_m * np.sqrt(self._geom_rng.uniform(0, 1, n))
        a = self._geom_rng.uniform(-math.pi, math.pi, n)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)

    def _rebuild_gains(self) -> None:
        d = np.hypot(
            self.ue_xy[:, 0:1] - self.cell_xy[None, :, 0],
            self.ue_xy[:, 1:2] - self.cell_xy[None, :, 1],
        )
        np.maximum(d, 1.0, out=d)
        pl = self._pl0[None, :] + 10.0 * self._plexp[None, :] * np.log10(d)
        self.base_gain_db = -(pl + self.shadow_db)
        self.bearing = np.arctan2(
            self.ue_xy[:, 1:2] - self.cell_xy[None, :, 1],
            self.ue_xy[:, 0:1] - self.cell_xy[None, :, 0],
        )

    def _drift(self) -> None:
        step = self.cfg.ue_speed_mps * self.cfg.tick_s
        if step <= 0:
            return
        delta = self.waypoint - self.ue_xy
        dist = np.hypot(delta[:, 0], delta[:, 1])
        arrived = dist <= step
        move = np.where(dist[:, None] > 0, delta / np.maximum(dist[:, None], 1e-12), 0)
        self.ue_xy = np.where(
            arrived[:, None], self.waypoint, self.ue_xy + move * step
        )
        n_new = int(arrived.sum())
        if n_new:
            self.waypoint[arrived] = self._draw_positions(n_new)

    # -- lifecycle ---------------------------------------------------------

    def reset(self) -> NetworkState:
        cfg = self.cfg
        self.slot = 0
        self.tick = 0
        self.ue_xy = self._draw_positions(self.n_ues)
        self.waypoint = self._draw_positions(self.n_ues)
        self.shadow_db = self._geom_rng.normal(
            0.0, cfg.shadowing_sigma_db, (self.n_ues, self.n_cells)
        )
        self._rebuild_gains()

        self.cell_active = np.ones(self.n_cells, np.bool_)
        self.site_sleeping = np.zeros(self.n_sites, np.bool_)
        self.power_idx = np.full(self.n_sites, cfg.power.default_index, np.int64)
        # -1 = parked: the array radiates at the codebook floor until an app
        # points it, so an untouched high cell is no steering target.
        self.beam_idx = np.full(self.n_cells, -1, np.int64)
        self._apply_power()
        self.serving = np.full(self.n_ues, -1, np.int64)
        self._reattach(np.arange(self.n_ues))

        cap = cfg.queue_capacity_packets
        self.q_time = np.zeros((self.n_ues, cap), np.float64)
        self.q_head = np.zeros(self.n_ues, np.int64)
        self.q_len = np.zeros(self.n_ues, np.int64)
        self.q_partial = np.zeros(self.n_ues, np.float64)

        self._sinr = np.zeros(self.n_ues, np.float64)
        self._rate = np.zeros(self.n_ues, np.float64)
        self._share = np.zeros(self.n_ues, np.float64)
        self._delivered = np.zeros(self.n_ues, np.float64)
        self._delay_sum = np.zeros(self.n_ues, np.float64)
        self._delay_cnt = np.zeros(self.n_ues, np.float64)
        self._dropped = np.zeros(self.n_ues, np.float64)
        self._hol = np.zeros(self.n_ues, np.float64)

        self.cell_load = np.zeros(self.n_cells, np.float64)
        self.traffic_mix = np.full(4, 0.25, np.float64)
        self.last_tick_snapshot: Optional[KpiSnapshot] = None
        self.last_tick_ue_delivered = np.zeros(self.n_ues, np.float64)
        self.last_tick_ue_delay_sum = np.zeros(self.n_ues, np.float64)
        self.last_tick_ue_delay_cnt = np.zeros(self.n_ues, np.float64)
        self.last_tick_ue_offered = np.zeros(self.n_ues, np.float64)
        self.total_arrived_bits = 0.0
        self.total_delivered_bits = 0.0
        self._zero_tick_accumulators()
        self._prefetch_arrivals()
        return self._make_state()

    def _zero_tick_accumulators(self) -> None:
        n = self.n_ues
        self.tick_ue_delivered = np.zeros(n, np.float64)
        self.tick_ue_delay_sum = np.zeros(n, np.float64)
        self.tick_ue_delay_cnt = np.zeros(n, np.float64)
        self.tick_ue_offered = np.zeros(n, np.float64)
        self.tick_cell_served = np.zeros(self.n_cells, np.float64)
        self.tick_cell_capacity = np.zeros(self.n_cells, np.float64)
        self.tick_energy_j = 0.0

    def _prefetch_arrivals(self) -> None:
        t_end = (self.tick + 1) * self.cfg.tick_s
        segments = [s.take_until(t_end) for s in self._streams]
        counts = np.array([len(s) for s in segments], np.int64)
        self.arr_time = (
            np.concatenate(segments) if counts.sum() else np.empty(0, np.float64)
        )
        hi = np.cumsum(counts)
        self.arr_hi = hi
        self.arr_pos = hi - counts
        offered = counts * self.packet_bits
        self.tick_ue_offered += offered
        self.total_arrived_bits += float(offered.sum())

    @property
    def last_slot_delivered(self) -> np.ndarray:
        """Per-UE bits transmitted in the most recent slot."""
        return self._delivered

    def state(self) -> NetworkState:
        """Current observable state without advancing the clock."""
        return self._make_state()

    # -- controls ----------------------------------------------------------

    def _apply_power(self) -> None:
        menu = np.array(self.cfg.power.candidates_dbm, np.float64)
        tx = np.empty(self.n_cells, np.float64)
        tx[0] = self._max_tx[0]  # macro transmits at its fixed RAT power
        for c in range(1, self.n_cells):
            tx[c] = min(menu[self.power_idx[self.cell_site[c]]], self._max_tx[c])
        self.cell_tx_dbm = tx

    def beam_angle_of(self) -> np.ndarray:
        """[B] pointed beam angle per cell, NaN where the array is parked."""
        angle = self.beam_angles[np.maximum(self.beam_idx, 0)]
        return np.where(self.beam_idx >= 0, angle, np.nan)

    def rx_power_dbm(self) -> np.ndarray:
        """[U, B] received power with current beams/powers; decision aid."""
        g = self.base_gain_db + self.cell_tx_dbm[None, :]
        if self.cell_is_high.any():
            pointed = self.beam_idx >= 0
            delta = self.bearing - self.beam_angles[np.maximum(self.beam_idx, 0)][None, :]
            c = np.maximum(np.cos(delta), self._beam_floor)
            beam = np.where(
                pointed[None, :],
                10.0 * np.log10(self._beam_mu * c),
                10.0 * np.log10(self._beam_floor),
            )
            g = g + np.where(self.cell_is_high[None, :], beam, 0.0)
        return g

    def _reattach(self, ues: np.ndarray) -> None:
        """Attach the given UEs to their strongest active cell."""
        if len(ues) == 0:
            return
        rx = self.rx_power_dbm()[ues]
        rx[:, ~self.cell_active] = -np.inf
        self.serving[ues] = np.argmax(rx, axis=1)

    def _reject(self, source: str, what: str) -> None:
        self.rejected_controls += 1
        log.debug("rejected control from %s: %s", source, what)

    def _apply_controls(self, controls: Iterable[AppControls]) -> None:
        for ctl in controls:
            for ue, cell in list(ctl.steering.items()) + list(ctl.handover.items()):
                if not 0 <= cell < self.n_cells or not 0 <= ue < self.n_ues:
                    self._reject(ctl.source, f"bad attachment {ue}->{cell}")
                elif not self.cell_active[cell]:
                    self._reject(ctl.source, f"attachment to sleeping cell {cell}")
                else:
                    self.serving[ue] = cell
            for cell, idx in ctl.beam_index.items():
                if (
                    not 0 <= cell < self.n_cells
                    or not self.cell_is_high[cell]
                    or not 0 <= idx < len(self.beam_angles)
                ):
                    self._reject(ctl.source, f"bad beam {cell}:{idx}")
                else:
                    self.beam_idx[cell] = idx
            power_changed = False
            for site, idx in ctl.power_index.items():
                if (
                    not 1 <= site < self.n_sites
                    or not 0 <= idx < len(self.cfg.power.candidates_dbm)
                ):
                    self._reject(ctl.source, f"bad power {site}:{idx}")
                else:
                    self.power_idx[site] = idx
                    power_changed = True
            if power_changed:
                self._apply_power()
            if ctl.sleep_sites is not None:
                self._apply_sleep(ctl.source, ctl.sleep_sites)

    def _apply_sleep(self, source: str, sleep_sites: Sequence[int]) -> None:
        wanted = np.zeros(self.n_sites, np.bool_)
        for site in sleep_sites:
            if not 1 <= site < self.n_sites:
                self._reject(source, f"cannot sleep site {site}")
                continue
            cells = np.flatnonzero(self.cell_site == site)
            attached = np.isin(self.serving, cells)
            if self.q_len[attached].sum() > 0:
                self._reject(source, f"site {site} has queued traffic")
                continue
            wanted[site] = True
        self.site_sleeping = wanted
        self.cell_active = ~self.site_sleeping[self.cell_site]
        stranded = np.flatnonzero(~self.cell_active[self.serving])
        self._reattach(stranded)

    # -- stepping ----------------------------------------------------------

    def step(
        self, controls: Optional[Sequence[AppControls]] = None
    ) -> tuple[NetworkState, KpiSnapshot]:
        """Advance one slot; returns the post-slot state and slot KPIs."""
        cfg = self.cfg
        if controls:
            self._apply_controls(controls)

        compute_rates(
            self.base_gain_db,
            self.bearing,
            self.serving,
            self.cell_active,
            self.cell_tx_dbm,
            self.beam_angle_of(),
            self.cell_is_high,
            self._beam_mu,
            self._beam_floor,
            self.cell_band,
            self.cell_bw,
            self.cell_se_cap,
            self.noise_dbm_hz,
            self._sinr,
            self._rate,
            self._share,
        )
        t0 = self.slot * cfg.slot_s
        serve_queues(
            self._rate,
            t0,
            cfg.slot_s,
            self.arr_time,
            self.arr_hi,
            self.arr_pos,
            self.q_time,
            self.q_head,
            self.q_len,
            self.q_partial,
            self.packet_bits,
            self._delivered,
            self._delay_sum,
            self._delay_cnt,
            self._dropped,
            self._hol,
        )
        site_active = ~self.site_sleeping
        site_ptx_w = np.zeros(self.n_sites, np.float64)
        np.add.at(
            site_ptx_w,
            self.cell_site,
            np.where(self.cell_active, 10.0 ** ((self.cell_tx_dbm - 30.0) / 10.0), 0.0),
        )
        slot_energy = np.where(
            site_active,
            (self.site_p0 + self.site_delta * site_ptx_w) * cfg.slot_s,
            self.site_sleep_w * cfg.slot_s,
        )
        energy_j = float(slot_energy.sum())

        served = np.zeros(self.n_cells, np.float64)
        np.add.at(served, self.serving, self._delivered)
        capacity = np.zeros(self.n_cells, np.float64)
        np.add.at(capacity, self.serving, self._rate * cfg.slot_s)

        self.tick_ue_delivered += self._delivered
        self.tick_ue_delay_sum += self._delay_sum
        self.tick_ue_delay_cnt += self._delay_cnt
        self.tick_cell_served += served
        self.tick_cell_capacity += capacity
        self.tick_energy_j += energy_j
        self.total_delivered_bits += float(self._delivered.sum())

        # Offered volume is only known per tick (arrivals are prefetched), so
        # slot snapshots report offered_bps as 0; tick snapshots carry it.
        snapshot = self._make_snapshot(
            self.slot, 1, self._delivered, self._delay_sum, self._delay_cnt,
            energy_j, None,
        )

        self.slot += 1
        if self.slot % cfg.slots_per_tick == 0:
            self._finish_tick()
        return self._make_state(), snapshot

    def _finish_tick(self) -> None:
        cfg = self.cfg
        with np.errstate(divide="ignore", invalid="ignore"):
            load = np.where(
                self.tick_cell_capacity > 0,
                self.tick_cell_served / self.tick_cell_capacity,
                0.0,
            )
        self.cell_load = np.clip(load, 0.0, 1.0)
        offered = np.zeros(4, np.float64)
        np.add.at(offered, self.ue_class, self.tick_ue_offered)
        total = offered.sum()
        self.traffic_mix = offered / total if total > 0 else np.full(4, 0.25)
        self.last_tick_snapshot = self._make_snapshot(
            self.slot - 1,
            cfg.slots_per_tick,
            self.tick_ue_delivered,
            self.tick_ue_delay_sum,
            self.tick_ue_delay_cnt,
            self.tick_energy_j,
            self.tick_ue_offered,
        )
        self.last_tick_ue_delivered = self.tick_ue_delivered.copy()
        self.last_tick_ue_delay_sum = self.tick_ue_delay_sum.copy()
        self.last_tick_ue_delay_cnt = self.tick_ue_delay_cnt.copy()
        self.last_tick_ue_offered = self.tick_ue_offered.copy()
        self.tick += 1
        self._zero_tick_accumulators()
        self._drift()
        self._rebuild_gains()
        self._prefetch_arrivals()

    def _make_snapshot(
        self,
        slot: int,
        window: int,
        delivered: np.ndarray,
        delay_sum: np.ndarray,
        delay_cnt: np.ndarray,
        energy_j: float,
        offered: Optional[np.ndarray],
    ) -> KpiSnapshot:
        dt = window * self.cfg.slot_s
        per_class = {}
        cls_delivered = np.zeros(4, np.float64)
        cls_dsum = np.zeros(4, np.float64)
        cls_dcnt = np.zeros(4, np.float64)
        cls_offered = np.zeros(4, np.float64)
        np.add.at(cls_delivered, self.ue_class, delivered)
        np.add.at(cls_dsum, self.ue_class, delay_sum)
        np.add.at(cls_dcnt, self.ue_class, delay_cnt)
        if offered is not None:
            np.add.at(cls_offered, self.ue_class, offered)
        cls_ues = np.bincount(self.ue_class, minlength=4)
        for i, kind in enumerate(KINDS):
            per_class[kind] = ClassKpis(
                throughput_bps=cls_delivered[i] / dt,
                mean_delay_s=(
                    cls_dsum[i] / cls_dcnt[i] if cls_dcnt[i] > 0 else 0.0
                ),
                ee_bits_per_joule=(
                    cls_delivered[i] / energy_j if energy_j > 0 else 0.0
                ),
                delivered_bits=float(cls_delivered[i]),
                offered_bps=float(cls_offered[i]) / dt,
                n_ues=int(cls_ues[i]),
            )
        total_delivered = float(delivered.sum())
        total_cnt = float(delay_cnt.sum())
        return KpiSnapshot(
            slot=slot,
            window_slots=window,
            throughput_bps=total_delivered / dt,
            mean_delay_s=float(delay_sum.sum()) / total_cnt if total_cnt else 0.0,
            ee_bits_per_joule=total_delivered / energy_j if energy_j > 0 else 0.0,
            energy_j=energy_j,
            offered_bps=float(cls_offered.sum()) / dt if offered is not None else 0.0,
            per_class=per_class,
        )

    def _make_state(self) -> NetworkState:
        attached = np.zeros(self.n_cells, np.float64)
        np.add.at(attached, self.serving, 1.0)
        return NetworkState(
            slot=self.slot,
            tick=self.tick,
            ue_class=self.ue_class,
            serving=self.serving,
            sinr_db=self._sinr,
            hol_delay_s=self._hol,
            queue_pkts=self.q_len,
            cell_active=self.cell_active,
            cell_load=self.cell_load,
            cell_tx_dbm=self.cell_tx_dbm,
            cell_attached=attached,
            traffic_mix=self.traffic_mix,
        )
