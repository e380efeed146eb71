"""Hot per-slot numerics: SINR/rate computation and FIFO queue service.

Both kernels are plain Python functions written in loop style. When numba is
importable and the env flag ``RANORCH_NUMBA`` is not ``0``, they are compiled
with ``@njit``; otherwise the interpreted bodies run as-is, so behaviour is
identical on both paths and the flag only trades speed. ``ranorch
bench-kernels`` measures the difference.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("RANORCH_NUMBA", "1").lower() in ("0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install-time choice
    numba = None
    HAVE_NUMBA = False

NUMBA_ACTIVE = HAVE_NUMBA and not _DISABLED


def maybe_jit(func):
    """Compile with numba when active, otherwise return ``func`` unchanged."""
    if NUMBA_ACTIVE:
        return numba.njit(cache=True, fastmath=False)(func)
    return func


@maybe_jit
def compute_rates(
    base_gain_db,  # [U, B] pathloss+shadowing as gain (negative dB)
    bearing,  # [U, B] site-to-UE bearing, radians
    serving,  # [U] logical cell index, -1 = detached
    active,  # [B] bool
    tx_dbm,  # [B]
    beam_angle,  # [B] radians, meaningful where is_high
    is_high,  # [B] bool
    beam_mu,  # scalar antenna count
    beam_floor,  # scalar linear floor for the cosine rolloff
    band_of,  # [B]
    bw_hz,  # [B]
    se_cap,  # [B] spectral-efficiency ceiling, b/s/Hz
    noise_dbm_hz,  # scalar, thermal density + noise figure
    out_sinr_db,  # [U]
    out_rate_bps,  # [U]
    out_share_hz,  # [U]
):
    """Per-UE SINR and achievable rate under equal bandwidth share.

    SINR is computed on power spectral densities, so it does not depend on
    the width of the share; interference only comes from other active cells
    on the same band, through their own beam pattern.
    """
    n_ue = serving.shape[0]
    n_cell = active.shape[0]
    n_att = np.zeros(n_cell, np.int64)
    for u in range(n_ue):
        b = serving[u]
        if b >= 0 and active[b]:
            n_att[b] += 1
    noise_psd = 10.0 ** ((noise_dbm_hz - 30.0) / 10.0)
    for u in range(n_ue):
        b = serving[u]
        if b < 0 or not active[b]:
            out_sinr_db[u] = -180.0
            out_rate_bps[u] = 0.0
            out_share_hz[u] = 0.0
            continue
        share = bw_hz[b] / n_att[b]
        gain = base_gain_db[u, b]
        if is_high[b]:
            if math.isnan(beam_angle[b]):
                # Parked array: no formed lobe, only floor-level radiation.
                gain += 10.0 * math.log10(beam_floor)
            else:
                c = math.cos(bearing[u, b] - beam_angle[b])
                if c < beam_floor:
                    c = beam_floor
                gain += 10.0 * math.log10(beam_mu * c)
        sig_psd = 10.0 ** ((tx_dbm[b] + gain - 30.0) / 10.0) / bw_hz[b]
        interf_psd = 0.0
        for b2 in range(n_cell):
            if b2 == b or not active[b2] or band_of[b2] != band_of[b]:
                continue
            g2 = base_gain_db[u, b2]
            if is_high[b2]:
                if math.isnan(beam_angle[b2]):
                    g2 += 10.0 * math.log10(beam_floor)
                else:
                    c2 = math.cos(bearing[u, b2] - beam_angle[b2])
                    if c2 < beam_floor:
                        c2 = beam_floor
                    g2 += 10.0 * math.log10(beam_mu * c2)
            interf_psd += 10.0 ** ((tx_dbm[b2] + g2 - 30.0) / 10.0) / bw_hz[b2]
        sinr = sig_psd / (noise_psd + interf_psd)
        out_sinr_db[u] = 10.0 * math.log10(sinr)
        se = math.log2(1.0 + sinr)
        if se > se_cap[b]:
            se = se_cap[b]
        out_share_hz[u] = share
        out_rate_bps[u] = share * se


@maybe_jit
def serve_queues(
    rate_bps,  # [U] from compute_rates
    slot_t0,
    slot_dt,
    arr_time,  # flat arrival times for the whole tick, per-UE segments
    arr_hi,  # [U] exclusive end of each UE's segment
    arr_pos,  # [U] persistent cursor into arr_time, advanced in place
    q_time,  # [U, CAP] ring of packet arrival times
    q_head,  # [U]
    q_len,  # [U]
    q_partial,  # [U] bits of the head packet already transmitted
    packet_bits,  # [U] per-UE packet size (class constant)
    out_delivered,  # [U] bits transmitted this slot
    out_delay_sum,  # [U] sum of completed-packet delays
    out_delay_cnt,  # [U] completed packets
    out_dropped,  # [U] arrivals rejected by a full ring
    out_hol,  # [U] head-of-line age at slot end
):
    """Fluid FIFO service for one slot.

    Arrivals with a timestamp inside the slot are eligible as soon as they
    arrive, and departure instants are interpolated within the slot, so an
    uncontended packet's delay is exactly its transmission time.
    """
    n_ue = rate_bps.shape[0]
    cap = q_time.shape[1]
    t1 = slot_t0 + slot_dt
    for u in range(n_ue):
        pos = arr_pos[u]
        hi = arr_hi[u]
        while pos < hi and arr_time[pos] < t1:
            if q_len[u] >= cap:
                out_dropped[u] += 1.0
            else:
                q_time[u, (q_head[u] + q_len[u]) % cap] = arr_time[pos]
                q_len[u] += 1
            pos += 1
        arr_pos[u] = pos

        delivered = 0.0
        d_sum = 0.0
        d_cnt = 0.0
        r = rate_bps[u]
        t = slot_t0
        bits = packet_bits[u]
        if r > 0.0:
            while q_len[u] > 0:
                a = q_time[u, q_head[u] % cap]
                start = t if t > a else a
                if start >= t1:
                    break
                remaining = bits - q_partial[u]
                budget = r * (t1 - start)
                if budget >= remaining:
                    finish = start + remaining / r
                    delivered += remaining
                    d_sum += finish - a
                    d_cnt += 1.0
                    q_head[u] = (q_head[u] + 1) % cap
                    q_len[u] -= 1
                    q_partial[u] = 0.0
                    t = finish
                else:
                    delivered += budget
                    q_partial[u] += budget
                    t = t1
                    break
        out_delivered[u] = delivered
        out_delay_sum[u] = d_sum
        out_delay_cnt[u] = d_cnt
        if q_len[u] > 0:
            out_hol[u] = t1 - q_time[u, q_head[u] % cap]
        else:
            out_hol[u] = 0.0
