"""Packet arrival processes for the four traffic classes.

Gap distributions
-----------------
pareto   heavy-tailed gaps with shape a > 1; the scale is solved from the
         configured mean, x_m = mean * (a - 1) / a, so the long-run rate is
         exact regardless of shape.
uniform  gaps on [0.5 * mean, 1.5 * mean].
poisson  a Poisson process, i.e. exponential gaps.

All draws go through a dedicated `numpy` Generator so streams are
reproducible and independent per (seed, purpose).
"""

from __future__ import annotations

import numpy as np

from ranorch.config import TrafficClass


def pareto_scale(mean: float, shape: float) -> float:
    """Scale parameter giving a Pareto(shape) distribution the target mean."""
    if shape <= 1.0:
        raise ValueError("pareto shape must be > 1 for a finite mean")
    return mean * (shape - 1.0) / shape


def draw_gaps(cls: TrafficClass, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` inter-arrival gaps in seconds; every gap is > 0."""
    if n < 0:
        raise ValueError("n must be >= 0")
    m = cls.mean_interarrival_s
    if cls.process == "pareto":
        xm = pareto_scale(m, cls.pareto_shape)
        return xm * (1.0 + rng.pareto(cls.pareto_shape, size=n))
    if cls.process == "uniform":
        return rng.uniform(0.5 * m, 1.5 * m, size=n)
    if cls.process == "poisson":
        return rng.exponential(m, size=n)
    raise ValueError(f"unknown arrival process {cls.process!r}")


def stream_rng(seed: int, ue_index: int) -> np.random.Generator:
    """Per-UE arrival stream, independent of every other consumer of the seed."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, 0xA11, ue_index)))
    )


def generate_arrivals(
    cls: TrafficClass, horizon_s: float, rng: np.random.Generator
) -> np.ndarray:
    """Every arrival time in [0, horizon_s), strictly increasing."""
    if horizon_s <= 0:
        raise ValueError("horizon must be > 0")
    times: list[np.ndarray] = []
    clock = 0.0
    while clock < horizon_s:
        gaps = draw_gaps(cls, rng, 1024)
        chunk = clock + np.cumsum(gaps)
        clock = float(chunk[-1])
        times.append(chunk)
    all_times = np.concatenate(times)
    return all_times[all_times < horizon_s]


class ArrivalStream:
    """Lazily extended arrival timeline for one UE.

    Gaps are drawn in chunks and cumulatively summed into absolute arrival
    times; `take_until` hands out every arrival strictly before a deadline,
    in order, exactly once.
    """

    _CHUNK = 1024

    def __init__(self, cls: TrafficClass, seed: int, ue_index: int):
        self.cls = cls
        self._rng = stream_rng(seed, ue_index)
        self._times = np.empty(0, dtype=np.float64)
        self._clock = 0.0
        self._cursor = 0

    def _extend(self) -> None:
        gaps = draw_gaps(self.cls, self._rng, self._CHUNK)
        times = self._clock + np.cumsum(gaps)
        self._clock = float(times[-1])
        keep = self._times[self._cursor :]
        self._times = np.concatenate([keep, times])
        self._cursor = 0

    def take_until(self, deadline: float) -> np.ndarray:
        """All arrival times in [last deadline, deadline), ascending."""
        while self._clock < deadline:
            self._extend()
        t = self._times
        end = self._cursor + int(
            np.searchsorted(t[self._cursor :], deadline, side="left")
        )
        out = t[self._cursor : end].copy()
        self._cursor = end
        return out
