"""URLLC traffic generation, per-VNF fluid queues and DCAE-style telemetry.

Time advances in one-minute steps over a 1440-minute day.  Each chain has an
arrival profile; its packets are offered to every member VNF, each VNF keeps
a fluid queue drained at its service rate, and every minute yields one
telemetry record per VNF (offered packets, average latency, congestion label).
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .topology import ServiceChain, Topology, VnfKind, apply_steering, steering_feasible

MINUTES_PER_DAY = 1440
DEFAULT_RHO = 0.9
DEFAULT_BUFFER_MINUTES = 60.0
#: per-kind processing latency added to the queuing delay in telemetry
DEFAULT_PROCESSING_MS = {VnfKind.NEAR_RT_RIC: 0.5, VnfKind.OCU: 0.3, VnfKind.ODU: 0.2}

TELEMETRY_HEADER = ("minute", "vnf_id", "avg_packets_per_min", "avg_latency_ms", "congested")
DELAY_HEADER = ("minute", "vnf_id", "queuing_delay_ms")


class TrafficError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficClass:
    name: str
    latency_range_ms: tuple[float, float]
    error_rate_bound: tuple[float, float]

    @property
    def max_latency_ms(self) -> float:
        return self.latency_range_ms[1]

    def admits_latency(self, bound_ms: float) -> bool:
        lo, hi = self.latency_range_ms
        return lo <= bound_ms <= hi

    def admits_error_rate(self, rate: float) -> bool:
        return rate <= self.error_rate_bound[1]


TRAFFIC_CLASSES = {
    "ArVr": TrafficClass("ArVr", (5.0, 10.0), (1e-5, 1e-3)),
    # only a lower bound is published for vehicles; 0.1 caps it
    "AutonomousVehicle": TrafficClass("AutonomousVehicle", (5.0, 10.0), (1e-3, 1e-1)),
    "AutomatedIndustry": TrafficClass("AutomatedIndustry", (1.0, 1.0), (1e-9, 1e-5)),
}


@dataclass(frozen=True)
class ArrivalProfile:
    """Daily packet arrival profile of one chain.

    ``peaks`` are Gaussian bumps ``(center_minute, width_minutes, amplitude)``
    added to the base rate; ``spikes`` are ``(start_minute, duration,
    multiplier)`` windows that scale the whole rate.  With ``noise`` the
    per-minute arrivals are Poisson draws around the rate.
    """

    base_rate_ppm: float
    peaks: tuple[tuple[float, float, float], ...] = ()
    spikes: tuple[tuple[float, float, float], ...] = ()
    noise_seed: int = 0
    noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(tuple(float(x) for x in p) for p in self.peaks))
        object.__setattr__(self, "spikes", tuple(tuple(float(x) for x in s) for s in self.spikes))
        if not self.base_rate_ppm > 0:
            raise TrafficError("base_rate_ppm must be positive")
        for c, w, a in self.peaks:
            if not w > 0 or a < -self.base_rate_ppm:
                raise TrafficError(f"invalid peak {(c, w, a)}")
        for start, dur, mult in self.spikes:
            if dur < 0 or mult < 0:
                raise TrafficError(f"invalid spike {(start, dur, mult)}")
        if expected_rates(self).min() < 0:
            raise TrafficError("profile rate goes negative")


def _check_minute(t) -> None:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= MINUTES_PER_DAY) or np.any(t != np.floor(t)):
        raise TrafficError(f"minute out of range [0, {MINUTES_PER_DAY})")


def expected_rates(profile: ArrivalProfile, t=None) -> np.ndarray:
    """Noise-free rate at minute(s) ``t`` (all minutes of the day by default)."""
    t = np.arange(MINUTES_PER_DAY, dtype=float) if t is None else np.asarray(t, dtype=float)
    rate = np.full(t.shape, float(profile.base_rate_ppm))
    for center, width, amp in profile.peaks:
        rate = rate + amp * np.exp(-0.5 * ((t - center) / width) ** 2)
    for start, dur, mult in profile.spikes:
        rate = np.where((t >= start) & (t < start + dur), rate * mult, rate)
    return rate


@lru_cache(maxsize=4096)
def _arrival_series(profile: ArrivalProfile, day: int) -> np.ndarray:
    rates = expected_rates(profile)
    if not profile.noise:
        out = np.rint(rates)
    else:
        rng = np.random.default_rng([profile.noise_seed, day])
        out = rng.poisson(rates).astype(float)
    out.setflags(write=False)
    return out


def arrival_series(profile: ArrivalProfile, day: int = 0) -> np.ndarray:
    """Whole-packet arrivals for each minute of ``day`` (deterministic per seed)."""
    return _arrival_series(profile, int(day))


def arrival_rate(profile: ArrivalProfile, t: int, day: int = 0) -> float:
    """Arrival rate at minute ``t`` in packets/min.

    Without noise this is the exact profile value; with noise it is the seeded
    Poisson draw for that minute of ``day``.
    """
    _check_minute(t)
    if not profile.noise:
        return float(expected_rates(profile, t))
    return float(arrival_series(profile, day)[int(t)])


def profile_integral(profile: ArrivalProfile, a: float = 0.0, b: float = MINUTES_PER_DAY) -> float:
    """Closed-form integral of the noise-free rate over ``[a, b)``."""

    def bumps(lo, hi):
        total = profile.base_rate_ppm * (hi - lo)
        for center, width, amp in profile.peaks:
            k = width * math.sqrt(2.0)
            total += amp * width * math.sqrt(math.pi / 2) * (math.erf((hi - center) / k) - math.erf((lo - center) / k))
        return total

    # split at spike edges; inside a piece the multiplier is constant
    edges = {a, b}
    for start, dur, _ in profile.spikes:
        edges.update(x for x in (start, start + dur) if a < x < b)
    edges = sorted(edges)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        mult = 1.0
        for start, dur, m in profile.spikes:
            if start <= mid < start + dur:
                mult *= m
        total += mult * bumps(lo, hi)
    return total


@dataclass(frozen=True)
class VnfQueueState:
    queue_len_packets: float = 0.0
    arrivals_this_min: float = 0.0
    served_this_min: float = 0.0
    dropped_this_min: float = 0.0


def step_queue(
    state: VnfQueueState,
    arrivals: float,
    service_rate_ppm: float,
    buffer_limit: float | None = None,
) -> tuple[VnfQueueState, float]:
    """Advance one VNF queue by one minute.

    Returns the new state and the queuing delay in milliseconds, i.e. the time
    the remaining backlog needs at the service rate.  The buffer defaults to
    one hour of service; overflow is dropped.  Accounting is exact for whole
    packet counts.
    """
    if not (math.isfinite(arrivals) and math.isfinite(service_rate_ppm) and math.isfinite(state.queue_len_packets)):
        raise TrafficError("non-finite queue input")
    if arrivals < 0:
        raise TrafficError("arrivals must be non-negative")
    if buffer_limit is None:
        buffer_limit = DEFAULT_BUFFER_MINUTES * service_rate_ppm
    backlog = state.queue_len_packets + arrivals
    served = min(backlog, service_rate_ppm)
    queue = backlog - served
    dropped = max(queue - buffer_limit, 0.0)
    queue -= dropped
    new = VnfQueueState(queue, arrivals, served, dropped)
    return new, queue / service_rate_ppm * 60_000.0


def step_queues(queue, arrivals, service_rates, buffer_limits):
    """Vectorised :func:`step_queue`; returns ``(queue, served, dropped, delay_ms)``."""
    backlog = queue + arrivals
    served = np.minimum(backlog, service_rates)
    left = backlog - served
    dropped = np.maximum(left - buffer_limits, 0.0)
    left = left - dropped
    return left, served, dropped, left / service_rates * 60_000.0


def congestion_label(avg_packets_per_min: float, service_rate_ppm: float, rho_threshold: float = DEFAULT_RHO) -> int:
    """1 when offered load exceeds ``rho_threshold`` of the service rate."""
    return int(avg_packets_per_min > rho_threshold * service_rate_ppm)


@dataclass(frozen=True)
class TelemetryRecord:
    vnf_id: int
    minute: int
    avg_packets_per_min: float
    avg_latency_ms: float
    congested_label: int


@dataclass
class MinuteStats:
    """Everything observed at the VNFs during one minute (arrays of length V)."""

    minute: int
    arrivals: np.ndarray
    served: np.ndarray
    dropped: np.ndarray
    queue: np.ndarray
    delay_ms: np.ndarray
    latency_ms: np.ndarray
    congested: np.ndarray

    def records(self) -> list[TelemetryRecord]:
        return [
            TelemetryRecord(v, self.minute, float(self.arrivals[v]), float(self.latency_ms[v]), int(self.congested[v]))
            for v in range(len(self.arrivals))
        ]


class TrafficSimulator:
    """Per-minute fluid simulation of every VNF queue.

    Parameters
    ----------
    topology : Topology
    profiles : mapping chain id -> ArrivalProfile
    day : int
        Selects the noise realisation of every profile.
    """

    def __init__(
        self,
        topology: Topology,
        profiles: Mapping[int, ArrivalProfile],
        day: int = 0,
        rho_threshold: float = DEFAULT_RHO,
        buffer_minutes: float = DEFAULT_BUFFER_MINUTES,
        processing_ms: Mapping = DEFAULT_PROCESSING_MS,
    ):
        if not 0 < rho_threshold <= 1:
            raise TrafficError("rho_threshold must lie in (0, 1]")
        self.topology = topology
        self.profiles = dict(profiles)
        self.day = int(day)
        self.rho_threshold = rho_threshold
        self.service_rates = topology.service_rates
        self.buffer_limits = buffer_minutes * self.service_rates
        proc = {VnfKind(k): float(v) for k, v in processing_ms.items()}
        self.processing_ms = np.array([proc[v.kind] for v in topology.vnfs])
        self._series = {cid: arrival_series(p, self.day) for cid, p in self.profiles.items()}
        self.queue = np.zeros(topology.n_vnfs)

    def reset(self) -> None:
        self.queue = np.zeros(self.topology.n_vnfs)

    def chain_arrivals(self, t: int) -> dict[int, float]:
        return {cid: float(s[t]) for cid, s in self._series.items()}

    def vnf_arrivals(self, t: int, chains: Sequence[ServiceChain]) -> np.ndarray:
        arrivals = np.zeros(self.topology.n_vnfs)
        for chain in chains:
            if chain.id not in self._series:
                raise TrafficError(f"chain {chain.id} has no traffic profile")
            a = self._series[chain.id][t]
            for m in chain.members:
                arrivals[m] += a
        return arrivals

    def step(self, t: int, chains: Sequence[ServiceChain]) -> MinuteStats:
        arrivals = self.vnf_arrivals(t, chains)
        queue, served, dropped, delay = step_queues(self.queue, arrivals, self.service_rates, self.buffer_limits)
        self.queue = queue
        congested = (arrivals > self.rho_threshold * self.service_rates).astype(np.int8)
        return MinuteStats(t, arrivals, served, dropped, queue, delay, delay + self.processing_ms, congested)


@dataclass
class DayLog:
    """Telemetry and delays of one simulated day; arrays are (minutes, V)."""

    arrivals: np.ndarray
    latency_ms: np.ndarray
    congested: np.ndarray
    delay_ms: np.ndarray
    served: np.ndarray | None = None
    dropped: np.ndarray | None = None
    queue: np.ndarray | None = None
    steering: list[tuple[int, int, int]] | None = None  # (minute, src, dst) applied after minute

    @property
    def n_minutes(self) -> int:
        return self.arrivals.shape[0]

    @property
    def n_vnfs(self) -> int:
        return self.arrivals.shape[1]

    def records(self, t: int) -> list[TelemetryRecord]:
        return [
            TelemetryRecord(v, t, float(self.arrivals[t, v]), float(self.latency_ms[t, v]), int(self.congested[t, v]))
            for v in range(self.n_vnfs)
        ]

    def write_telemetry_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TELEMETRY_HEADER)
            for t in range(self.n_minutes):
                for v in range(self.n_vnfs):
                    w.writerow((t, v, repr(float(self.arrivals[t, v])), repr(float(self.latency_ms[t, v])), int(self.congested[t, v])))

    def write_delay_csv(self, path: str | Path) -> None:
        write_delay_csv(path, self.delay_ms)


def write_delay_csv(path: str | Path, delay_ms: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DELAY_HEADER)
        for t in range(delay_ms.shape[0]):
            for v in range(delay_ms.shape[1]):
                w.writerow((t, v, repr(float(delay_ms[t, v]))))


def _read_grid(path: str | Path, header: Sequence[str]) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(header):
        raise TrafficError(f"{path}: expected header {','.join(header)}")
    body = rows[1:]
    minutes = np.array([int(r[0]) for r in body])
    vnfs = np.array([int(r[1]) for r in body])
    n_t, n_v = minutes.max() + 1, vnfs.max() + 1
    if len(body) != n_t * n_v:
        raise TrafficError(f"{path}: expected {n_t * n_v} rows, found {len(body)}")
    out = {}
    for col, name in enumerate(header[2:], start=2):
        grid = np.full((n_t, n_v), np.nan)
        grid[minutes, vnfs] = [float(r[col]) for r in body]
        out[name] = grid
    return out


def read_telemetry_csv(path: str | Path) -> DayLog:
    g = _read_grid(path, TELEMETRY_HEADER)
    return DayLog(
        arrivals=g["avg_packets_per_min"],
        latency_ms=g["avg_latency_ms"],
        congested=g["congested"].astype(np.int8),
        delay_ms=np.full_like(g["avg_latency_ms"], np.nan),
    )


def read_delay_csv(path: str | Path) -> np.ndarray:
    return _read_grid(path, DELAY_HEADER)["queuing_delay_ms"]


SteeringHook = Callable[[int, MinuteStats, tuple[ServiceChain, ...]], "tuple[int, int] | None"]


def simulate_day(
    topology: Topology,
    chains: Sequence[ServiceChain],
    profiles: Mapping[int, ArrivalProfile],
    steering_hook: SteeringHook | None = None,
    day: int = 0,
    rho_threshold: float = DEFAULT_RHO,
    buffer_minutes: float = DEFAULT_BUFFER_MINUTES,
    processing_ms: Mapping = DEFAULT_PROCESSING_MS,
    minutes: int = MINUTES_PER_DAY,
) -> DayLog:
    """Run one day of traffic.

    After every minute the hook sees that minute's statistics and the current
    chains; a returned ``(src, dst)`` pair is applied before the next minute
    when it passes :func:`steering_feasible` against the loads just observed.
    """
    sim = TrafficSimulator(topology, profiles, day, rho_threshold, buffer_minutes, processing_ms)
    chains = tuple(chains)
    shape = (minutes, topology.n_vnfs)
    cols = {k: np.zeros(shape) for k in ("arrivals", "latency_ms", "delay_ms", "served", "dropped", "queue")}
    congested = np.zeros(shape, dtype=np.int8)
    applied = []
    for t in range(minutes):
        st = sim.step(t, chains)
        cols["arrivals"][t] = st.arrivals
        cols["latency_ms"][t] = st.latency_ms
        cols["delay_ms"][t] = st.delay_ms
        cols["served"][t] = st.served
        cols["dropped"][t] = st.dropped
        cols["queue"][t] = st.queue
        congested[t] = st.congested
        if steering_hook is not None:
            move = steering_hook(t, st, chains)
            if move is not None:
                src, dst = move
                if steering_feasible(src, dst, topology, chains, st.arrivals).ok:
                    chains = apply_steering(src, dst, chains)
                    applied.append((t, src, dst))
    return DayLog(congested=congested, steering=applied, **cols)
