"""O-RAN traffic-steering reinforcement-learning environment.

State is ``{S, L, C, P, t}``: server adjacency, link latencies, the
chain x VNF congestion matrix predicted by the per-VNF classifiers, the
placement and the minute of day.  Action ``0`` is *no steering*; action
``1 + src * V + dst`` steers ``src`` onto ``dst``.  One step is one minute.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nbc import CongestionPredictor, NbcModel
from .scenario import Deployment
from .topology import Feasibility, Reason, ServiceChain, apply_steering, feasibility_matrix, steering_feasible
from .traffic import MINUTES_PER_DAY, MinuteStats, TrafficSimulator

NO_TS = 0


class EnvError(RuntimeError):
    pass


def n_actions(n_vnfs: int) -> int:
    return n_vnfs * n_vnfs + 1


def encode_action(src: int, dst: int, n_vnfs: int) -> int:
    if not (0 <= src < n_vnfs and 0 <= dst < n_vnfs):
        raise ValueError(f"VNF ids must lie in [0, {n_vnfs})")
    return 1 + src * n_vnfs + dst


def decode_action(action: int, n_vnfs: int) -> tuple[int, int] | None:
    """``None`` for no steering, else ``(src, dst)``."""
    action = int(action)
    if not 0 <= action <= n_vnfs * n_vnfs:
        raise ValueError(f"action {action} outside [0, {n_vnfs * n_vnfs}]")
    if action == NO_TS:
        return None
    return divmod(action - 1, n_vnfs)


def congestion_matrix(flags: np.ndarray, chains: Sequence[ServiceChain], n_vnfs: int | None = None) -> np.ndarray:
    """``C[i, j] = 1`` iff VNF ``j`` belongs to chain ``i`` and is flagged."""
    flags = np.asarray(flags, dtype=np.int8)
    n = len(flags) if n_vnfs is None else n_vnfs
    C = np.zeros((len(chains), n), dtype=np.int8)
    for i, chain in enumerate(chains):
        for m in chain.members:
            C[i, m] = flags[m]
    return C


def reward(
    action: int,
    congestion: np.ndarray,
    sigma: float = 1.0,
    shared_vnf_multiplier: float = 0.0,
    memberships: np.ndarray | None = None,
) -> float:
    """Four-branch steering reward.

    ``sigma`` for idling on a clean network, ``-8 sigma`` for idling while
    congestion is predicted, ``10 sigma`` for steering a congested source and
    ``-15 sigma`` for steering a clean one.  ``shared_vnf_multiplier`` (off by
    default) scales the two steering branches by ``1 + shared_vnf_multiplier * (n - 1)``
    where ``n`` is the number of chains sharing the source.
    """
    C = np.asarray(congestion)
    move = decode_action(action, C.shape[1])
    if move is None:
        return sigma if C.sum() == 0 else -8 * sigma
    src = move[0]
    hot = bool(C[:, src].any())
    base = 10 * sigma if hot else -15 * sigma
    if shared_vnf_multiplier:
        n = int(memberships[src]) if memberships is not None else int(C[:, src].sum())
        base *= 1 + shared_vnf_multiplier * max(n - 1, 0)
    return base


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    """``sum_t gamma**t * r_t``."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    r = np.asarray(list(rewards), dtype=float)
    return float(np.dot(gamma ** np.arange(len(r)), r))


@dataclass(frozen=True, eq=False)
class Observation:
    adjacency: np.ndarray  # S, servers x servers
    latency: np.ndarray  # L, inf where unlinked
    congestion: np.ndarray  # C, chains x VNFs
    hosts: np.ndarray  # P, server of every VNF
    chains: np.ndarray  # chains x 3 member ids
    loads: np.ndarray  # packets offered to each VNF in the last minute
    t: int

    @property
    def flags(self) -> np.ndarray:
        """Per-VNF congestion bit (column max of C)."""
        return self.congestion.max(axis=0) if self.congestion.size else np.zeros(self.congestion.shape[1], np.int8)

    def per_server(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.adjacency.shape[0])]
        for v, s in enumerate(self.hosts):
            out[s].append(v)
        return out


@dataclass
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    accepted: bool
    reason: Reason | None
    action: int
    delays_ms: np.ndarray
    stats: MinuteStats


@dataclass
class EnvConfig:
    sigma: float = 1.0
    shared_vnf_multiplier: float = 0.0
    #: reject destinations that cannot absorb the moved load within their service rate
    capacity_gate: bool = True
    #: fraction of the destination's service rate the gate lets a move fill
    capacity_headroom: float = 1.0


@dataclass
class TraceRecord:
    t: int
    action_index: int
    src: int
    dst: int
    accepted: bool
    reward: float
    sum_C: int
    mean_delay_ms: float


class OranEnv:
    """Minute-stepped environment over a deployed scenario.

    Parameters
    ----------
    deployment : Deployment
        Placed topology, initial chains and traffic profiles.
    models : sequence of NbcModel
        One congestion classifier per VNF; predictions for the next minute
        populate the congestion matrix.
    """

    def __init__(self, deployment: Deployment, models: Sequence[NbcModel], config: EnvConfig | None = None):
        self.deployment = deployment
        self.topology = deployment.topology
        self.config = config or EnvConfig()
        if self.config.sigma <= 0:
            raise EnvError("sigma must be positive")
        if len(models) != self.topology.n_vnfs:
            raise EnvError(f"expected {self.topology.n_vnfs} classifiers, got {len(models)}")
        self.predictor = CongestionPredictor(models)
        self.initial_chains = tuple(deployment.chains)
        sc = deployment.scenario
        self._sim_kwargs = dict(
            rho_threshold=sc.rho_threshold, buffer_minutes=sc.buffer_minutes, processing_ms=sc.processing_ms
        )
        self.t = 0
        self.done = True
        self.trace: list[TraceRecord] = []

    @property
    def n_vnfs(self) -> int:
        return self.topology.n_vnfs

    @property
    def n_actions(self) -> int:
        return n_actions(self.n_vnfs)

    def reset(self, seed: int = 0) -> Observation:
        """Start a new day; ``seed`` selects the traffic noise realisation."""
        self.seed = int(seed)
        self.sim = TrafficSimulator(self.topology, self.deployment.profiles, day=self.seed, **self._sim_kwargs)
        self.chains = self.initial_chains
        self.t = 0
        self.done = False
        self.loads = np.zeros(self.n_vnfs)
        latency = self.sim.processing_ms.copy()
        self.flags = self.predictor.predict(self.loads, latency)
        self.C = congestion_matrix(self.flags, self.chains, self.n_vnfs)
        self.last_stats: MinuteStats | None = None
        self.trace = []
        return self.observation()

    def observation(self) -> Observation:
        g = self.topology.graph
        return Observation(
            adjacency=g.adjacency,
            latency=g.link_latency_ms,
            congestion=self.C.copy(),
            hosts=self.topology.hosts,
            chains=np.array([c.members for c in self.chains], dtype=int).reshape(-1, 3),
            loads=self.loads.copy(),
            t=self.t,
        )

    def _chains_from(self, obs: Observation) -> tuple[ServiceChain, ...]:
        return tuple(c.__class__(c.id, tuple(m), c.latency_bound_ms, c.reliability_bound, c.traffic_class)
                     for c, m in zip(self.initial_chains, obs.chains))

    def feasible(self, src: int, dst: int, obs: Observation | None = None) -> Feasibility:
        if obs is None:
            chains, loads, congested = self.chains, self.loads, self.C.max(axis=0)
        else:
            chains, loads, congested = self._chains_from(obs), obs.loads, obs.flags
        return steering_feasible(
            src, dst, self.topology, chains, loads if self.config.capacity_gate else None, congested,
            self.config.capacity_headroom,
        )

    def action_mask(self, obs: Observation | None = None) -> np.ndarray:
        """Boolean mask of length ``V*V + 1``; NoTS is always allowed."""
        if obs is None:
            chains, loads, congested = self.chains, self.loads, self.C.max(axis=0)
        else:
            chains, loads, congested = self._chains_from(obs), obs.loads, obs.flags
        feas = feasibility_matrix(
            self.topology, chains, loads if self.config.capacity_gate else None, congested, self.config.capacity_headroom
        )
        return np.concatenate([[True], feas.ravel()])

    def memberships(self) -> np.ndarray:
        counts = np.zeros(self.n_vnfs, dtype=int)
        for c in self.chains:
            for m in c.members:
                counts[m] += 1
        return counts

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EnvError("episode finished; call reset()")
        action = int(action)
        move = decode_action(action, self.n_vnfs)
        r = reward(action, self.C, self.config.sigma, self.config.shared_vnf_multiplier, self.memberships())
        accepted, reason = False, None
        if move is not None:
            verdict = self.feasible(*move)
            reason = verdict.reason
            if verdict.ok:
                self.chains = apply_steering(move[0], move[1], self.chains)
                accepted = True
        stats = self.sim.step(self.t, self.chains)
        self.last_stats = stats
        self.loads = stats.arrivals
        self.flags = self.predictor.predict(stats.arrivals, stats.latency_ms)
        sum_c = int(self.C.sum())
        self.C = congestion_matrix(self.flags, self.chains, self.n_vnfs)
        src, dst = move if move is not None else (-1, -1)
        self.trace.append(
            TraceRecord(self.t, action, src, dst, accepted, float(r), sum_c, float(stats.delay_ms.mean()))
        )
        self.t += 1
        self.done = self.t >= MINUTES_PER_DAY
        return StepOutcome(self.observation(), r, self.done, accepted, reason, action, stats.delay_ms, stats)


def write_trace(path: str | Path, trace: Sequence[TraceRecord]) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_trace(path: str | Path) -> list[TraceRecord]:
    with open(path) as fh:
        return [TraceRecord(**json.loads(line)) for line in fh if line.strip()]
