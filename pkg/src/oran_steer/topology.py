"""Server infrastructure, VNF inventory, placement and service function chains.

The server graph carries the adjacency matrix ``S`` and the link latency matrix
``L``.  A placement maps every VNF onto one COTS server, and a service chain is
an ordered (near-RT RIC, O-CU, O-DU) triple of VNF ids.  Traffic steering
re-targets every chain that uses a source VNF onto a destination VNF of the
same kind, subject to latency, reliability (MTTF) and capacity gates.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np


class VnfKind(str, enum.Enum):
    NEAR_RT_RIC = "NearRtRic"
    OCU = "OCU"
    ODU = "ODU"


#: Slot order of a chain.
CHAIN_KINDS = (VnfKind.NEAR_RT_RIC, VnfKind.OCU, VnfKind.ODU)


class TopologyError(ValueError):
    """Raised when a topology object violates one of its invariants."""


class PlacementInfeasible(TopologyError):
    def __init__(self, vnf_id: int, message: str = ""):
        self.vnf_id = vnf_id
        super().__init__(f"no feasible server for VNF {vnf_id}" + (f": {message}" if message else ""))


class SteeringRejected(TopologyError):
    def __init__(self, src: int, dst: int, reason: "Reason"):
        self.src, self.dst, self.reason = src, dst, reason
        super().__init__(f"steering {src} -> {dst} rejected: {reason.value}")


class Reason(str, enum.Enum):
    OK = "Ok"
    UNKNOWN_VNF = "UnknownVnf"
    SAME_VNF = "SameVnf"
    KIND_MISMATCH = "KindMismatch"
    LATENCY_VIOLATION = "LatencyViolation"
    RELIABILITY_VIOLATION = "ReliabilityViolation"
    CAPACITY_EXCEEDED = "CapacityExceeded"
    DESTINATION_CONGESTED = "DestinationCongested"


class Feasibility(NamedTuple):
    ok: bool
    reason: Reason

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class ServerGraph:
    """COTS servers and the links between them.

    ``link_latency_ms`` holds ``inf`` wherever there is no usable link.
    """

    adjacency: np.ndarray
    link_latency_ms: np.ndarray
    mttf_hours: np.ndarray
    cpu_capacity: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.int8)
        lat = np.asarray(self.link_latency_ms, dtype=float).copy()
        n = adj.shape[0]
        if adj.shape != (n, n) or lat.shape != (n, n):
            raise TopologyError("adjacency and latency must be square matrices of equal size")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise TopologyError("adjacency must have a zero diagonal")
        if not np.isin(adj, (0, 1)).all():
            raise TopologyError("adjacency must be binary")
        linked = adj == 1
        if np.any(~(lat[linked] > 0)) or not np.all(np.isfinite(lat[linked])):
            raise TopologyError("link latency must be positive and finite on every link")
        lat[~linked] = np.inf
        mttf = np.asarray(self.mttf_hours, dtype=float)
        cap = np.asarray(self.cpu_capacity, dtype=float)
        if mttf.shape != (n,) or np.any(~(mttf > 0)):
            raise TopologyError("mttf_hours must be positive, one per server")
        if cap.shape != (n,) or np.any(~(cap > 0)):
            raise TopologyError("cpu_capacity must be positive, one per server")
        for name, arr in (("adjacency", adj), ("link_latency_ms", lat), ("mttf_hours", mttf), ("cpu_capacity", cap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_servers(self) -> int:
        return self.adjacency.shape[0]

    def hop_latency(self, a: int, b: int) -> float:
        """Latency between two servers; 0 when co-located, inf when unlinked."""
        if a == b:
            return 0.0
        return float(self.link_latency_ms[a, b])

    def hop_matrix(self) -> np.ndarray:
        """``link_latency_ms`` with zeros on the diagonal."""
        m = self.link_latency_ms.copy()
        np.fill_diagonal(m, 0.0)
        return m

    @classmethod
    def random(
        cls,
        n: int,
        rng: np.random.Generator,
        link_probability: float = 0.3,
        latency_ms: tuple[float, float] = (0.05, 0.4),
        cpu_capacity: tuple[float, float] = (16.0, 32.0),
        mttf_hours: tuple[float, float] = (5_000.0, 50_000.0),
    ) -> "ServerGraph":
        """Random connected graph: a random spanning tree plus Bernoulli extra links."""
        adj = np.zeros((n, n), dtype=np.int8)
        order = rng.permutation(n)
        for i in range(1, n):
            a, b = order[i], order[rng.integers(0, i)]
            adj[a, b] = adj[b, a] = 1
        extra = np.triu(rng.random((n, n)) < link_probability, k=1)
        adj |= (extra | extra.T).astype(np.int8)
        np.fill_diagonal(adj, 0)
        lat = np.triu(rng.uniform(*latency_ms, size=(n, n)), k=1)
        lat = lat + lat.T
        lat[adj == 0] = np.inf
        return cls(
            adjacency=adj,
            link_latency_ms=lat,
            mttf_hours=rng.uniform(*mttf_hours, size=n),
            cpu_capacity=rng.uniform(*cpu_capacity, size=n),
        )


@dataclass(frozen=True)
class Vnf:
    id: int
    kind: VnfKind
    service_rate_ppm: float
    cpu_demand: float

    def __post_init__(self):
        object.__setattr__(self, "kind", VnfKind(self.kind))
        if not self.service_rate_ppm > 0:
            raise TopologyError(f"VNF {self.id}: service_rate_ppm must be positive")
        if not self.cpu_demand > 0:
            raise TopologyError(f"VNF {self.id}: cpu_demand must be positive")


@dataclass(frozen=True)
class ServiceChain:
    id: int
    members: tuple[int, int, int]
    latency_bound_ms: float
    reliability_bound: float
    traffic_class: str = "ArVr"

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        if len(self.members) != 3:
            raise TopologyError(f"chain {self.id}: exactly three members required")
        if not self.latency_bound_ms > 0:
            raise TopologyError(f"chain {self.id}: latency_bound_ms must be positive")
        if not 0 < self.reliability_bound < 1:
            raise TopologyError(f"chain {self.id}: reliability_bound must lie in (0, 1)")

    def __contains__(self, vnf_id: int) -> bool:
        return vnf_id in self.members

    def substitute(self, src: int, dst: int) -> "ServiceChain":
        return replace(self, members=tuple(dst if m == src else m for m in self.members))


@dataclass(frozen=True)
class Placement:
    """VNF id -> server id."""

    host_of: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "host_of", dict(sorted((int(k), int(v)) for k, v in self.host_of.items())))

    def host(self, vnf_id: int) -> int:
        try:
            return self.host_of[vnf_id]
        except KeyError:
            raise TopologyError(f"unknown VNF id {vnf_id}") from None

    def vnfs_on(self, server: int) -> list[int]:
        return [v for v, s in self.host_of.items() if s == server]

    def by_server(self, n_servers: int) -> list[list[int]]:
        """The per-server VNF lists."""
        out: list[list[int]] = [[] for _ in range(n_servers)]
        for v, s in self.host_of.items():
            out[s].append(v)
        return out

    def cpu_used(self, vnfs: Iterable[Vnf], n_servers: int) -> np.ndarray:
        used = np.zeros(n_servers)
        for v in vnfs:
            if v.id in self.host_of:
                used[self.host_of[v.id]] += v.cpu_demand
        return used

    def validate(self, vnfs: Sequence[Vnf], graph: ServerGraph) -> None:
        for v in vnfs:
            if v.id not in self.host_of:
                raise TopologyError(f"VNF {v.id} is not placed")
        for v, s in self.host_of.items():
            if not 0 <= s < graph.n_servers:
                raise TopologyError(f"VNF {v} placed on unknown server {s}")
        over = np.nonzero(self.cpu_used(vnfs, graph.n_servers) > graph.cpu_capacity + 1e-9)[0]
        if over.size:
            raise TopologyError(f"cpu capacity exceeded on server(s) {over.tolist()}")


@dataclass
class Topology:
    """Infrastructure context shared by every steering decision.

    ``vnfs`` are the traffic-carrying VNFs with dense ids ``0..V-1``.  Backup
    VNFs only consume server capacity and never receive traffic.
    """

    graph: ServerGraph
    vnfs: tuple[Vnf, ...]
    placement: Placement
    mttf_threshold_hours: float
    backups: tuple[Vnf, ...] = ()
    _hop_matrix: np.ndarray = field(init=False, repr=False)
    _vnf_latency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vnfs = tuple(self.vnfs)
        self.backups = tuple(self.backups)
        if [v.id for v in self.vnfs] != list(range(len(self.vnfs))):
            raise TopologyError("VNF ids must be dense 0..V-1 in order")
        backup_ids = {b.id for b in self.backups}
        if backup_ids & set(range(len(self.vnfs))):
            raise TopologyError("backup ids overlap primary ids")
        self.placement.validate(self.vnfs + self.backups, self.graph)
        self._hop_matrix = self.graph.hop_matrix()
        hosts = self.hosts
        self._vnf_latency = self._hop_matrix[np.ix_(hosts, hosts)]

    @property
    def n_vnfs(self) -> int:
        return len(self.vnfs)

    @property
    def hosts(self) -> np.ndarray:
        return np.array([self.placement.host(v.id) for v in self.vnfs], dtype=int)

    @property
    def kinds(self) -> np.ndarray:
        return np.array([CHAIN_KINDS.index(v.kind) for v in self.vnfs], dtype=int)

    @property
    def service_rates(self) -> np.ndarray:
        return np.array([v.service_rate_ppm for v in self.vnfs], dtype=float)

    @property
    def vnf_latency(self) -> np.ndarray:
        """V x V matrix of hop latency between the hosts of two VNFs."""
        return self._vnf_latency

    def vnf(self, vnf_id: int) -> Vnf:
        if not 0 <= vnf_id < len(self.vnfs):
            raise TopologyError(f"unknown VNF id {vnf_id}")
        return self.vnfs[vnf_id]

    def host_mttf_ok(self) -> np.ndarray:
        return self.graph.mttf_hours[self.hosts] >= self.mttf_threshold_hours


def validate_chains(chains: Sequence[ServiceChain], vnfs: Sequence[Vnf]) -> None:
    ids = {v.id: v for v in vnfs}
    seen = set()
    for chain in chains:
        if chain.id in seen:
            raise TopologyError(f"duplicate chain id {chain.id}")
        seen.add(chain.id)
        for slot, (member, kind) in enumerate(zip(chain.members, CHAIN_KINDS)):
            if member not in ids:
                raise TopologyError(f"chain {chain.id}: unknown VNF id {member}")
            if ids[member].kind is not kind:
                raise TopologyError(
                    f"chain {chain.id}: slot {slot} must be a {kind.value}, got {ids[member].kind.value}"
                )


def chain_latency(chain: ServiceChain, placement: Placement, graph: ServerGraph) -> float:
    """Sum of direct link latencies between consecutive members' hosts (inf if a hop is unlinked)."""
    hosts = [placement.host(m) for m in chain.members]
    return sum(graph.hop_latency(a, b) for a, b in zip(hosts[:-1], hosts[1:]))


def chains_containing(vnf_id: int, chains: Iterable[ServiceChain]) -> list[ServiceChain]:
    return [c for c in chains if vnf_id in c.members]


def steering_feasible(
    src: int,
    dst: int,
    topology: Topology,
    chains: Sequence[ServiceChain],
    loads: np.ndarray | None = None,
    congested: np.ndarray | None = None,
    headroom: float = 1.0,
) -> Feasibility:
    """Check whether the traffic of ``src`` may be re-targeted to ``dst``.

    Parameters
    ----------
    loads : array of shape (V,), optional
        Offered load (packets/min) observed on every VNF in the last minute.
        When given, ``dst`` must be able to absorb its own load plus the load
        of ``src`` within ``headroom`` times its service rate.
    congested : array of shape (V,), optional
        Current congestion flags; a flagged ``dst`` is rejected.
    headroom : float
        Usable fraction of the destination's service rate.
    """
    n = topology.n_vnfs
    if not (0 <= src < n and 0 <= dst < n):
        return Feasibility(False, Reason.UNKNOWN_VNF)
    if src == dst:
        return Feasibility(False, Reason.SAME_VNF)
    if topology.vnfs[src].kind is not topology.vnfs[dst].kind:
        return Feasibility(False, Reason.KIND_MISMATCH)
    graph, placement = topology.graph, topology.placement
    if graph.mttf_hours[placement.host(dst)] < topology.mttf_threshold_hours:
        return Feasibility(False, Reason.RELIABILITY_VIOLATION)
    for chain in chains_containing(src, chains):
        if chain_latency(chain.substitute(src, dst), placement, graph) > chain.latency_bound_ms:
            return Feasibility(False, Reason.LATENCY_VIOLATION)
    if loads is not None:
        if loads[dst] + loads[src] > headroom * topology.vnfs[dst].service_rate_ppm:
            return Feasibility(False, Reason.CAPACITY_EXCEEDED)
    if congested is not None and congested[dst]:
        return Feasibility(False, Reason.DESTINATION_CONGESTED)
    return Feasibility(True, Reason.OK)


def feasibility_matrix(
    topology: Topology,
    chains: Sequence[ServiceChain],
    loads: np.ndarray | None = None,
    congested: np.ndarray | None = None,
    headroom: float = 1.0,
) -> np.ndarray:
    """Boolean V x V matrix; entry ``[s, d]`` equals ``steering_feasible(s, d, ...)``.

    Vectorised over destinations; used for action masks.
    """
    kinds = topology.kinds
    ok = kinds[:, None] == kinds[None, :]
    np.fill_diagonal(ok, False)
    ok &= topology.host_mttf_ok()[None, :]
    if loads is not None:
        loads = np.asarray(loads, dtype=float)
        ok &= (loads[None, :] + loads[:, None]) <= headroom * topology.service_rates[None, :]
    if congested is not None:
        ok &= ~np.asarray(congested, dtype=bool)[None, :]
    lat = topology.vnf_latency
    for chain in chains:
        a, b, c = chain.members
        bound = chain.latency_bound_ms
        # latency of the chain with slot k replaced by every candidate
        with_slot = (
            lat[:, b] + lat[b, c],
            lat[a, :] + lat[:, c],
            lat[a, b] + lat[b, :],
        )
        for src, candidate in zip(chain.members, with_slot):
            ok[src] &= candidate <= bound
    return ok


def apply_steering(
    src: int,
    dst: int,
    chains: Sequence[ServiceChain],
    topology: Topology | None = None,
    loads: np.ndarray | None = None,
    congested: np.ndarray | None = None,
) -> tuple[ServiceChain, ...]:
    """Substitute ``dst`` for ``src`` in every chain containing ``src``.

    When ``topology`` is given the move is checked first and an infeasible
    move raises :class:`SteeringRejected`; chains are immutable so the input
    sequence is never modified.
    """
    if topology is not None:
        verdict = steering_feasible(src, dst, topology, chains, loads, congested)
        if not verdict.ok:
            raise SteeringRejected(src, dst, verdict.reason)
    return tuple(c.substitute(src, dst) if src in c.members else c for c in chains)


@dataclass(frozen=True)
class PlacementRequest:
    """VNFs to place, in the order kinds appear in a chain.

    ``upstream`` maps a VNF to the VNFs that precede it in some chain, and
    ``latency_budget_ms`` to the tightest bound among its chains.  Backups
    inherit both from the primary they protect.
    """

    primaries: tuple[Vnf, ...]
    backups: tuple[Vnf, ...] = ()
    backup_of: Mapping[int, int] = field(default_factory=dict)
    upstream: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    latency_budget_ms: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        p = {v.id for v in self.primaries}
        b = {v.id for v in self.backups}
        if p & b:
            raise TopologyError("primaries and backups must be disjoint")
        for bid in b:
            if self.backup_of.get(bid) not in p:
                raise TopologyError(f"backup {bid} does not protect a known primary")

    def counts(self) -> dict[VnfKind, tuple[int, int]]:
        return {
            k: (sum(v.kind is k for v in self.primaries), sum(v.kind is k for v in self.backups))
            for k in CHAIN_KINDS
        }

    @classmethod
    def from_chains(
        cls,
        vnfs: Sequence[Vnf],
        chains: Sequence[ServiceChain],
        backups: Sequence[Vnf] = (),
        backup_of: Mapping[int, int] | None = None,
    ) -> "PlacementRequest":
        upstream: dict[int, set[int]] = {}
        budget: dict[int, float] = {}
        for chain in chains:
            for i, m in enumerate(chain.members):
                upstream.setdefault(m, set()).update(chain.members[i - 1 : i] if i else ())
                budget[m] = min(budget.get(m, np.inf), chain.latency_bound_ms)
        return cls(
            primaries=tuple(vnfs),
            backups=tuple(backups),
            backup_of=dict(backup_of or {}),
            upstream={k: tuple(sorted(v)) for k, v in upstream.items()},
            latency_budget_ms=budget,
        )


def greedy_place(
    request: PlacementRequest,
    graph: ServerGraph,
    rng: np.random.Generator | int = 0,
) -> Placement:
    """Greedy sequential placement: highest-MTTF assessable server per VNF.

    Near-RT RICs are placed first (each primary followed by its backups),
    then O-CUs, then O-DUs; the order inside a kind is a seeded random draw.
    A server is assessable when it has spare CPU, is linked to (or is) the
    host of every already-placed upstream VNF, and the accumulated upstream
    latency stays within the VNF's budget.  Backups avoid their primary's
    server.
    """
    rng = np.random.default_rng(rng)
    hops = graph.hop_matrix()
    free = graph.cpu_capacity.astype(float).copy()
    host: dict[int, int] = {}
    reach_ms: dict[int, float] = {}  # accumulated latency from the chain head
    backups_of: dict[int, list[Vnf]] = {}
    for b in request.backups:
        backups_of.setdefault(request.backup_of[b.id], []).append(b)
    # deterministic tie-break: highest MTTF, then lowest server id
    order_by_mttf = np.lexsort((np.arange(graph.n_servers), -graph.mttf_hours))

    def place(vnf: Vnf, upstream: tuple[int, ...], budget: float, avoid: int | None) -> None:
        for s in order_by_mttf:
            if s == avoid or free[s] + 1e-12 < vnf.cpu_demand:
                continue
            acc = 0.0
            for u in upstream:
                acc = max(acc, reach_ms[u] + hops[host[u], s])
            if acc > budget:
                continue
            host[vnf.id] = int(s)
            reach_ms[vnf.id] = acc
            free[s] -= vnf.cpu_demand
            return
        raise PlacementInfeasible(vnf.id, "capacity, link or latency constraints exhausted")

    for kind in CHAIN_KINDS:
        group = [v for v in request.primaries if v.kind is kind]
        for i in rng.permutation(len(group)):
            vnf = group[i]
            upstream = tuple(request.upstream.get(vnf.id, ()))
            missing = [u for u in upstream if u not in host]
            if missing:
                raise PlacementInfeasible(vnf.id, f"upstream VNF(s) {missing} not placed before it")
            budget = request.latency_budget_ms.get(vnf.id, np.inf)
            place(vnf, upstream, budget, None)
            for b in backups_of.get(vnf.id, []):
                place(b, upstream, budget, host[vnf.id])
    return Placement(host)
