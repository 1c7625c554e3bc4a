"""Scenario files: a YAML description of servers, VNFs, chains and traffic.

Schema (``schema_version: 1``)::

    schema_version: 1
    name: full
    seeds: {topology: int, placement: int, traffic: int}
    servers:
      count: int
      link_probability: float in [0, 1]
      link_latency_ms: [low, high]
      cpu_capacity: [low, high]
      mttf_hours: [low, high]
      mttf_threshold_hours: float        # optional
      mttf_threshold_percentile: float   # used when no threshold is given (default 20)
    link_error_rate: float               # checked against each chain's traffic class
    rho_threshold: float                 # optional, default 0.9
    buffer_minutes: float                # optional, default 60
    processing_ms: {NearRtRic: f, OCU: f, ODU: f}   # optional
    vnfs:
      - {id: 0, kind: NearRtRic, service_rate_ppm: f, cpu_demand: f}
    backups:                             # optional; ids continue after the VNFs
      - {id: 21, kind: NearRtRic, cpu_demand: f, backup_of: 0}
    chains:
      - id: 0
        members: [nearrt_id, ocu_id, odu_id]
        traffic_class: ArVr | AutonomousVehicle | AutomatedIndustry
        latency_bound_ms: f
        reliability_bound: f
        profile:
          base_rate_ppm: f
          peaks: [[center_minute, width_minutes, amplitude], ...]
          spikes: [[start_minute, duration, multiplier], ...]
          noise: bool
          noise_seed: int

Every invariant violation is reported as a :class:`ScenarioError` carrying
the 1-based line of the offending entry.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .topology import (
    Placement,
    PlacementRequest,
    ServerGraph,
    ServiceChain,
    Topology,
    TopologyError,
    Vnf,
    VnfKind,
    chain_latency,
    greedy_place,
    validate_chains,
)
from .traffic import (
    DEFAULT_BUFFER_MINUTES,
    DEFAULT_PROCESSING_MS,
    DEFAULT_RHO,
    TRAFFIC_CLASSES,
    ArrivalProfile,
    TrafficError,
)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<scenario>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ServerSpec:
    count: int
    link_probability: float = 0.3
    link_latency_ms: tuple[float, float] = (0.05, 0.4)
    cpu_capacity: tuple[float, float] = (16.0, 32.0)
    mttf_hours: tuple[float, float] = (5_000.0, 50_000.0)
    mttf_threshold_hours: float | None = None
    mttf_threshold_percentile: float = 20.0


@dataclass(frozen=True)
class BackupSpec:
    vnf: Vnf
    backup_of: int


@dataclass
class Scenario:
    name: str
    servers: ServerSpec
    vnfs: list[Vnf]
    chains: list[ServiceChain]
    profiles: dict[int, ArrivalProfile]
    seeds: dict[str, int] = field(default_factory=lambda: {"topology": 0, "placement": 0, "traffic": 0})
    backups: list[BackupSpec] = field(default_factory=list)
    link_error_rate: float = 1e-6
    rho_threshold: float = DEFAULT_RHO
    buffer_minutes: float = DEFAULT_BUFFER_MINUTES
    processing_ms: dict[VnfKind, float] = field(default_factory=lambda: dict(DEFAULT_PROCESSING_MS))

    @property
    def n_vnfs(self) -> int:
        return len(self.vnfs)

    def to_dict(self) -> dict:
        def pair(p):
            return [float(p[0]), float(p[1])]

        s = self.servers
        servers = {
            "count": s.count,
            "link_probability": s.link_probability,
            "link_latency_ms": pair(s.link_latency_ms),
            "cpu_capacity": pair(s.cpu_capacity),
            "mttf_hours": pair(s.mttf_hours),
            "mttf_threshold_percentile": s.mttf_threshold_percentile,
        }
        if s.mttf_threshold_hours is not None:
            servers["mttf_threshold_hours"] = float(s.mttf_threshold_hours)
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seeds": {k: int(v) for k, v in self.seeds.items()},
            "servers": servers,
            "link_error_rate": self.link_error_rate,
            "rho_threshold": self.rho_threshold,
            "buffer_minutes": self.buffer_minutes,
            "processing_ms": {VnfKind(k).value: float(v) for k, v in self.processing_ms.items()},
            "vnfs": [
                {"id": v.id, "kind": v.kind.value, "service_rate_ppm": float(v.service_rate_ppm), "cpu_demand": float(v.cpu_demand)}
                for v in self.vnfs
            ],
            "backups": [
                {"id": b.vnf.id, "kind": b.vnf.kind.value, "cpu_demand": float(b.vnf.cpu_demand), "backup_of": b.backup_of}
                for b in self.backups
            ],
            "chains": [
                {
                    "id": c.id,
                    "members": list(c.members),
                    "traffic_class": c.traffic_class,
                    "latency_bound_ms": float(c.latency_bound_ms),
                    "reliability_bound": float(c.reliability_bound),
                    "profile": _profile_dict(self.profiles[c.id]),
                }
                for c in self.chains
            ],
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=120)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def _profile_dict(p: ArrivalProfile) -> dict:
    return {
        "base_rate_ppm": float(p.base_rate_ppm),
        "peaks": [list(x) for x in p.peaks],
        "spikes": [list(x) for x in p.spikes],
        "noise": bool(p.noise),
        "noise_seed": int(p.noise_seed),
    }


class _Located:
    """A parsed YAML value paired with its node, for line-precise errors."""

    def __init__(self, value: Any, node: yaml.Node, path: str, source: str | None):
        self.value, self.node, self.path, self.source = value, node, path, source

    @property
    def line(self) -> int:
        return self.node.start_mark.line + 1

    def fail(self, message: str):
        raise ScenarioError(f"{self.path}: {message}", self.line, self.source)

    def mapping(self) -> dict[str, "_Located"]:
        if not isinstance(self.node, yaml.MappingNode) or not isinstance(self.value, dict):
            self.fail("expected a mapping")
        out = {}
        for knode, vnode in self.node.value:
            key = knode.value
            out[key] = _Located(self.value[key], vnode, f"{self.path}.{key}" if self.path else key, self.source)
        return out

    def sequence(self) -> list["_Located"]:
        if not isinstance(self.node, yaml.SequenceNode) or not isinstance(self.value, list):
            self.fail("expected a list")
        return [_Located(v, n, f"{self.path}[{i}]", self.source) for i, (v, n) in enumerate(zip(self.value, self.node.value))]

    def number(self, positive: bool = False, lo: float | None = None, hi: float | None = None) -> float:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            self.fail(f"expected a finite number, got {v!r}")
        if positive and not v > 0:
            self.fail(f"must be positive, got {v}")
        if lo is not None and v < lo or hi is not None and v > hi:
            self.fail(f"must lie in [{lo}, {hi}], got {v}")
        return float(v)

    def integer(self, lo: int | None = None) -> int:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(f"must be >= {lo}, got {v}")
        return int(v)

    def boolean(self) -> bool:
        if not isinstance(self.value, bool):
            self.fail(f"expected true/false, got {self.value!r}")
        return self.value

    def range_pair(self, positive: bool = True) -> tuple[float, float]:
        items = self.sequence()
        if len(items) != 2:
            self.fail("expected [low, high]")
        lo, hi = (i.number(positive=positive) for i in items)
        if lo > hi:
            self.fail("low must not exceed high")
        return lo, hi

    def triples(self) -> list[tuple[float, float, float]]:
        out = []
        for item in self.sequence():
            vals = item.sequence()
            if len(vals) != 3:
                item.fail("expected a triple")
            out.append(tuple(v.number() for v in vals))
        return out


def _require(m: Mapping[str, _Located], key: str, parent: _Located) -> _Located:
    if key not in m:
        parent.fail(f"missing required key '{key}'")
    return m[key]


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    """Parse and validate scenario YAML text."""
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {exc}", mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ScenarioError("empty scenario", 1, source)
    root = _Located(data, node, "", source)
    top = root.mapping()

    version = _require(top, "schema_version", root)
    if version.integer() != SCHEMA_VERSION:
        version.fail(f"unsupported schema_version {version.value}")
    name = str(top["name"].value) if "name" in top else "scenario"

    seeds = {"topology": 0, "placement": 0, "traffic": 0}
    if "seeds" in top:
        for k, v in top["seeds"].mapping().items():
            if k not in seeds:
                v.fail(f"unknown seed '{k}'")
            seeds[k] = v.integer(lo=0)

    srv_node = _require(top, "servers", root)
    srv = srv_node.mapping()
    kw: dict[str, Any] = {"count": _require(srv, "count", srv_node).integer(lo=1)}
    if "link_probability" in srv:
        kw["link_probability"] = srv["link_probability"].number(lo=0.0, hi=1.0)
    for key in ("link_latency_ms", "cpu_capacity", "mttf_hours"):
        if key in srv:
            kw[key] = srv[key].range_pair()
    if "mttf_threshold_hours" in srv and srv["mttf_threshold_hours"].value is not None:
        kw["mttf_threshold_hours"] = srv["mttf_threshold_hours"].number(positive=True)
    if "mttf_threshold_percentile" in srv:
        kw["mttf_threshold_percentile"] = srv["mttf_threshold_percentile"].number(lo=0.0, hi=100.0)
    servers = ServerSpec(**kw)

    link_error_rate = top["link_error_rate"].number(lo=0.0, hi=1.0) if "link_error_rate" in top else 1e-6
    rho = top["rho_threshold"].number(positive=True, hi=1.0) if "rho_threshold" in top else DEFAULT_RHO
    buffer_minutes = top["buffer_minutes"].number(positive=True) if "buffer_minutes" in top else DEFAULT_BUFFER_MINUTES
    processing = dict(DEFAULT_PROCESSING_MS)
    if "processing_ms" in top:
        for k, v in top["processing_ms"].mapping().items():
            try:
                processing[VnfKind(k)] = v.number(lo=0.0)
            except ValueError:
                v.fail(f"unknown VNF kind '{k}'")

    vnf_node = _require(top, "vnfs", root)
    vnfs: list[Vnf] = []
    for i, item in enumerate(vnf_node.sequence()):
        m = item.mapping()
        vid = _require(m, "id", item).integer(lo=0)
        if vid != i:
            m["id"].fail(f"VNF ids must be dense and ordered; expected {i}, got {vid}")
        kind = _require(m, "kind", item)
        try:
            k = VnfKind(kind.value)
        except ValueError:
            kind.fail(f"unknown VNF kind {kind.value!r}")
        vnfs.append(
            Vnf(vid, k, _require(m, "service_rate_ppm", item).number(positive=True), _require(m, "cpu_demand", item).number(positive=True))
        )
    if not vnfs:
        vnf_node.fail("at least one VNF is required")

    backups: list[BackupSpec] = []
    if "backups" in top and top["backups"].value:
        for i, item in enumerate(top["backups"].sequence()):
            m = item.mapping()
            bid = _require(m, "id", item).integer(lo=0)
            if bid != len(vnfs) + i:
                m["id"].fail(f"backup ids must continue densely after the VNFs; expected {len(vnfs) + i}")
            of = _require(m, "backup_of", item).integer(lo=0)
            if of >= len(vnfs):
                m["backup_of"].fail(f"unknown primary VNF {of}")
            kind = VnfKind(vnfs[of].kind)
            if "kind" in m and m["kind"].value != kind.value:
                m["kind"].fail(f"backup kind must match its primary ({kind.value})")
            backups.append(BackupSpec(Vnf(bid, kind, vnfs[of].service_rate_ppm, _require(m, "cpu_demand", item).number(positive=True)), of))

    chain_node = _require(top, "chains", root)
    chains: list[ServiceChain] = []
    profiles: dict[int, ArrivalProfile] = {}
    for i, item in enumerate(chain_node.sequence()):
        m = item.mapping()
        cid = _require(m, "id", item).integer(lo=0)
        if cid != i:
            m["id"].fail(f"chain ids must be dense and ordered; expected {i}, got {cid}")
        members_node = _require(m, "members", item)
        members = [x.integer(lo=0) for x in members_node.sequence()]
        tc_node = _require(m, "traffic_class", item)
        if tc_node.value not in TRAFFIC_CLASSES:
            tc_node.fail(f"unknown traffic class {tc_node.value!r}; expected one of {sorted(TRAFFIC_CLASSES)}")
        tc = TRAFFIC_CLASSES[tc_node.value]
        bound_node = _require(m, "latency_bound_ms", item)
        bound = bound_node.number(positive=True)
        if not tc.admits_latency(bound):
            bound_node.fail(f"{tc.name} latency bound must lie in {list(tc.latency_range_ms)} ms")
        if not tc.admits_error_rate(link_error_rate):
            item.fail(f"link_error_rate {link_error_rate} exceeds the {tc.name} bound {tc.error_rate_bound[1]}")
        rel_node = _require(m, "reliability_bound", item)
        rel = rel_node.number()
        if not 0 < rel < 1:
            rel_node.fail("reliability_bound must lie in (0, 1)")
        try:
            chain = ServiceChain(cid, tuple(members), bound, rel, tc.name)
            validate_chains([chain], vnfs)
        except TopologyError as exc:
            members_node.fail(str(exc))
        chains.append(chain)
        prof_node = _require(m, "profile", item)
        p = prof_node.mapping()
        try:
            profiles[cid] = ArrivalProfile(
                base_rate_ppm=_require(p, "base_rate_ppm", prof_node).number(positive=True),
                peaks=tuple(p["peaks"].triples()) if "peaks" in p and p["peaks"].value else (),
                spikes=tuple(p["spikes"].triples()) if "spikes" in p and p["spikes"].value else (),
                noise=p["noise"].boolean() if "noise" in p else True,
                noise_seed=p["noise_seed"].integer(lo=0) if "noise_seed" in p else cid,
            )
        except TrafficError as exc:
            prof_node.fail(str(exc))
    if not chains:
        chain_node.fail("at least one chain is required")

    return Scenario(
        name=name,
        servers=servers,
        vnfs=vnfs,
        chains=chains,
        profiles=profiles,
        seeds=seeds,
        backups=backups,
        link_error_rate=link_error_rate,
        rho_threshold=rho,
        buffer_minutes=buffer_minutes,
        processing_ms=processing,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


@dataclass
class Deployment:
    """A scenario turned into a concrete placed topology."""

    scenario: Scenario
    topology: Topology
    chains: tuple[ServiceChain, ...]

    @property
    def profiles(self) -> dict[int, ArrivalProfile]:
        return self.scenario.profiles


def build_graph(scenario: Scenario) -> ServerGraph:
    s = scenario.servers
    return ServerGraph.random(
        s.count,
        np.random.default_rng(scenario.seeds["topology"]),
        link_probability=s.link_probability,
        latency_ms=s.link_latency_ms,
        cpu_capacity=s.cpu_capacity,
        mttf_hours=s.mttf_hours,
    )


def mttf_threshold(scenario: Scenario, graph: ServerGraph) -> float:
    s = scenario.servers
    if s.mttf_threshold_hours is not None:
        return float(s.mttf_threshold_hours)
    return float(np.percentile(graph.mttf_hours, s.mttf_threshold_percentile))


def deploy(scenario: Scenario) -> Deployment:
    """Build the server graph, place every VNF and check the initial chains.

    Raises :class:`~oran_steer.topology.PlacementInfeasible` when greedy
    placement gets stuck, and :class:`TopologyError` when an initial chain
    breaks its latency bound or sits on a server below the MTTF threshold.
    """
    graph = build_graph(scenario)
    backups = [b.vnf for b in scenario.backups]
    request = PlacementRequest.from_chains(
        scenario.vnfs, scenario.chains, backups, {b.vnf.id: b.backup_of for b in scenario.backups}
    )
    placement: Placement = greedy_place(request, graph, np.random.default_rng(scenario.seeds["placement"]))
    topo = Topology(graph, tuple(scenario.vnfs), placement, mttf_threshold(scenario, graph), tuple(backups))
    chains = tuple(scenario.chains)
    check_chains(topo, chains)
    return Deployment(scenario, topo, chains)


def check_chains(topology: Topology, chains) -> None:
    """Raise TopologyError unless every chain meets its latency bound and MTTF threshold."""
    for chain in chains:
        lat = chain_latency(chain, topology.placement, topology.graph)
        if lat > chain.latency_bound_ms:
            raise TopologyError(f"chain {chain.id}: latency {lat:.3f} ms exceeds bound {chain.latency_bound_ms} ms")
        for m in chain.members:
            if topology.graph.mttf_hours[topology.placement.host(m)] < topology.mttf_threshold_hours:
                raise TopologyError(f"chain {chain.id}: VNF {m} hosted below the MTTF threshold")
