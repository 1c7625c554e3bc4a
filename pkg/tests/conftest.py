import numpy as np
import pytest

from oran_steer import harness, nbc
from oran_steer.scenario import deploy
from oran_steer.topology import Placement, ServerGraph, ServiceChain, Topology, Vnf, VnfKind


def line_graph(latencies, mttf=None, cpu=None):
    """Servers 0..n-1 linked in a line with the given hop latencies."""
    n = len(latencies) + 1
    adj = np.zeros((n, n), dtype=np.int8)
    lat = np.full((n, n), np.inf)
    for i, l in enumerate(latencies):
        adj[i, i + 1] = adj[i + 1, i] = 1
        lat[i, i + 1] = lat[i + 1, i] = l
    return ServerGraph(
        adj,
        lat,
        np.full(n, 1000.0) if mttf is None else np.asarray(mttf, float),
        np.full(n, 100.0) if cpu is None else np.asarray(cpu, float),
    )


def complete_graph(n, latency=0.1, mttf=None, cpu=None):
    adj = np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8)
    lat = np.where(adj == 1, latency, np.inf)
    return ServerGraph(
        adj,
        lat,
        np.full(n, 1000.0) if mttf is None else np.asarray(mttf, float),
        np.full(n, 100.0) if cpu is None else np.asarray(cpu, float),
    )


def two_chain_topology(mttf=(1000.0, 1000.0, 1000.0, 1000.0), threshold=500.0, rates=1000.0):
    """Six VNFs (two of each kind) on four fully linked servers, two chains."""
    kinds = [VnfKind.NEAR_RT_RIC, VnfKind.NEAR_RT_RIC, VnfKind.OCU, VnfKind.OCU, VnfKind.ODU, VnfKind.ODU]
    vnfs = tuple(Vnf(i, k, rates, 1.0) for i, k in enumerate(kinds))
    graph = complete_graph(4, 0.1, mttf=mttf)
    placement = Placement({0: 0, 1: 1, 2: 0, 3: 2, 4: 0, 5: 3})
    topo = Topology(graph, vnfs, placement, threshold)
    chains = (ServiceChain(0, (0, 2, 4), 5.0, 1e-4), ServiceChain(1, (1, 3, 5), 5.0, 1e-4))
    return topo, chains


@pytest.fixture(scope="session")
def full_scenario():
    return harness.generate_scenario("full", 0, 0)


@pytest.fixture(scope="session")
def full_deployment(full_scenario):
    return deploy(full_scenario)


@pytest.fixture(scope="session")
def full_day(full_deployment):
    return harness.nbc_day(full_deployment)


@pytest.fixture(scope="session")
def full_models(full_day):
    return nbc.fit_day(full_day).models


@pytest.fixture(scope="session")
def tiny_deployment():
    return deploy(harness.generate_scenario("tiny", 0, 0))


@pytest.fixture(scope="session")
def tiny_models(tiny_deployment):
    return nbc.fit_day(harness.nbc_day(tiny_deployment)).models


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
