"""Traffic steering in O-RAN with per-VNF naive Bayes congestion prediction
and a deep Q-network steering agent."""

from .baseline import ReactivePolicy
from .env import NO_TS, EnvConfig, OranEnv, decode_action, encode_action, reward
from .scenario import Deployment, Scenario, deploy, load_scenario, parse_scenario
from .topology import (
    PlacementInfeasible,
    ServerGraph,
    ServiceChain,
    SteeringRejected,
    Topology,
    TopologyError,
    Vnf,
    VnfKind,
    apply_steering,
    greedy_place,
    steering_feasible,
)

__version__ = "0.1.0"

__all__ = [
    "NO_TS",
    "Deployment",
    "EnvConfig",
    "OranEnv",
    "PlacementInfeasible",
    "ReactivePolicy",
    "Scenario",
    "ServerGraph",
    "ServiceChain",
    "SteeringRejected",
    "Topology",
    "TopologyError",
    "Vnf",
    "VnfKind",
    "apply_steering",
    "decode_action",
    "deploy",
    "encode_action",
    "greedy_place",
    "load_scenario",
    "parse_scenario",
    "reward",
    "steering_feasible",
]
