"""Compare hand-written policies by discounted return and by queuing delay.

The steering reward pays for acting on congested VNFs, not for lowering
delay.  This script makes that visible at full scale: the policy with the
highest daily reward is not the one with the lowest delay.  The daily
reward is undiscounted; with gamma 0.95 the first minutes dominate.

    python demos/reward_vs_delay.py [traffic_seed]
"""

import sys

import numpy as np

from oran_steer import harness, nbc
from oran_steer.baseline import ReactivePolicy
from oran_steer.dqn import run_episode
from oran_steer.env import NO_TS, OranEnv, encode_action


def idle(env, obs):
    return NO_TS


def reactive(env):
    pol = ReactivePolicy(env.topology.service_rates)

    def act(env_, obs):
        stats = env_.last_stats
        return NO_TS if stats is None else pol.react(stats.records(), env_.action_mask(obs), stats.arrivals)

    return act


def proactive(env, obs):
    """Steer the first predicted-congested VNF to its least-utilised feasible peer."""
    n = env.n_vnfs
    feas = env.action_mask(obs)[1:].reshape(n, n)
    ratio = obs.loads / env.topology.service_rates
    for src in np.flatnonzero(obs.flags):
        dsts = np.flatnonzero(feas[src])
        if dsts.size:
            return encode_action(int(src), int(dsts[np.argmin(ratio[dsts])]), n)
    return NO_TS


def main(traffic_seed: int = 0) -> None:
    dep = harness.deploy(harness.generate_scenario("full", traffic_seed, 0))
    models = nbc.fit_day(harness.nbc_day(dep)).models
    day = traffic_seed + harness.EVAL_DAY_OFFSET
    print(f"{'policy':<10} {'mean delay (ms)':>16} {'daily reward':>13} {'steerings':>10}")
    for name, make in [("idle", lambda e: idle), ("reactive", reactive), ("proactive", lambda e: proactive)]:
        env = OranEnv(dep, models)
        rewards, delays = run_episode(env, make(env), day)
        moves = sum(r.accepted for r in env.trace)
        print(f"{name:<10} {delays.mean():>16.1f} {sum(rewards):>13.1f} {moves:>10}")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:]))
