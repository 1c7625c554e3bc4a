import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from oran_steer.baseline import ReactivePolicy
from oran_steer.env import NO_TS, OranEnv, decode_action, encode_action
from oran_steer.harness import run_baseline_arm
from oran_steer.traffic import TelemetryRecord


def records(loads, labels, minute=0):
    return [TelemetryRecord(v, minute, float(a), 0.0, int(c)) for v, (a, c) in enumerate(zip(loads, labels))]


def full_mask(n):
    m = np.ones(n * n + 1, dtype=bool)
    for v in range(n):
        m[encode_action(v, v, n)] = False
    return m


def oracle(rates, loads, labels, mask):
    """Scan every congested source in priority order and every destination."""
    n = len(rates)
    ratio = np.asarray(loads) / rates
    hot = sorted((v for v in range(n) if labels[v]), key=lambda v: (-ratio[v], v))
    for src in hot:
        best = None
        for dst in range(n):
            if mask[encode_action(src, dst, n)] and (best is None or ratio[dst] < ratio[best]):
                best = dst
        if best is not None:
            return encode_action(src, best, n)
    return NO_TS


class TestReact:
    def test_nothing_congested(self):
        pol = ReactivePolicy(np.full(4, 100.0))
        assert pol.react(records([10, 20, 30, 40], [0, 0, 0, 0]), full_mask(4)) == NO_TS

    def test_no_records(self):
        assert ReactivePolicy(np.ones(2)).react([], full_mask(2)) == NO_TS

    def test_moves_to_least_utilised(self):
        pol = ReactivePolicy(np.full(4, 100.0))
        a = pol.react(records([95, 50, 10, 30], [1, 0, 0, 0]), full_mask(4))
        assert decode_action(a, 4) == (0, 2)

    def test_hottest_source_first(self):
        pol = ReactivePolicy(np.array([100.0, 100.0, 100.0]))
        a = pol.react(records([95, 99, 10], [1, 1, 0]), full_mask(3))
        assert decode_action(a, 3) == (1, 2)

    def test_falls_back_to_next_source(self):
        pol = ReactivePolicy(np.full(3, 100.0))
        mask = full_mask(3)
        mask[[encode_action(1, d, 3) for d in range(3)]] = False
        a = pol.react(records([95, 99, 10], [1, 1, 0]), mask)
        assert decode_action(a, 3) == (0, 2)

    def test_cooldown(self):
        pol = ReactivePolicy(np.full(3, 100.0), cooldown=5)
        hot = ([95, 10, 10], [1, 0, 0])
        assert pol.react(records(*hot, minute=0), full_mask(3)) != NO_TS
        assert pol.react(records(*hot, minute=4), full_mask(3)) == NO_TS
        assert pol.react(records(*hot, minute=5), full_mask(3)) != NO_TS
        pol.reset()
        assert pol.react(records(*hot, minute=6), full_mask(3)) != NO_TS

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        rates = rng.integers(50, 200, n).astype(float)
        loads = rng.integers(0, 300, n).astype(float)
        labels = (rng.random(n) < 0.4).astype(int)
        mask = rng.random(n * n + 1) < 0.5
        mask[0] = True
        got = ReactivePolicy(rates).react(records(loads, labels), mask, loads)
        assert got == oracle(rates, loads, labels, mask)
        if got != NO_TS:
            assert mask[got]


class TestOnEnvironment:
    def test_reacts_only_after_observed_congestion(self, full_deployment, full_models):
        env = OranEnv(full_deployment, full_models)
        arm = run_baseline_arm(env, day=3)
        assert arm.steerings > 0
        assert arm.trace[0].action_index == NO_TS
        # every steer follows a minute in which its source was labelled congested
        env.reset(3)
        labels = []
        for rec in arm.trace:
            out = env.step(rec.action_index)
            labels.append(out.stats.congested.copy())
        for rec in arm.trace:
            if rec.action_index != NO_TS:
                assert labels[rec.t - 1][rec.src] == 1
