import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oran_steer.dqn import (
    HIDDEN_LAYERS,
    Adam,
    Batch,
    DqnConfig,
    DqnError,
    FeatureEncoder,
    QNetwork,
    ReplayBuffer,
    convergence_episode,
    forward,
    load_checkpoint,
    save_checkpoint,
    select_action,
    td_loss_and_grads,
    td_targets,
    td_update,
    train,
)
from oran_steer.env import OranEnv


def loop_forward(net, x):
    """Scalar-loop forward pass."""
    h = list(x)
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(w.shape[1]):
            z = b[j] + sum(h[i] * w[i, j] for i in range(w.shape[0]))
            out.append(max(z, 0.0) if li < len(net.weights) - 1 else z)
        h = out
    return np.array(h)


def random_batch(rng, n, d, a, masks=True):
    return Batch(
        rng.normal(size=(n, d)),
        rng.integers(0, a, n),
        rng.normal(size=n),
        rng.normal(size=(n, d)),
        rng.random(n) < 0.2,
        (rng.random((n, a)) < 0.7) | (np.arange(a) == 0) if masks else None,
    )


class TestNetwork:
    def test_architecture(self):
        net = QNetwork.build(44, 442, np.random.default_rng(0))
        assert net.sizes == [44, *HIDDEN_LAYERS, 442]
        assert all(not b.any() for b in net.biases)
        bound = np.sqrt(6 / 44)
        assert np.abs(net.weights[0]).max() <= bound

    def test_forward_matches_loop(self):
        rng = np.random.default_rng(1)
        net = QNetwork.build(5, 7, rng, hidden=(4, 6, 3))
        net.biases = [rng.normal(size=b.shape) for b in net.biases]
        for _ in range(5):
            x = rng.normal(size=5)
            np.testing.assert_allclose(forward(net, x), loop_forward(net, x), rtol=1e-12, atol=1e-12)

    def test_zero_network(self):
        net = QNetwork.build(3, 4, np.random.default_rng(0))
        net.weights = [np.zeros_like(w) for w in net.weights]
        np.testing.assert_array_equal(forward(net, np.ones((2, 3))), np.zeros((2, 4)))

    def test_shape_errors(self):
        net = QNetwork.build(3, 4, np.random.default_rng(0))
        with pytest.raises(DqnError):
            forward(net, np.ones(5))
        with pytest.raises(DqnError):
            QNetwork([np.ones((3, 4)), np.ones((5, 2))], [np.ones(4), np.ones(2)])


class TestTd:
    def test_targets_gamma_zero_are_rewards(self):
        rng = np.random.default_rng(0)
        net = QNetwork.build(4, 5, rng)
        b = random_batch(rng, 16, 4, 5)
        np.testing.assert_array_equal(td_targets(net, b, 0.0), b.rewards)

    def test_targets_respect_mask_and_done(self):
        rng = np.random.default_rng(0)
        net = QNetwork.build(4, 5, rng)
        b = random_batch(rng, 64, 4, 5)
        q = forward(net, b.next_states)
        want = b.rewards + 0.9 * np.array(
            [0.0 if d else max(q[i, j] for j in range(5) if m[j]) for i, (d, m) in enumerate(zip(b.dones, b.next_masks))]
        )
        np.testing.assert_allclose(td_targets(net, b, 0.9), want, rtol=1e-14)

    def test_empty_batch(self):
        net = QNetwork.build(2, 3, np.random.default_rng(0))
        b = Batch(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0), np.zeros((0, 2)), np.zeros(0, bool))
        with pytest.raises(DqnError, match="empty"):
            td_loss_and_grads(net, net, b, 0.9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = QNetwork.build(4, 5, rng, hidden=(6, 5, 4))
        net.biases = [rng.normal(scale=0.5, size=b.shape) for b in net.biases]
        target = QNetwork.build(4, 5, rng, hidden=(6, 5, 4))
        b = random_batch(rng, 8, 4, 5)
        _, grads = td_loss_and_grads(net, target, b, 0.9)
        h = 1e-6
        for p, g in zip(net.params(), grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up, _ = td_loss_and_grads(net, target, b, 0.9)
                p[idx] = old - h
                down, _ = td_loss_and_grads(net, target, b, 0.9)
                p[idx] = old
                assert abs((up - down) / (2 * h) - g[idx]) <= 1e-5 * max(1.0, abs(g[idx]))

    def test_sgd_step_reduces_loss(self):
        rng = np.random.default_rng(3)
        net = QNetwork.build(4, 5, rng)
        b = random_batch(rng, 32, 4, 5)
        frozen = net.copy()
        before, _ = td_loss_and_grads(net, frozen, b, 0.9)
        td_update(net, frozen, b, 0.9, lr=1e-3)
        after, _ = td_loss_and_grads(net, frozen, b, 0.9)
        assert after < before

    def test_gradient_clip_bounds_step(self):
        rng = np.random.default_rng(4)
        net = QNetwork.build(4, 5, rng)
        b = random_batch(rng, 32, 4, 5)
        b.rewards *= 1e4
        old = [p.copy() for p in net.params()]
        td_update(net, net.copy(), b, 0.9, lr=1.0, grad_clip=2.0)
        step = np.sqrt(sum(((p - o) ** 2).sum() for p, o in zip(net.params(), old)))
        assert step == pytest.approx(2.0, rel=1e-9)

    def test_adam_first_step_is_lr_sign(self):
        p = [np.array([1.0, -2.0])]
        Adam(p, lr=0.1).step(p, [np.array([3.0, -0.5])])
        np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-7)


class TestReplayBuffer:
    def test_ring_keeps_latest(self):
        buf = ReplayBuffer(3, 1, 2)
        for i in range(5):
            buf.push([i], 0, float(i), [i + 1], False)
        assert len(buf) == 3
        assert sorted(buf.rewards) == [2.0, 3.0, 4.0]

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(10, 1, 2)
        for i in range(10):
            buf.push([i], 1, float(i), [i], False)
        b = buf.sample(10, np.random.default_rng(0))
        assert sorted(b.rewards) == list(range(10))
        with pytest.raises(DqnError):
            buf.sample(11, np.random.default_rng(0))

    def test_capacity_positive(self):
        with pytest.raises(DqnError):
            ReplayBuffer(0, 1, 1)


class TestSelectAction:
    def test_exploration_uniform_over_mask(self):
        net = QNetwork.build(2, 8, np.random.default_rng(0))
        mask = np.array([1, 0, 1, 1, 0, 1, 1, 0], bool)
        rng = np.random.default_rng(0)
        picks = [select_action(net, np.zeros(2), mask, 1.0, rng) for _ in range(8000)]
        assert set(picks) <= set(np.flatnonzero(mask))
        counts = np.bincount(picks, minlength=8)[mask]
        assert stats.chisquare(counts).pvalue > 1e-3

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_never_picks_masked(self, seed, eps):
        rng = np.random.default_rng(seed)
        net = QNetwork.build(3, 10, rng)
        mask = rng.random(10) < 0.5
        mask[0] = True
        a = select_action(net, rng.normal(size=3), mask, eps, rng)
        assert mask[a]

    def test_greedy_is_masked_argmax(self):
        rng = np.random.default_rng(2)
        net = QNetwork.build(3, 10, rng)
        x = rng.normal(size=3)
        q = forward(net, x)
        mask = np.ones(10, bool)
        mask[np.argmax(q)] = False
        a = select_action(net, x, mask, 0.0, rng)
        assert a == int(np.argsort(q)[-2])


class TestEncoder:
    def test_range_and_time(self, full_deployment, full_models):
        env = OranEnv(full_deployment, full_models)
        enc = FeatureEncoder(env.topology.service_rates, 7, include_congestion_matrix=True)
        obs = env.reset(0)
        for _ in range(360):
            obs = env.step(0).observation
        f = enc.encode(obs)
        assert f.shape == (enc.dim,) and enc.dim == 2 * 21 + 2 + 7 * 21
        assert f.min() >= -1 and f.max() <= 1
        np.testing.assert_allclose(f[42:44], [1.0, 0.0], atol=1e-12)  # minute 360 is a quarter turn


class TestTraining:
    def test_convergence_episode(self):
        assert convergence_episode([0, 0, 10, 10, 10, 10, 10, 10, 10, 10], window=1) == 2
        assert convergence_episode([]) == 0

    def test_one_episode_and_checkpoint(self, tiny_deployment, tiny_models, tmp_path):
        env = OranEnv(tiny_deployment, tiny_models)
        cfg = DqnConfig(episodes=2, warmup=64)
        res = train(env, cfg, seed=0)
        assert res.transitions == [1440, 1440]
        assert np.isfinite(res.mean_loss).all()
        save_checkpoint(tmp_path / "c.json", res, note="x")
        ck = load_checkpoint(tmp_path / "c.json", n_vnfs=3, n_chains=1)
        for a, b in zip(res.net.params(), ck.net.params()):
            np.testing.assert_array_equal(a, b)
        assert ck.config == cfg and ck.meta == {"note": "x"} and ck.returns == res.returns
        with pytest.raises(DqnError, match="scenario has 21 VNFs"):
            load_checkpoint(tmp_path / "c.json", n_vnfs=21)

    def test_training_is_seeded(self, tiny_deployment, tiny_models):
        env = OranEnv(tiny_deployment, tiny_models)
        cfg = DqnConfig(episodes=1, warmup=64)
        a, b = train(env, cfg, seed=4), train(env, cfg, seed=4)
        for p, q in zip(a.net.params(), b.net.params()):
            np.testing.assert_array_equal(p, q)

    def test_unknown_optimizer(self, tiny_deployment, tiny_models):
        with pytest.raises(DqnError):
            train(OranEnv(tiny_deployment, tiny_models), DqnConfig(episodes=1, optimizer="rmsprop"))

    def test_greedy_curve_settles_on_toy(self, tiny_deployment, tiny_models):
        env = OranEnv(tiny_deployment, tiny_models)
        res = train(env, DqnConfig(episodes=10, use_action_mask=False), seed=0, eval_day=100_000)
        g = np.array(res.greedy_returns)
        trail = np.array([g[max(0, i - 4) : i + 1].mean() for i in range(len(g))])
        assert (np.diff(trail[res.convergence_episode() :]) >= 0).all()
