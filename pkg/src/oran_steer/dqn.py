"""Deep Q-network agent written directly on numpy.

The Q-function is an MLP with three ReLU hidden layers (24, 48, 24) and one
linear output per action.  Training uses uniform experience replay, an
optional target network and epsilon-greedy exploration restricted to the
environment's feasibility mask.  Everything runs in float64.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import Observation, OranEnv, discounted_return

log = logging.getLogger(__name__)

HIDDEN_LAYERS = (24, 48, 24)
CHECKPOINT_VERSION = 1


class DqnError(ValueError):
    pass


class QNetwork:
    """Fully connected ReLU network; ``weights[i]`` has shape ``(fan_in, fan_out)``."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DqnError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DqnError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DqnError(f"layer {i}: input width {w.shape[0]} != previous output width")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def build(cls, input_dim: int, n_actions: int, rng: np.random.Generator, hidden=HIDDEN_LAYERS) -> "QNetwork":
        """Uniform fan-in initialisation, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
        sizes = [input_dim, *hidden, n_actions]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, X) -> np.ndarray:
        return forward(self, X)


def forward(net: QNetwork, features) -> np.ndarray:
    """Q-values for one feature vector ``(d,)`` or a batch ``(n, d)``."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != net.sizes[0]:
        raise DqnError(f"feature length {X.shape[-1]} does not match input width {net.sizes[0]}")
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: QNetwork, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    acts, pre = [X], []
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return h, acts, pre


def _backward(net: QNetwork, acts, pre, dout: np.ndarray) -> list[np.ndarray]:
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    delta = dout
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0)
    return [g for wb in zip(grads_w, grads_b) for g in wb]


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    next_masks: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)


def td_targets(target_net: QNetwork, batch: Batch, gamma: float) -> np.ndarray:
    """``r + gamma * max_a' Q_target(s', a')``, or ``r`` on terminal transitions."""
    q_next = forward(target_net, batch.next_states)
    if batch.next_masks is not None:
        q_next = np.where(batch.next_masks, q_next, -np.inf)
    best = q_next.max(axis=1)
    return batch.rewards + gamma * np.where(batch.dones, 0.0, best)


def td_loss_and_grads(net: QNetwork, target_net: QNetwork, batch: Batch, gamma: float) -> tuple[float, list[np.ndarray]]:
    """Mean squared TD error on the taken actions and its gradient (targets held fixed)."""
    if len(batch) == 0:
        raise DqnError("empty batch")
    if not 0 <= gamma < 1:
        raise DqnError("gamma must lie in [0, 1)")
    y = td_targets(target_net, batch, gamma)
    q, acts, pre = _forward_cache(net, np.asarray(batch.states, dtype=np.float64))
    rows = np.arange(len(batch))
    err = q[rows, batch.actions] - y
    dout = np.zeros_like(q)
    dout[rows, batch.actions] = 2.0 * err / len(batch)
    return float(np.mean(err**2)), _backward(net, acts, pre, dout)


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= scale * m / (np.sqrt(v) + self.eps)


def td_update(
    net: QNetwork,
    target_net: QNetwork,
    batch: Batch,
    gamma: float = 0.95,
    lr: float = 0.005,
    optimizer: Adam | None = None,
    grad_clip: float | None = None,
) -> float:
    """One gradient step on the TD loss; updates ``net`` in place and returns the loss.

    Without an optimizer this is plain gradient descent with step ``lr``.
    """
    if not lr > 0:
        raise DqnError("lr must be positive")
    loss, grads = td_loss_and_grads(net, target_net, batch, gamma)
    if grad_clip is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > grad_clip:
            grads = [g * (grad_clip / norm) for g in grads]
    params = net.params()
    if optimizer is None:
        for p, g in zip(params, grads):
            p -= lr * g
    else:
        optimizer.step(params, grads)
    return loss


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int, store_masks: bool = True):
        if capacity < 1:
            raise DqnError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.next_masks = np.ones((capacity, n_actions), dtype=bool) if store_masks else None
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def push(self, state, action, reward, next_state, done, next_mask=None) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        if self.next_masks is not None:
            self.next_masks[i] = True if next_mask is None else next_mask
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self.size:
            raise DqnError(f"cannot sample {batch_size} from {self.size} transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
            None if self.next_masks is None else self.next_masks[idx],
        )


@dataclass
class FeatureEncoder:
    """Observation -> features in [-1, 1].

    Default layout: per-VNF congestion bit, per-VNF load as a fraction of
    twice its service rate (clipped), then ``sin`` and ``cos`` of the time of
    day.  ``include_congestion_matrix`` appends the flattened matrix C.
    """

    service_rates: np.ndarray
    n_chains: int
    include_congestion_matrix: bool = False

    def __post_init__(self):
        self.service_rates = np.asarray(self.service_rates, dtype=float)

    @property
    def n_vnfs(self) -> int:
        return len(self.service_rates)

    @property
    def dim(self) -> int:
        return 2 * self.n_vnfs + 2 + (self.n_chains * self.n_vnfs if self.include_congestion_matrix else 0)

    def encode(self, obs: Observation) -> np.ndarray:
        phase = 2 * np.pi * obs.t / 1440.0
        parts = [
            obs.flags.astype(float),
            np.clip(obs.loads / (2 * self.service_rates), 0.0, 1.0),
            [np.sin(phase), np.cos(phase)],
        ]
        if self.include_congestion_matrix:
            parts.append(obs.congestion.ravel().astype(float))
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {
            "service_rates": self.service_rates.tolist(),
            "n_chains": self.n_chains,
            "include_congestion_matrix": self.include_congestion_matrix,
        }


def select_action(net: QNetwork, features, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the feasible actions; greedy ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise DqnError("epsilon must lie in [0, 1]")
    mask = np.asarray(mask, dtype=bool)
    if rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(mask)))
    q = forward(net, features)
    return int(np.argmax(np.where(mask, q, -np.inf)))


@dataclass
class DqnConfig:
    episodes: int = 50
    gamma: float = 0.95
    lr: float = 0.005
    optimizer: str = "sgd"  # or "adam"
    batch_size: int = 32
    buffer_capacity: int = 10_000
    warmup: int = 500
    train_every: int = 1
    target_sync_steps: int = 250
    use_target_network: bool = True
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.995  # per episode, multiplicative
    use_action_mask: bool = True
    grad_clip: float | None = 10.0  # global gradient-norm clip; None disables
    include_congestion_matrix: bool = False
    hidden: tuple[int, ...] = HIDDEN_LAYERS

    def epsilon(self, episode: int) -> float:
        return max(self.epsilon_min, self.epsilon_start * self.epsilon_decay**episode)


@dataclass
class TrainResult:
    net: QNetwork
    encoder: FeatureEncoder
    config: DqnConfig
    returns: list[float] = field(default_factory=list)  # undiscounted, per episode
    discounted: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    transitions: list[int] = field(default_factory=list)
    greedy_returns: list[float] = field(default_factory=list)

    def convergence_episode(self, window: int = 5, tolerance: float = 0.05) -> int:
        return convergence_episode(self.greedy_returns or self.returns, window, tolerance)


def convergence_episode(curve: Sequence[float], window: int = 5, tolerance: float = 0.05) -> int:
    """First episode from which the trailing mean stays within ``tolerance`` of its final value.

    The band is relative to the spread of the trailing-mean curve.
    """
    c = np.asarray(curve, dtype=float)
    if c.size == 0:
        return 0
    trail = np.array([c[max(0, i - window + 1) : i + 1].mean() for i in range(c.size)])
    band = tolerance * max(np.ptp(trail), 1e-12)
    inside = np.abs(trail - trail[-1]) <= band
    i = c.size - 1
    while i > 0 and inside[i - 1]:
        i -= 1
    return int(i)


def greedy_policy(net: QNetwork, encoder: FeatureEncoder, use_mask: bool = True) -> Callable[[OranEnv, Observation], int]:
    def act(env: OranEnv, obs: Observation) -> int:
        mask = env.action_mask(obs) if use_mask else np.ones(env.n_actions, dtype=bool)
        q = forward(net, encoder.encode(obs))
        return int(np.argmax(np.where(mask, q, -np.inf)))

    return act


def run_episode(env: OranEnv, policy: Callable[[OranEnv, Observation], int], seed: int) -> tuple[list[float], np.ndarray]:
    """Roll one day with ``policy``; returns rewards and the (1440, V) delay matrix."""
    obs = env.reset(seed)
    rewards, delays = [], []
    done = False
    while not done:
        out = env.step(policy(env, obs))
        rewards.append(out.reward)
        delays.append(out.delays_ms)
        obs, done = out.observation, out.done
    return rewards, np.array(delays)


def train(
    env: OranEnv,
    config: DqnConfig | None = None,
    seed: int = 0,
    days: Sequence[int] | None = None,
    eval_day: int | None = None,
    callback: Callable[[int, TrainResult], bool | None] | None = None,
) -> TrainResult:
    """Train a Q-network on ``env``.

    ``days[e]`` is the traffic realisation of episode ``e`` (``seed + e`` by
    default).  With ``eval_day`` a greedy rollout after every episode fills
    ``greedy_returns``.  ``callback(episode, result)`` may return True to stop.
    """
    cfg = config or DqnConfig()
    rng = np.random.default_rng(seed)
    deployment = env.deployment
    encoder = FeatureEncoder(env.topology.service_rates, len(deployment.chains), cfg.include_congestion_matrix)
    net = QNetwork.build(encoder.dim, env.n_actions, rng, cfg.hidden)
    target = net.copy() if cfg.use_target_network else net
    opt = Adam(net.params(), cfg.lr) if cfg.optimizer == "adam" else None
    if cfg.optimizer not in ("adam", "sgd"):
        raise DqnError(f"unknown optimizer {cfg.optimizer!r}")
    buffer = ReplayBuffer(cfg.buffer_capacity, encoder.dim, env.n_actions)
    result = TrainResult(net, encoder, cfg)
    all_ones = np.ones(env.n_actions, dtype=bool)
    days = list(days) if days is not None else [seed + e for e in range(cfg.episodes)]
    steps = 0
    for episode in range(cfg.episodes):
        eps = cfg.epsilon(episode)
        obs = env.reset(days[episode % len(days)])
        s = encoder.encode(obs)
        mask = env.action_mask() if cfg.use_action_mask else all_ones
        rewards, losses, pushed = [], [], 0
        done = False
        while not done:
            a = select_action(net, s, mask, eps, rng)
            out = env.step(a)
            s2 = encoder.encode(out.observation)
            done = out.done
            mask2 = env.action_mask() if (cfg.use_action_mask and not done) else all_ones
            buffer.push(s, a, out.reward, s2, done, mask2)
            pushed += 1
            steps += 1
            rewards.append(out.reward)
            if len(buffer) >= max(cfg.warmup, cfg.batch_size) and steps % cfg.train_every == 0:
                batch = buffer.sample(cfg.batch_size, rng)
                losses.append(td_update(net, target, batch, cfg.gamma, cfg.lr, opt, cfg.grad_clip))
            if cfg.use_target_network and steps % cfg.target_sync_steps == 0:
                target = net.copy()
            s, mask = s2, mask2
        result.returns.append(float(np.sum(rewards)))
        result.discounted.append(discounted_return(rewards, cfg.gamma))
        result.mean_loss.append(float(np.mean(losses)) if losses else float("nan"))
        result.transitions.append(pushed)
        if eval_day is not None:
            greedy_rewards, _ = run_episode(env, greedy_policy(net, encoder, cfg.use_action_mask), eval_day)
            result.greedy_returns.append(float(np.sum(greedy_rewards)))
        log.info(
            "episode %d eps=%.3f return=%.1f loss=%.4g%s", episode, eps, result.returns[-1], result.mean_loss[-1],
            f" greedy={result.greedy_returns[-1]:.1f}" if eval_day is not None else "",
        )
        if callback is not None and callback(episode, result):
            break
    return result


def save_checkpoint(path: str | Path, result: TrainResult, **meta) -> None:
    net = result.net
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "kind": "oran_steer.dqn",
        "layer_sizes": net.sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "encoder": result.encoder.to_dict(),
        "hyperparameters": asdict(result.config),
        "returns": result.returns,
        "greedy_returns": result.greedy_returns,
        "meta": meta,
    }
    Path(path).write_text(json.dumps(doc))


@dataclass
class Checkpoint:
    net: QNetwork
    encoder: FeatureEncoder
    config: DqnConfig
    returns: list[float]
    greedy_returns: list[float]
    meta: dict


def load_checkpoint(path: str | Path, n_vnfs: int | None = None, n_chains: int | None = None) -> Checkpoint:
    """Load a checkpoint, checking its shapes against the scenario when given."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_VERSION or doc.get("kind") != "oran_steer.dqn":
        raise DqnError(f"{path}: not a version-{CHECKPOINT_VERSION} DQN checkpoint")
    net = QNetwork([np.array(w) for w in doc["weights"]], [np.array(b) for b in doc["biases"]])
    if net.sizes != doc["layer_sizes"]:
        raise DqnError(f"{path}: layer sizes {net.sizes} disagree with header {doc['layer_sizes']}")
    enc = doc["encoder"]
    encoder = FeatureEncoder(np.array(enc["service_rates"]), enc["n_chains"], enc["include_congestion_matrix"])
    if n_vnfs is not None and (encoder.n_vnfs != n_vnfs or net.sizes[-1] != n_vnfs * n_vnfs + 1):
        raise DqnError(
            f"{path}: checkpoint expects {encoder.n_vnfs} VNFs ({net.sizes[-1]} actions); "
            f"scenario has {n_vnfs} VNFs ({n_vnfs * n_vnfs + 1} actions)"
        )
    if n_chains is not None and encoder.include_congestion_matrix and encoder.n_chains != n_chains:
        raise DqnError(f"{path}: checkpoint expects {encoder.n_chains} chains; scenario has {n_chains}")
    if net.sizes[0] != encoder.dim:
        raise DqnError(f"{path}: input width {net.sizes[0]} != encoder dimension {encoder.dim}")
    hp = dict(doc["hyperparameters"])
    hp["hidden"] = tuple(hp.get("hidden", HIDDEN_LAYERS))
    return Checkpoint(net, encoder, DqnConfig(**hp), doc.get("returns", []), doc.get("greedy_returns", []), doc.get("meta", {}))
