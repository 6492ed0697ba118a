"""DQN on numpy: replay ring, target network, epsilon-greedy control.

The Q-network comes in two trunk shapes sharing one head layout, so the
raw-observation agent and the latent agent have the same representation
width and head capacity: raw mode learns a convolutional trunk shaped
exactly like the bottleneck encoder; latent mode consumes the frozen
encoder's code directly (the replay buffer then stores codes, not maps).

The update is the standard semi-gradient step: squared error on the
taken action's Q-value against r + gamma * max_a Q_target(s', a), with
the target network refreshed by hard copy every target_sync updates.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InsufficientDataError, ShapeMismatchError
from .util import substream


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.95
    lr: float = 1e-3
    batch: int = 64
    replay_capacity: int = 20000
    target_sync: int = 200  # gradient steps between hard target copies
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_frac: float = 0.5  # fraction of training over which eps decays
    warmup: int = 300  # buffered transitions required before updates
    update_every: int = 1  # env steps per gradient step
    hidden: tuple = (64, 64)

    def epsilon(self, episode: int, n_episodes: int) -> float:
        span = max(int(n_episodes * self.anneal_frac), 1)
        frac = min(episode / span, 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


class ReplayBuffer:
    """Preallocated FIFO ring with uniform sampling."""

    def __init__(self, capacity: int, obs_shape):
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)
        self.obs = np.zeros((capacity,) + self.obs_shape, dtype=np.float32)
        self.next_obs = np.zeros_like(self.obs)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.head = 0
        self.size = 0

    def push(self, obs, action, reward, next_obs, done):
        if np.shape(obs) != self.obs_shape:
            raise ShapeMismatchError(
                f"transition obs {np.shape(obs)} != buffer {self.obs_shape}")
        i = self.head
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.action[i] = action
        self.reward[i] = reward
        self.done[i] = 1.0 if done else 0.0
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        if self.size < batch:
            raise InsufficientDataError(
                f"replay holds {self.size} < batch {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return (self.obs[idx], self.action[idx], self.reward[idx],
                self.next_obs[idx], self.done[idx])


def build_q_network(rng, obs_shape, n_actions, hidden, conv_cfg=None) -> nn.Network:
    """Vector obs -> dense trunk; image obs -> encoder-shaped conv trunk.

    conv_cfg is an AEConfig-like object supplying conv_channels/latent so
    the raw trunk matches the bottleneck encoder's capacity exactly.
    """
    layers = []
    if len(obs_shape) == 1:
        n_in = obs_shape[0]
    else:
        if conv_cfg is None:
            raise ShapeMismatchError("image observations need conv_cfg")
        cc = conv_cfg.conv_channels
        if len(obs_shape) == 4:  # (C, T, H, W)
            c, t, h, w = obs_shape
            layers += [nn.Conv3d(rng, c, cc[0], name="q_c1"), nn.Activation("relu"),
                       nn.Conv3d(rng, cc[0], cc[1], name="q_c2"), nn.Activation("relu")]
            feat = cc[1] * (t - 2) * (h // 4) * (w // 4)
        elif len(obs_shape) == 3:  # (C, H, W)
            c, h, w = obs_shape
            layers += [nn.Conv2d(rng, c, cc[0], name="q_c1"), nn.Activation("relu"),
                       nn.Conv2d(rng, cc[0], cc[1], name="q_c2"), nn.Activation("relu")]
            feat = cc[1] * (h // 4) * (w // 4)
        else:
            raise ShapeMismatchError(f"unsupported observation shape {obs_shape}")
        layers += [nn.Flatten(),
                   nn.Dense(rng, feat, conv_cfg.latent, name="q_code"),
                   nn.Activation("sigmoid")]
        n_in = conv_cfg.latent
    for i, width in enumerate(hidden):
        layers += [nn.Dense(rng, n_in, width, name=f"q_h{i}"), nn.Activation("relu")]
        n_in = width
    layers += [nn.Dense(rng, n_in, n_actions, name="q_out"), nn.Activation("identity")]
    return nn.Network(layers)


def q_loss_and_grad(net: nn.Network, obs, actions, targets, precise=False):
    """Mean squared TD error on taken actions; returns (loss, dQ matrix)."""
    q = np.asarray(net.forward(obs, precise=precise), dtype=np.float64)
    b = q.shape[0]
    taken = q[np.arange(b), actions]
    err = taken - np.asarray(targets, dtype=np.float64)
    dq = np.zeros_like(q)
    dq[np.arange(b), actions] = 2.0 * err / b
    return float((err ** 2).mean()), dq


class DQNAgent:
    """Q-learning agent; observations are whatever the caller feeds it."""

    def __init__(self, obs_shape, n_actions, cfg: DQNConfig = None, seed=0,
                 conv_cfg=None):
        self.cfg = cfg or DQNConfig()
        self.n_actions = int(n_actions)
        self.obs_shape = tuple(obs_shape)
        init_rng = substream(seed, "dqn-init")
        self.net = build_q_network(init_rng, self.obs_shape, self.n_actions,
                                   self.cfg.hidden, conv_cfg)
        tgt_rng = substream(seed, "dqn-init")  # same draws, identical start
        self.target = build_q_network(tgt_rng, self.obs_shape, self.n_actions,
                                      self.cfg.hidden, conv_cfg)
        self.sync_target()
        self.buffer = ReplayBuffer(self.cfg.replay_capacity, self.obs_shape)
        self.rng = substream(seed, "dqn-policy")
        self.sample_rng = substream(seed, "dqn-replay")
        self.grad_steps = 0
        self.env_steps = 0
        self.epsilon = self.cfg.eps_start

    def q_values(self, obs) -> np.ndarray:
        q = self.net.forward(np.asarray(obs, dtype=np.float32)[None])
        return np.asarray(q[0], dtype=np.float64)

    def act(self, obs, greedy=False) -> int:
        if not greedy and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions))
        return int(np.argmax(self.q_values(obs)))

    def observe(self, obs, action, reward, next_obs, done):
        self.buffer.push(obs, action, reward, next_obs, done)
        self.env_steps += 1

    def ready(self) -> bool:
        return (self.buffer.size >= max(self.cfg.warmup, self.cfg.batch)
                and self.env_steps % self.cfg.update_every == 0)

    def update(self) -> float:
        cfg = self.cfg
        obs, act, rew, nxt, done = self.buffer.sample(self.sample_rng, cfg.batch)
        q_next = np.asarray(self.target.forward(nxt), dtype=np.float64)
        targets = rew.astype(np.float64) + cfg.gamma * (1.0 - done) * q_next.max(axis=1)
        self.net.zero_grad()
        loss, dq = q_loss_and_grad(self.net, obs, act, targets)
        self.net.backward(dq)
        nn.sgd_step(self.net.params(), cfg.lr)
        self.grad_steps += 1
        if self.grad_steps % cfg.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self):
        for pt, ps in zip(self.target.params(), self.net.params()):
            pt.value = ps.value.copy()

    # -- persistence ----------------------------------------------------

    def save(self, path, extra_header=None):
        header = {"kind": "dqn", "obs_shape": list(self.obs_shape),
                  "n_actions": self.n_actions}
        if extra_header:
            header.update(extra_header)
        nn.save_checkpoint(path, header, nn.network_arrays(self.net))

    def load_weights(self, path):
        header, arrays = nn.load_checkpoint(path)
        if header.get("kind") != "dqn":
            raise ShapeMismatchError(f"{path} is not a policy checkpoint")
        nn.restore_network(self.net, arrays)
        self.sync_target()
        return header
