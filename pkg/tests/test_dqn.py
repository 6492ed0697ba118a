from types import SimpleNamespace

import numpy as np
import pytest

from latentdrive import nn
from latentdrive.dqn import (DQNAgent, DQNConfig, ReplayBuffer,
                             build_q_network, q_loss_and_grad)
from latentdrive.errors import InsufficientDataError, ShapeMismatchError
from latentdrive.util import substream

from conftest import assert_close


def test_epsilon_schedule():
    cfg = DQNConfig(eps_start=1.0, eps_end=0.05, anneal_frac=0.5)
    assert cfg.epsilon(0, 100) == 1.0
    assert_close(cfg.epsilon(25, 100), 0.525, 1e-12)
    assert_close(cfg.epsilon(50, 100), 0.05, 1e-12)
    assert_close(cfg.epsilon(99, 100), 0.05, 1e-12)  # clamps after the span
    flat = DQNConfig(anneal_frac=0.0)  # span floor of one episode
    assert flat.epsilon(0, 10) == 1.0
    assert_close(flat.epsilon(1, 10), 0.05, 1e-12)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, (2,))
    for i in range(5):
        buf.push(np.full(2, float(i)), i, float(i), np.full(2, float(i)), False)
    assert buf.size == 3 and buf.head == 2
    kept = sorted(buf.obs[:, 0].tolist())
    assert kept == [2.0, 3.0, 4.0]
    assert buf.action.dtype == np.int64


def test_replay_shape_and_sampling_errors(rng):
    buf = ReplayBuffer(8, (3,))
    with pytest.raises(ShapeMismatchError):
        buf.push(np.zeros(4), 0, 0.0, np.zeros(4), False)
    buf.push(np.zeros(3), 1, 0.5, np.ones(3), True)
    with pytest.raises(InsufficientDataError):
        buf.sample(rng, 2)
    obs, act, rew, nxt, done = buf.sample(rng, 1)
    assert obs.shape == (1, 3) and done[0] == 1.0 and rew[0] == 0.5


def test_trunk_selection():
    rng = substream(0, "trunk")
    cc = SimpleNamespace(conv_channels=(2, 2), latent=5)
    vec = build_q_network(rng, (7,), 3, (8,))
    assert vec.forward(np.zeros((2, 7), np.float32)).shape == (2, 3)
    img2 = build_q_network(rng, (4, 8, 8), 5, (8,), conv_cfg=cc)
    assert img2.forward(np.zeros((2, 4, 8, 8), np.float32)).shape == (2, 5)
    img3 = build_q_network(rng, (4, 3, 8, 8), 5, (8,), conv_cfg=cc)
    assert img3.forward(np.zeros((2, 4, 3, 8, 8), np.float32)).shape == (2, 5)
    with pytest.raises(ShapeMismatchError):
        build_q_network(rng, (4, 8, 8), 5, (8,))
    with pytest.raises(ShapeMismatchError):
        build_q_network(rng, (4, 8), 5, (8,), conv_cfg=cc)


def test_q_loss_closed_form():
    rng = substream(1, "qloss")
    net = build_q_network(rng, (3,), 4, (6,))
    obs = rng.random((5, 3)).astype(np.float32)
    actions = np.array([0, 3, 1, 1, 2])
    targets = rng.normal(size=5)
    loss, dq = q_loss_and_grad(net, obs, actions, targets)
    q = np.asarray(net.forward(obs), dtype=np.float64)
    err = q[np.arange(5), actions] - targets
    assert_close(loss, float((err ** 2).mean()), 1e-12)
    expect = np.zeros_like(q)
    expect[np.arange(5), actions] = 2.0 * err / 5
    assert np.allclose(dq, expect, atol=1e-12)


def test_q_loss_gradient_dense(rng):
    net = build_q_network(substream(2, "g"), (3,), 2, (4,))
    obs = rng.random((5, 3)).astype(np.float32)
    actions = rng.integers(0, 2, size=5)
    targets = rng.normal(size=5)

    def loss_fn(backward):
        loss, dq = q_loss_and_grad(net, obs, actions, targets, precise=True)
        if backward:
            net.zero_grad()
            net.backward(dq)
        return loss

    assert nn.finite_diff_check(loss_fn, net.params(), rng) < 1e-6


def test_q_loss_gradient_conv_trunk(rng):
    cc = SimpleNamespace(conv_channels=(2, 2), latent=3)
    net = build_q_network(substream(3, "g"), (2, 8, 8), 3, (4,), conv_cfg=cc)
    obs = rng.random((3, 2, 8, 8)).astype(np.float32)
    actions = rng.integers(0, 3, size=3)
    targets = rng.normal(size=3)

    def loss_fn(backward):
        loss, dq = q_loss_and_grad(net, obs, actions, targets, precise=True)
        if backward:
            net.zero_grad()
            net.backward(dq)
        return loss

    assert nn.finite_diff_check(loss_fn, net.params(), rng) < 1e-4


def test_greedy_act_is_argmax():
    agent = DQNAgent((4,), 3, seed=9)
    obs = substream(4, "o").random(4).astype(np.float32)
    assert agent.act(obs, greedy=True) == int(np.argmax(agent.q_values(obs)))


def test_same_seed_same_behaviour():
    stream = substream(5, "feed")
    trans = [(stream.random(4).astype(np.float32),
              int(stream.integers(3)), float(stream.normal()),
              stream.random(4).astype(np.float32)) for _ in range(80)]
    losses = []
    for _ in range(2):
        cfg = DQNConfig(batch=16, warmup=16, target_sync=7, hidden=(8,))
        agent = DQNAgent((4,), 3, cfg=cfg, seed=11)
        acts = [agent.act(o) for o, *_ in trans]
        for o, a, r, n in trans:
            agent.observe(o, a, r, n, False)
        losses.append((acts, [agent.update() for _ in range(10)]))
    assert losses[0] == losses[1]


def test_target_network_hard_sync():
    cfg = DQNConfig(batch=8, warmup=8, target_sync=5, hidden=(8,), lr=0.05)
    agent = DQNAgent((2,), 2, cfg=cfg, seed=3)
    stream = substream(6, "feed")
    for _ in range(16):
        agent.observe(stream.random(2).astype(np.float32), 0, 1.0,
                      stream.random(2).astype(np.float32), False)

    def gap():
        return max(float(np.abs(pt.value - ps.value).max()) for pt, ps
                   in zip(agent.target.params(), agent.net.params()))

    assert gap() == 0.0  # fresh start copies
    for _ in range(4):
        agent.update()
    assert gap() > 0.0  # online net moved, target held
    agent.update()  # fifth step lands on the sync boundary
    assert gap() == 0.0


def test_warmup_and_update_cadence():
    cfg = DQNConfig(batch=4, warmup=6, update_every=2)
    agent = DQNAgent((2,), 2, cfg=cfg, seed=0)
    o = np.zeros(2, np.float32)
    flags = []
    for _ in range(8):
        agent.observe(o, 0, 0.0, o, False)
        flags.append(agent.ready())
    assert flags == [False] * 5 + [True, False, True]


def test_bandit_recovers_reward_vector():
    """gamma=0 with terminal transitions reduces the update to regression
    on the per-action rewards, which gives an exact target to hit."""
    cfg = DQNConfig(gamma=0.0, lr=0.05, batch=16, warmup=16,
                    target_sync=10, hidden=(16,))
    agent = DQNAgent((1,), 3, cfg=cfg, seed=1)
    rewards = [0.1, 0.9, 0.5]
    o = np.zeros(1, np.float32)
    feed = substream(7, "bandit")
    for _ in range(64):
        a = int(feed.integers(3))
        agent.observe(o, a, rewards[a], o, True)
    for _ in range(400):
        agent.update()
    q = agent.q_values(o)
    assert int(np.argmax(q)) == 1
    assert np.abs(q - rewards).max() < 0.05


def test_checkpoint_round_trip(tmp_path):
    agent = DQNAgent((6,), 4, cfg=DQNConfig(hidden=(8,)), seed=2)
    stream = substream(8, "feed")
    for _ in range(80):
        agent.observe(stream.random(6).astype(np.float32),
                      int(stream.integers(4)), float(stream.normal()),
                      stream.random(6).astype(np.float32), False)
    for _ in range(5):
        agent.update()
    path = tmp_path / "policy.ldck"
    agent.save(path, extra_header={"encoder_digest": "abc123"})

    clone = DQNAgent((6,), 4, cfg=DQNConfig(hidden=(8,)), seed=99)
    header = clone.load_weights(path)
    assert header["encoder_digest"] == "abc123"
    assert header["obs_shape"] == [6]
    obs = stream.random(6).astype(np.float32)
    assert np.array_equal(agent.q_values(obs), clone.q_values(obs))


def test_load_rejects_foreign_checkpoint(tmp_path):
    path = tmp_path / "notdqn.ldck"
    nn.save_checkpoint(path, {"kind": "bottleneck"},
                       {"w": np.zeros(2, np.float32)})
    agent = DQNAgent((2,), 2, seed=0)
    with pytest.raises(ShapeMismatchError):
        agent.load_weights(path)
