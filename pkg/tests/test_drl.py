from dataclasses import replace

import numpy as np
import pytest

from core.models import AccParams, IcGrid, KinematicState, TrainConfig
from services.drl import trainer
from services.drl.agent import (
    ActorCritic,
    actor_objective_and_grads,
    actor_update,
    critic_loss_and_grads,
    policy_act,
    policy_batch,
    soft_update,
    td_targets,
)
from services.drl.checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from services.drl.mlp import Mlp
from services.drl.replay import ReplayBuffer, TransitionBatch
from services.drl.trainer import TrainResult, TrainingDivergedError, is_diverged, train, train_seeds
from tests.oracles import central_difference

MINI_GRID = IcGrid('mini', (0.0, 2.5), (0.0,), (0.0,))


def _batch(p: AccParams, n: int = 16, seed: int = 0) -> TransitionBatch:
    rng = np.random.default_rng(seed)
    low, high = np.array([-5.0, -5.0, -3.0]), np.array([5.0, 5.0, 2.0])
    return TransitionBatch(
        s=rng.uniform(low, high, size=(n, 3)),
        a=rng.uniform(p.u_min, p.u_max, size=n),
        r=rng.uniform(-1.0, 0.0, size=n),
        s2=rng.uniform(low, high, size=(n, 3)),
        done=np.zeros(n, dtype=bool),
    )


def _param_gradient(f, params, h: float = 1e-6):
    """对每个参数数组逐元素中心差分 (原地扰动后还原)"""
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            down = f()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def _zero_mlp(sizes, output_activation='identity', final_bias=0.0) -> Mlp:
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    biases[-1][:] = final_bias
    return Mlp(weights, biases, output_activation)


def _abs_command_critic() -> Mlp:
    """Q(s, x) = -|x - 0.2|，即 -|u| / 2.5 (u = -0.5 + 2.5 x)"""
    W0 = np.zeros((4, 2))
    W0[3] = [1.0, -1.0]
    return Mlp([W0, np.array([[-1.0], [-1.0]])], [np.array([-0.2, 0.2]), np.zeros(1)])


def test_backprop_matches_differences():
    rng = np.random.default_rng(1)
    for activation in ('identity', 'tanh'):
        net = Mlp.initialize((4, 3, 3, 1), rng, output_activation=activation, final_scale=0.5)
        x = rng.normal(size=(5, 4))
        weight = rng.normal(size=(5, 1))
        cache = net.forward(x)
        grads, dx = net.backward(cache, weight)
        fd = _param_gradient(lambda: float(np.sum(weight * net(x))), net.parameters())
        for g, f in zip(grads, fd):
            np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-8)
        fd_x = central_difference(lambda z: float(np.sum(weight * net(z.reshape(5, 4)))), x.ravel(), 1e-6)
        np.testing.assert_allclose(dx.ravel(), fd_x, rtol=1e-4, atol=1e-8)


def test_critic_gradient_matches_differences(p, tiny_nets, small_cfg):
    batch = _batch(p)
    _, grads = critic_loss_and_grads(batch, tiny_nets, small_cfg.gamma)
    fd = _param_gradient(lambda: critic_loss_and_grads(batch, tiny_nets, small_cfg.gamma)[0], tiny_nets.critic.parameters())
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-8)


def test_actor_gradient_matches_differences(p, tiny_nets):
    batch = _batch(p)
    _, grads = actor_objective_and_grads(batch, tiny_nets)
    fd = _param_gradient(lambda: -actor_objective_and_grads(batch, tiny_nets)[0], tiny_nets.actor.parameters())
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-8)


def test_critic_loss_vanishes_on_consistent_rewards(p, tiny_nets, small_cfg):
    batch = _batch(p)
    q = tiny_nets.critic(tiny_nets.critic_input(tiny_nets.scale_state(batch.s), tiny_nets.scale_action(batch.a)))[:, 0]
    bootstrap = td_targets(replace(batch, r=np.zeros(len(batch))), tiny_nets, small_cfg.gamma)
    loss, grads = critic_loss_and_grads(replace(batch, r=q - bootstrap), tiny_nets, small_cfg.gamma)
    assert loss < 1e-20
    assert all(np.max(np.abs(g)) < 1e-10 for g in grads)


def test_zero_networks_have_zero_loss(p, small_cfg):
    h = small_cfg.hidden
    nets = ActorCritic.from_networks(_zero_mlp((3, h, h, 1), 'tanh'), _zero_mlp((4, h, h, 1)), p, small_cfg)
    loss, _ = critic_loss_and_grads(replace(_batch(p), r=np.zeros(16)), nets, small_cfg.gamma)
    assert loss == 0.0


def test_constant_critic_gives_no_actor_gradient(p, tiny_nets, small_cfg):
    h = small_cfg.hidden
    nets = ActorCritic.from_networks(tiny_nets.actor, _zero_mlp((4, h, h, 1), final_bias=5.0), p, small_cfg)
    mean_q, grads = actor_objective_and_grads(_batch(p), nets)
    assert mean_q == pytest.approx(5.0)
    assert all(np.all(g == 0.0) for g in grads)


def test_actor_moves_toward_the_critic_maximum(p, small_cfg):
    cfg = replace(small_cfg, lr_actor=3e-3)
    actor = Mlp.initialize((3, 8, 8, 1), np.random.default_rng(2), output_activation='tanh')
    nets = ActorCritic.from_networks(actor, _abs_command_critic(), p, cfg)
    batch = _batch(p, n=64, seed=3)
    critic_before = [w.copy() for w in nets.critic.parameters()]

    start = float(np.mean(np.abs(policy_batch(nets, batch.s))))
    for _ in range(1500):
        actor_update(batch, nets, cfg)
    end = float(np.mean(np.abs(policy_batch(nets, batch.s))))

    assert start > 0.3
    assert end < 0.1
    assert all(np.array_equal(a, b) for a, b in zip(critic_before, nets.critic.parameters()))


def test_soft_update_coefficients(p, tiny_nets):
    target = [w.copy() for w in tiny_nets.actor_target.parameters()]
    soft_update(tiny_nets, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(target, tiny_nets.actor_target.parameters()))

    for w in tiny_nets.actor.parameters():
        w[...] = 1.0
    for w in tiny_nets.actor_target.parameters():
        w[...] = 0.0
    soft_update(tiny_nets, 0.001)
    assert all(np.allclose(w, 0.001, rtol=1e-12) for w in tiny_nets.actor_target.parameters())

    soft_update(tiny_nets, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(tiny_nets.actor.parameters(), tiny_nets.actor_target.parameters()))


def test_policy_output_is_always_in_bounds(p, tiny_nets):
    rng = np.random.default_rng(5)
    states = rng.uniform(-1e3, 1e3, size=(100_000, 3))
    u = policy_batch(tiny_nets, states)
    assert np.all(u >= p.u_min) and np.all(u <= p.u_max)
    for s in (KinematicState(1e12, -1e12, 1e12), KinematicState(-1e6, 1e6, -1e6)):
        assert p.u_min <= policy_act(tiny_nets, s) <= p.u_max


def test_zero_output_layer_gives_the_midpoint(p, tiny_nets):
    tiny_nets.actor.weights[-1][...] = 0.0
    tiny_nets.actor.biases[-1][...] = 0.0
    for s in (KinematicState(0.0, 0.0, 0.0), KinematicState(-20.0, 5.0, 2.0)):
        assert policy_act(tiny_nets, s) == pytest.approx(p.u_mid)


def test_replay_buffer_overwrites_oldest():
    buffer = ReplayBuffer(3)
    for i in range(5):
        buffer.add(np.full(3, i), float(i), -0.1 * i, np.full(3, i + 1), False)
    assert len(buffer) == 3
    batch = buffer.sample(3, np.random.default_rng(0))
    assert sorted(batch.a.tolist()) == [2.0, 3.0, 4.0]


def test_replay_sampling_is_distinct_and_uniform():
    buffer = ReplayBuffer(1000)
    for i in range(1000):
        buffer.add(np.zeros(3), 0.0, 0.0, np.zeros(3), False)
    rng = np.random.default_rng(9)
    counts = np.zeros(1000)
    for _ in range(1000):
        idx = buffer.sample_indices(100, rng)
        assert len(set(idx.tolist())) == 100
        counts[idx] += 1
    assert np.all(np.abs(counts - 100) < 50)


def test_replay_refuses_oversized_batch():
    buffer = ReplayBuffer(10)
    buffer.add(np.zeros(3), 0.0, 0.0, np.zeros(3), False)
    with pytest.raises(ValueError):
        buffer.sample(2, np.random.default_rng(0))


def test_zero_steps_returns_initial_networks(p, small_cfg):
    result = train(small_cfg, seed=4, p=p)
    assert result.curve.size == 0
    fresh = ActorCritic.initialize(p, small_cfg, np.random.default_rng(4))
    assert all(np.array_equal(a, b) for a, b in zip(result.nets.actor.parameters(), fresh.actor.parameters()))


def test_training_is_deterministic_per_seed(p, small_cfg):
    cfg = replace(small_cfg, total_steps=300)
    first = train(cfg, seed=5, p=p)
    second = train(cfg, seed=5, p=p)
    assert first.curve.size == 300 // cfg.episode_len
    assert np.array_equal(first.curve, second.curve)
    assert all(np.array_equal(a, b) for a, b in zip(first.nets.actor.parameters(), second.nets.actor.parameters()))
    assert np.all(first.curve <= 0.0) and np.all(first.curve >= -cfg.episode_len)


def test_divergence_rule():
    assert is_diverged([-20.0] * 10, 20)
    assert not is_diverged([-5.0] * 10, 20)
    assert not is_diverged([-20.0] * 9 + [-5.0], 20)
    assert not is_diverged([], 20)


def _fake_results(failed_seeds):
    def fake_train(cfg, seed, p=None, progress=False):
        return TrainResult(
            seed=seed,
            nets=ActorCritic.initialize(p or AccParams(), cfg, np.random.default_rng(seed)),
            curve=np.array([-1.0]),
            failed=seed in failed_seeds,
        )
    return fake_train


def test_all_diverged_seeds_raise(monkeypatch, small_cfg):
    monkeypatch.setattr(trainer, 'train', _fake_results({0, 1}))
    with pytest.raises(TrainingDivergedError):
        train_seeds(replace(small_cfg, seeds=(0, 1)), grid=MINI_GRID)


def test_best_surviving_seed_is_selected(monkeypatch, small_cfg):
    fake = _fake_results({1})
    seed_of = {}

    def recording_train(cfg, seed, p=None, progress=False):
        result = fake(cfg, seed, p, progress)
        seed_of[id(result.nets)] = seed
        return result

    costs = {0: 3.0, 2: 1.0}
    monkeypatch.setattr(trainer, 'train', recording_train)
    monkeypatch.setattr(trainer, 'evaluate_policy', lambda nets, p, grid, T: costs[seed_of[id(nets)]])

    best, results = train_seeds(replace(small_cfg, seeds=(0, 1, 2)), grid=MINI_GRID)
    assert best.seed == 2
    assert [r.failed for r in results] == [False, True, False]
    assert results[1].eval_cost is None


def test_checkpoint_round_trip(tmp_path, p, tiny_nets):
    path = str(tmp_path / 'ckpt' / 'ddpg.npz')
    save_checkpoint(path, tiny_nets)
    restored = load_checkpoint(path, p)
    for name in ('actor', 'critic', 'actor_target', 'critic_target'):
        for a, b in zip(getattr(tiny_nets, name).parameters(), getattr(restored, name).parameters()):
            assert np.array_equal(a, b)
    s = KinematicState(1.0, -2.0, 0.5)
    assert policy_act(restored, s) == policy_act(tiny_nets, s)


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / 'old.npz'
    np.savez(path, format_version=np.array(FORMAT_VERSION + 1))
    with pytest.raises(CheckpointError, match='format_version'):
        load_checkpoint(str(path))


def test_checkpoint_errors(tmp_path, tiny_nets):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / 'missing.npz'))
    path = str(tmp_path / 'ddpg.npz')
    save_checkpoint(path, tiny_nets)
    with pytest.raises(CheckpointError, match='command range'):
        load_checkpoint(path, AccParams(u_max=1.0))


@pytest.mark.slow
def test_learning_curve_improves(p):
    cfg = replace(TrainConfig(), total_steps=50_000, seeds=(0,))
    result = train(cfg, seed=0, p=p)
    assert np.mean(result.curve[-10:]) > np.mean(result.curve[:10])
