"""
DDPG actor-critic: 目标网络、critic / actor 更新、软更新和确定性策略。

actor 输出 tanh 值 x ∈ (-1, 1)，指令 u = u_mid + u_half * x；
critic 的动作输入就是同一个 x，所以 actor 梯度直接取 critic 对第 4 个输入的导数。
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.interfaces import IController
from core.models import AccParams, KinematicState, TrainConfig, WorldState
from services.drl.mlp import Adam, Mlp
from services.drl.replay import TransitionBatch


@dataclass(eq=False)
class ActorCritic:
    actor: Mlp
    critic: Mlp
    actor_target: Mlp
    critic_target: Mlp
    actor_opt: Adam
    critic_opt: Adam
    state_offset: np.ndarray
    state_scale: np.ndarray
    u_mid: float
    u_half: float

    @classmethod
    def from_networks(
        cls,
        actor: Mlp,
        critic: Mlp,
        p: AccParams,
        cfg: TrainConfig,
        actor_target: Optional[Mlp] = None,
        critic_target: Optional[Mlp] = None,
    ) -> "ActorCritic":
        ranges = np.array([cfg.e_range, cfg.ev_range, cfg.ai_range], dtype=float)
        return cls(
            actor=actor,
            critic=critic,
            actor_target=actor_target or actor.copy(),
            critic_target=critic_target or critic.copy(),
            actor_opt=Adam(actor.parameters(), cfg.lr_actor),
            critic_opt=Adam(critic.parameters(), cfg.lr_critic),
            state_offset=ranges.mean(axis=1),
            state_scale=0.5 * (ranges[:, 1] - ranges[:, 0]),
            u_mid=p.u_mid,
            u_half=p.u_half,
        )

    @classmethod
    def initialize(cls, p: AccParams, cfg: TrainConfig, rng: np.random.Generator) -> "ActorCritic":
        h = cfg.hidden
        actor = Mlp.initialize((3, h, h, 1), rng, output_activation='tanh')
        critic = Mlp.initialize((4, h, h, 1), rng)
        return cls.from_networks(actor, critic, p, cfg)

    def scale_state(self, s: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(s) - self.state_offset) / self.state_scale

    def scale_action(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u, dtype=float) - self.u_mid) / self.u_half

    def command(self, x: np.ndarray) -> np.ndarray:
        return self.u_mid + self.u_half * x

    def critic_input(self, s_scaled: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.column_stack([s_scaled, np.reshape(x, (-1,))])


def policy_act(nets: ActorCritic, s: KinematicState) -> float:
    """无噪声前向，输出保证在 [u_min, u_max]"""
    x = nets.actor(nets.scale_state(s.as_array()))[0, 0]
    return float(np.clip(nets.command(x), nets.u_mid - nets.u_half, nets.u_mid + nets.u_half))


def policy_batch(nets: ActorCritic, states: np.ndarray) -> np.ndarray:
    return nets.command(nets.actor(nets.scale_state(states))[:, 0])


def td_targets(batch: TransitionBatch, nets: ActorCritic, gamma: float) -> np.ndarray:
    s2 = nets.scale_state(batch.s2)
    x2 = nets.actor_target(s2)[:, 0]
    q2 = nets.critic_target(nets.critic_input(s2, x2))[:, 0]
    return batch.r + gamma * (1.0 - batch.done.astype(float)) * q2


def critic_loss_and_grads(batch: TransitionBatch, nets: ActorCritic, gamma: float) -> Tuple[float, List[np.ndarray]]:
    y = td_targets(batch, nets, gamma)
    cache = nets.critic.forward(nets.critic_input(nets.scale_state(batch.s), nets.scale_action(batch.a)))
    td = y - cache.output[:, 0]
    loss = float(np.mean(td ** 2))
    grads, _ = nets.critic.backward(cache, (-2.0 * td / len(td))[:, None])
    return loss, grads


def actor_objective_and_grads(batch: TransitionBatch, nets: ActorCritic) -> Tuple[float, List[np.ndarray]]:
    """返回 mean Q(s, mu(s)) 以及 -mean Q 对 actor 参数的梯度"""
    s = nets.scale_state(batch.s)
    actor_cache = nets.actor.forward(s)
    critic_cache = nets.critic.forward(nets.critic_input(s, actor_cache.output))
    n = len(s)
    _, dx = nets.critic.backward(critic_cache, np.full((n, 1), -1.0 / n))
    grads, _ = nets.actor.backward(actor_cache, dx[:, 3:4])
    return float(np.mean(critic_cache.output)), grads


def critic_update(batch: TransitionBatch, nets: ActorCritic, cfg: TrainConfig) -> float:
    loss, grads = critic_loss_and_grads(batch, nets, cfg.gamma)
    nets.critic_opt.step(grads)
    return loss


def actor_update(batch: TransitionBatch, nets: ActorCritic, cfg: TrainConfig) -> float:
    """只更新 actor，critic 保持不动"""
    mean_q, grads = actor_objective_and_grads(batch, nets)
    nets.actor_opt.step(grads)
    return mean_q


def soft_update(nets: ActorCritic, coefficient: float) -> None:
    """target <- c * online + (1 - c) * target，原地更新"""
    for online, target in ((nets.actor, nets.actor_target), (nets.critic, nets.critic_target)):
        for o, t in zip(online.parameters(), target.parameters()):
            t *= 1.0 - coefficient
            t += coefficient * o


class DrlController(IController):
    name = 'DRL'

    def __init__(self, nets: ActorCritic):
        self.nets = nets

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, world: WorldState) -> float:
        return policy_act(self.nets, world.kin)
