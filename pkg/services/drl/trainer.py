"""
DDPG 训练循环 (COM 环境, a_prec = 0) 以及多种子训练与择优。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from core.models import AccParams, IcGrid, ModelSpec, TrainConfig
from services.cost import reward, stage_cost
from services.drl.agent import ActorCritic, DrlController, actor_update, critic_update, soft_update
from services.drl.replay import ReplayBuffer
from services.dynamics import com_matrices
from services.executor import run_tasks
from services.simulation import run_episode

DIVERGENCE_TAIL = 0.1
DIVERGENCE_MARGIN = 0.99


class TrainingDivergedError(RuntimeError):
    """所有种子都被判定为发散"""
    pass


@dataclass(eq=False)
class TrainResult:
    seed: int
    nets: ActorCritic
    curve: np.ndarray
    failed: bool = False
    eval_cost: Optional[float] = None


@dataclass(frozen=True)
class SeedTask:
    cfg: TrainConfig
    seed: int
    p: AccParams = field(default_factory=AccParams)


def random_initial_state(rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    low = np.array([cfg.e_range[0], cfg.ev_range[0], cfg.ai_range[0]])
    high = np.array([cfg.e_range[1], cfg.ev_range[1], cfg.ai_range[1]])
    return rng.uniform(low, high)


def is_diverged(curve: Sequence[float], episode_len: int) -> bool:
    """最后 10% 的回合奖励全部贴近下限 -episode_len"""
    if len(curve) == 0:
        return False
    tail = max(1, math.ceil(DIVERGENCE_TAIL * len(curve)))
    return bool(np.all(np.asarray(curve[-tail:]) <= DIVERGENCE_MARGIN * -episode_len))


def train(cfg: TrainConfig, seed: int, p: Optional[AccParams] = None, progress: bool = False) -> TrainResult:
    """
    训练单个种子。返回网络和学习曲线 (每回合未折扣奖励之和)。
    同一种子下初始化、初始条件、探索噪声和采样完全一致。
    """
    p = p or AccParams()
    rng = np.random.default_rng(seed)
    nets = ActorCritic.initialize(p, cfg, rng)
    curve: List[float] = []
    if cfg.total_steps <= 0:
        return TrainResult(seed=seed, nets=nets, curve=np.array(curve))

    buffer = ReplayBuffer(min(cfg.buffer_size, cfg.total_steps))
    Ad, Bd = com_matrices(p)
    warmup = cfg.warmup_batches * cfg.batch
    noise_std = cfg.noise_std * (p.u_half if cfg.noise_relative else 1.0)

    s = random_initial_state(rng, cfg)
    episode_reward, t_episode = 0.0, 0
    for _ in tqdm(range(cfg.total_steps), desc=f"seed {seed}", disable=not progress, mininterval=2.0):
        x = nets.actor(nets.scale_state(s))[0, 0]
        u = p.clamp(float(nets.command(x)) + rng.normal(cfg.noise_mean, noise_std))
        s2 = Ad @ s + Bd * u
        r = reward(stage_cost(s[0], u, (u - s[2]) / p.tau, p).total)
        t_episode += 1
        done = t_episode >= cfg.episode_len
        buffer.add(s, u, r, s2, done)
        episode_reward += r

        if len(buffer) >= warmup:
            batch = buffer.sample(cfg.batch, rng)
            critic_update(batch, nets, cfg)
            actor_update(batch, nets, cfg)
            soft_update(nets, cfg.tau_target)

        if done:
            curve.append(episode_reward)
            s = random_initial_state(rng, cfg)
            episode_reward, t_episode = 0.0, 0
        else:
            s = s2

    failed = is_diverged(curve, cfg.episode_len)
    if failed:
        logging.warning(f"Seed {seed} flagged as diverged: last episodes stayed at the reward floor")
    logging.info(
        f"Seed {seed} finished {cfg.total_steps} steps, {len(curve)} episodes, "
        f"final episode reward {curve[-1] if curve else float('nan'):.3f}"
    )
    return TrainResult(seed=seed, nets=nets, curve=np.array(curve), failed=failed)


def _train_task(task: SeedTask) -> TrainResult:
    return train(task.cfg, task.seed, task.p)


def evaluate_policy(nets: ActorCritic, p: AccParams, grid: Optional[IcGrid] = None, T: Optional[int] = None) -> float:
    """在 COM 上跑完整个初始条件网格，返回平均回合代价"""
    grid = grid or IcGrid.in_range()
    T = T or TrainConfig().episode_len
    controller = DrlController(nets)
    costs = [run_episode(controller, ModelSpec.com(), ic, T, p).cost for ic in grid.initial_conditions()]
    return float(np.mean(costs))


def train_seeds(
    cfg: TrainConfig,
    p: Optional[AccParams] = None,
    jobs: int = 1,
    grid: Optional[IcGrid] = None,
    progress: bool = False,
) -> Tuple[TrainResult, List[TrainResult]]:
    """
    每个种子独立训练，在评估网格上择优 (平均回合代价最低)。
    发散的种子不参与择优；全部发散时抛 TrainingDivergedError。
    """
    p = p or AccParams()
    tasks = [SeedTask(cfg=cfg, seed=seed, p=p) for seed in cfg.seeds]
    results = run_tasks(_train_task, tasks, jobs=jobs, progress=progress, desc='seeds')
    for result in results:
        if not result.failed:
            result.eval_cost = evaluate_policy(result.nets, p, grid, cfg.episode_len)
            logging.info(f"Seed {result.seed} evaluation cost {result.eval_cost:.4f}")

    candidates = [r for r in results if not r.failed]
    if not candidates:
        raise TrainingDivergedError(f"all seeds {list(cfg.seeds)} diverged")
    best = min(candidates, key=lambda r: (r.eval_cost, r.seed))
    logging.info(f"Selected seed {best.seed} (evaluation cost {best.eval_cost:.4f})")
    return best, results
