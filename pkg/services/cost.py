"""
ACC 阶段代价、回合代价、奖励裁剪和折扣回报。

平滑绝对值 sqrt(x² + ε) 保证代价处处可微，内点法才能收敛。
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from core.models import AccParams, EpisodeTrace, StageCostBreakdown

REWARD_FLOOR = -1.0


def smooth_abs(x, eps: float):
    return np.sqrt(np.square(x) + eps)


def smooth_abs_derivatives(x: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """返回 sqrt(x²+ε) 的值、一阶导和二阶导"""
    r = np.sqrt(np.square(x) + eps)
    return r, x / r, eps / (r * r * r)


def stage_cost(e: float, u: float, jerk: float, p: AccParams) -> StageCostBreakdown:
    c_err = float(smooth_abs(e / p.e_nmax, p.eps))
    # 按 u_min 归一化
    c_ctrl = float(smooth_abs(u / p.u_min, p.eps))
    c_jerk = float(smooth_abs(jerk / p.jerk_scale, p.eps))
    total = p.alpha * c_err + p.beta * c_ctrl + p.gamma_w * c_jerk
    return StageCostBreakdown(c_err=c_err, c_ctrl=c_ctrl, c_jerk=c_jerk, total=total)


def stage_costs(e: np.ndarray, u: np.ndarray, jerk: np.ndarray, p: AccParams) -> np.ndarray:
    """stage_cost 的向量化版本，只返回 total"""
    return (
        p.alpha * smooth_abs(np.asarray(e) / p.e_nmax, p.eps)
        + p.beta * smooth_abs(np.asarray(u) / p.u_min, p.eps)
        + p.gamma_w * smooth_abs(np.asarray(jerk) / p.jerk_scale, p.eps)
    )


def finite_difference_jerk(a: Sequence[float], dt: float, a_final: Optional[float] = None) -> np.ndarray:
    """
    闭环记录用的 jerk: (a_{t+1} - a_t)/dt。
    没有 a_final 时最后一步沿用上一个差分。
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return a
    if a_final is not None:
        return np.diff(np.append(a, a_final)) / dt
    if a.size == 1:
        return np.zeros(1)
    jerk = np.diff(a) / dt
    return np.append(jerk, jerk[-1])


def episode_cost(trace: EpisodeTrace) -> float:
    """未折扣、未裁剪的阶段代价之和，用于 DRL / MPC / IPO 的横向比较"""
    if len(trace) == 0:
        raise ValueError("episode_cost needs a non-empty trace")
    return float(np.sum(trace.stage_cost))


def reward(c: float) -> float:
    return max(-c, REWARD_FLOOR)


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    r = np.asarray(rewards, dtype=float)
    return float(np.sum(r * gamma ** np.arange(r.size)))
