"""
独立于被测实现的数值参照: 线性系统的精确传播、差分梯度、L1 线性规划下界。
"""
import math

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linprog

from core.models import AccParams


def com_continuous(p: AccParams):
    """x' = A x + B u (a_prec = 0)"""
    A = np.array([[0.0, 1.0, -p.t_g], [0.0, 0.0, -1.0], [0.0, 0.0, -1.0 / p.tau]])
    B = np.array([0.0, 0.0, 1.0 / p.tau])
    return A, B


def _augmented(p: AccParams) -> np.ndarray:
    A, B = com_continuous(p)
    M = np.zeros((4, 4))
    M[:3, :3] = A
    M[:3, 3] = B
    return M


def taylor_rk4_step(x: np.ndarray, u: float, h: float, p: AccParams) -> np.ndarray:
    """线性定常系统上 RK4 一步恰好等于 exp(hM) 的四阶截断"""
    M = h * _augmented(p)
    step = sum(np.linalg.matrix_power(M, k) / math.factorial(k) for k in range(5))
    return (step @ np.append(x, u))[:3]


def exact_step(x: np.ndarray, u: float, h: float, p: AccParams) -> np.ndarray:
    """零阶保持下的精确离散化"""
    return (expm(h * _augmented(p)) @ np.append(x, u))[:3]


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2 * h)
    return grad


def l1_lower_bound(Pe: np.ndarray, Me: np.ndarray, Pa: np.ndarray, Ma: np.ndarray, s0: np.ndarray, p: AccParams):
    """
    把平滑绝对值换成 |x| 后的问题是线性规划，其最优值是平滑问题最优值的下界。
    变量 [u, t_e, t_u, t_j]，返回 (最优值, u)。
    """
    H = Me.shape[0]
    ce = Pe @ s0 / p.e_nmax
    Ce = Me / p.e_nmax
    scale_j = p.tau * p.jerk_scale
    cj = -(Pa @ s0) / scale_j
    Cj = (np.eye(H) - Ma) / scale_j
    Cu = np.eye(H) / abs(p.u_min)

    I, Z = np.eye(H), np.zeros((H, H))
    rows, rhs = [], []
    for C, c, block in ((Ce, ce, 1), (Cu, np.zeros(H), 2), (Cj, cj, 3)):
        pick = [Z, Z, Z]
        pick[block - 1] = -I
        rows.append(np.hstack([C] + pick))
        rhs.append(-c)
        rows.append(np.hstack([-C] + pick))
        rhs.append(c)
    cost = np.concatenate([np.zeros(H), np.full(H, p.alpha), np.full(H, p.beta), np.full(H, p.gamma_w)])
    bounds = [(p.u_min, p.u_max)] * H + [(0, None)] * (3 * H)
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), bounds=bounds, method='highs')
    assert res.status == 0, res.message
    return float(res.fun), res.x[:H]
