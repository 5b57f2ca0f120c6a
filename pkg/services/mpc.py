"""
单步打靶 MPC:
- rollout_cost: 沿 RK4 前向推演，反向伴随求梯度
- solve_barrier: 对数障碍内点法 (稠密 Newton，长时域退化为 BFGS)
- MpcController / IpoController: 滚动时域控制器与整回合开环基准
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from core.interfaces import IController
from core.models import (
    AccParams,
    BarrierOptions,
    EpisodeTrace,
    KinematicState,
    ModelSpec,
    NlpProblem,
    SolveReport,
    WorldState,
)
from config import settings
from services.cost import smooth_abs_derivatives, stage_costs
from services.dynamics import com_matrices, rk4_step
from services.simulation import run_episode

FRACTION_TO_BOUNDARY = 0.99
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60
MIN_STEP = 1e-12
WARM_MARGIN = 1e-6


def rollout_cost(s0: KinematicState, u_vec, p: AccParams) -> Tuple[float, np.ndarray]:
    """
    预测模型 (COM, a_prec=0) 上的 H 步代价与解析梯度。
    jerk 取模型值 (u_k - a_k)/tau，无终端代价。
    """
    u_vec = np.asarray(u_vec, dtype=float)
    H = u_vec.size
    if H < 1:
        raise ValueError("rollout needs at least one command")
    Ad, Bd = com_matrices(p)

    states = np.empty((H, 3))
    s = s0
    for k in range(H):
        states[k] = s.as_array()
        s = rk4_step(s, float(u_vec[k]), 0.0, p.dt, p)

    ze = states[:, 0] / p.e_nmax
    zu = u_vec / p.u_min
    zj = (u_vec - states[:, 2]) / p.tau / p.jerk_scale
    cost = float(np.sum(stage_costs(states[:, 0], u_vec, (u_vec - states[:, 2]) / p.tau, p)))

    _, de, _ = smooth_abs_derivatives(ze, p.eps)
    _, du, _ = smooth_abs_derivatives(zu, p.eps)
    _, dj, _ = smooth_abs_derivatives(zj, p.eps)
    dl_de = p.alpha * de / p.e_nmax
    dl_dj = p.gamma_w * dj / p.jerk_scale / p.tau

    # 反向伴随: lam = dJ/ds_{k+1}
    grad = np.empty(H)
    lam = np.zeros(3)
    for k in range(H - 1, -1, -1):
        grad[k] = p.beta * du[k] / p.u_min + dl_dj[k] + Bd @ lam
        dl_ds = np.array([dl_de[k], 0.0, -dl_dj[k]])
        lam = dl_ds + Ad.T @ lam
    return cost, grad


@dataclass(frozen=True, eq=False)
class CondensedRollout:
    """e = Pe s0 + Me u, a = Pa s0 + Ma u (k = 0..H-1)"""
    Pe: np.ndarray
    Me: np.ndarray
    Pa: np.ndarray
    Ma: np.ndarray


@lru_cache(maxsize=16)
def condensed_rollout(H: int, p: AccParams) -> CondensedRollout:
    Ad, Bd = com_matrices(p)
    powers = np.empty((H, 3, 3))
    powers[0] = np.eye(3)
    for k in range(1, H):
        powers[k] = Ad @ powers[k - 1]
    impulse = powers @ Bd
    k_idx, j_idx = np.indices((H, H))
    lag = k_idx - 1 - j_idx
    causal = lag >= 0
    lag = np.clip(lag, 0, None)
    return CondensedRollout(
        Pe=powers[:, 0, :],
        Me=np.where(causal, impulse[lag, 0], 0.0),
        Pa=powers[:, 2, :],
        Ma=np.where(causal, impulse[lag, 2], 0.0),
    )


class _BarrierObjective:
    """稠密矩阵形式的目标函数，Hessian 为精确值"""

    def __init__(self, prob: NlpProblem, p: AccParams):
        cr = condensed_rollout(prob.H, p)
        s0 = prob.s0.as_array()
        self.p = p
        self.lo, self.hi = prob.u_min, prob.u_max
        self.Ce = cr.Me / p.e_nmax
        self.ce = cr.Pe @ s0 / p.e_nmax
        scale_j = p.tau * p.jerk_scale
        self.Cj = (np.eye(prob.H) - cr.Ma) / scale_j
        self.cj = -(cr.Pa @ s0) / scale_j

    def _terms(self, u: np.ndarray, eps: float):
        p = self.p
        re, de, he = smooth_abs_derivatives(self.ce + self.Ce @ u, eps)
        ru, du, hu = smooth_abs_derivatives(u / p.u_min, eps)
        rj, dj, hj = smooth_abs_derivatives(self.cj + self.Cj @ u, eps)
        return (re, de, he), (ru, du, hu), (rj, dj, hj)

    def cost(self, u: np.ndarray, eps: float) -> float:
        (re, _, _), (ru, _, _), (rj, _, _) = self._terms(u, eps)
        p = self.p
        return float(p.alpha * re.sum() + p.beta * ru.sum() + p.gamma_w * rj.sum())

    def barrier(self, u: np.ndarray) -> float:
        lower, upper = u - self.lo, self.hi - u
        if np.any(lower <= 0) or np.any(upper <= 0):
            return np.inf
        return float(-np.log(lower).sum() - np.log(upper).sum())

    def value(self, u: np.ndarray, mu: float, eps: float) -> float:
        b = self.barrier(u)
        return np.inf if not np.isfinite(b) else self.cost(u, eps) + mu * b

    def gradient(self, u: np.ndarray, mu: float, eps: float) -> np.ndarray:
        (_, de, _), (_, du, _), (_, dj, _) = self._terms(u, eps)
        p = self.p
        g = p.alpha * (self.Ce.T @ de) + p.beta * du / p.u_min + p.gamma_w * (self.Cj.T @ dj)
        return g + mu * (-1.0 / (u - self.lo) + 1.0 / (self.hi - u))

    def _barrier_curvature(self, u: np.ndarray) -> np.ndarray:
        return 1.0 / (u - self.lo) ** 2 + 1.0 / (self.hi - u) ** 2

    def hessian(self, u: np.ndarray, mu: float, eps: float) -> np.ndarray:
        (_, _, he), (_, _, hu), (_, _, hj) = self._terms(u, eps)
        p = self.p
        Hm = p.alpha * (self.Ce.T * he) @ self.Ce + p.gamma_w * (self.Cj.T * hj) @ self.Cj
        Hm[np.diag_indices_from(Hm)] += p.beta * hu / p.u_min ** 2 + mu * self._barrier_curvature(u)
        return Hm

    def hessian_diagonal(self, u: np.ndarray, mu: float, eps: float) -> np.ndarray:
        (_, _, he), (_, _, hu), (_, _, hj) = self._terms(u, eps)
        p = self.p
        return (
            p.alpha * (he @ self.Ce ** 2)
            + p.gamma_w * (hj @ self.Cj ** 2)
            + p.beta * hu / p.u_min ** 2
            + mu * self._barrier_curvature(u)
        )


def _newton_direction(Hm: np.ndarray, g: np.ndarray) -> np.ndarray:
    shift = 0.0
    base = max(1.0, float(np.max(np.abs(np.diag(Hm)))))
    for _ in range(12):
        try:
            factor = cho_factor(Hm + shift * np.eye(len(g)) if shift else Hm)
            return -cho_solve(factor, g)
        except LinAlgError:
            shift = base * 1e-12 if shift == 0.0 else shift * 10.0
    # 分解始终失败时退回梯度方向
    return -g / base


def _max_feasible_step(u: np.ndarray, d: np.ndarray, lo: float, hi: float) -> float:
    alpha = 1.0
    up, down = d > 0, d < 0
    if np.any(up):
        alpha = min(alpha, FRACTION_TO_BOUNDARY * float(np.min((hi - u[up]) / d[up])))
    if np.any(down):
        alpha = min(alpha, FRACTION_TO_BOUNDARY * float(np.min((lo - u[down]) / d[down])))
    return alpha


def _line_search(
    phi: Callable[[np.ndarray], float], u: np.ndarray, f: float, g: np.ndarray, d: np.ndarray, alpha: float
) -> Optional[np.ndarray]:
    slope = float(g @ d)
    if slope >= 0:
        return None
    slack = 1e-14 * max(1.0, abs(f))
    for _ in range(MAX_BACKTRACKS):
        candidate = u + alpha * d
        if phi(candidate) <= f + ARMIJO_C * alpha * slope + slack:
            return candidate
        alpha *= 0.5
    return None


def _newton_stage(obj: _BarrierObjective, u: np.ndarray, mu: float, eps: float, tol: float, max_inner: int):
    phi = lambda x: obj.value(x, mu, eps)
    for it in range(max_inner):
        g = obj.gradient(u, mu, eps)
        if np.max(np.abs(g)) < tol:
            return u, it
        d = _newton_direction(obj.hessian(u, mu, eps), g)
        u_next = _line_search(phi, u, phi(u), g, d, _max_feasible_step(u, d, obj.lo, obj.hi))
        if u_next is None:
            return u, it + 1
        step = np.max(np.abs(u_next - u))
        u = u_next
        if step < MIN_STEP:
            return u, it + 1
    return u, max_inner


def _bfgs_stage(obj: _BarrierObjective, u: np.ndarray, mu: float, eps: float, tol: float, max_inner: int):
    phi = lambda x: obj.value(x, mu, eps)
    H_inv = np.diag(1.0 / obj.hessian_diagonal(u, mu, eps))
    g = obj.gradient(u, mu, eps)
    for it in range(max_inner):
        if np.max(np.abs(g)) < tol:
            return u, it
        d = -H_inv @ g
        u_next = _line_search(phi, u, phi(u), g, d, _max_feasible_step(u, d, obj.lo, obj.hi))
        if u_next is None:
            return u, it + 1
        g_next = obj.gradient(u_next, mu, eps)
        s, y = u_next - u, g_next - g
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            Hy = H_inv @ y
            H_inv += (rho * rho * (y @ Hy) + rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        step = np.max(np.abs(s))
        u, g = u_next, g_next
        if step < MIN_STEP:
            return u, it + 1
    return u, max_inner


def solve_barrier(
    prob: NlpProblem,
    p: Optional[AccParams] = None,
    tol: Optional[float] = None,
    options: Optional[BarrierOptions] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """
    最小化 rollout 代价 + mu * 对数障碍，mu 按几何级数减小到 mu_final。
    迭代点始终严格位于 (u_min, u_max) 内部; 最终解同时写回 prob.u_vec。
    """
    p = p or AccParams()
    opts = options or BarrierOptions()
    tol = opts.tol if tol is None else tol
    obj = _BarrierObjective(prob, p)
    lo, hi = prob.u_min, prob.u_max

    if prob.warm_start is not None:
        warm = np.asarray(prob.warm_start, dtype=float)
        if warm.shape != (prob.H,):
            raise ValueError(f"warm start has shape {warm.shape}, expected ({prob.H},)")
        margin = WARM_MARGIN * (hi - lo)
        u = np.clip(warm, lo + margin, hi - margin)
        mu = min(prob.mu, opts.mu_warm)
    else:
        u = np.full(prob.H, 0.5 * (lo + hi))
        mu = prob.mu
    mu = max(mu, opts.mu_final)

    use_newton = prob.H <= opts.newton_max_horizon
    iterations = 0
    reached_final = False
    for _ in range(opts.max_outer):
        reached_final = mu <= opts.mu_final * (1.0 + 1e-9)
        eps = max(p.eps, mu) if opts.smoothing_continuation else p.eps
        stage_tol = tol if reached_final else max(tol, mu)
        if use_newton:
            u, n = _newton_stage(obj, u, mu, eps, stage_tol, opts.max_inner)
        else:
            u, n = _bfgs_stage(obj, u, mu, eps, stage_tol, opts.max_inner_qn)
        iterations += n
        if reached_final:
            break
        mu = max(mu * opts.mu_factor, opts.mu_final)

    grad_inf = float(np.max(np.abs(obj.gradient(u, mu, p.eps))))
    report = SolveReport(
        objective=obj.cost(u, p.eps),
        iterations=iterations,
        grad_inf_norm=grad_inf,
        converged=reached_final and grad_inf < tol,
        mu=mu,
    )
    prob.u_vec = u
    return u, report


class MpcController(IController):
    """
    滚动时域 MPC: 每步从测量状态求解 H 步问题，只执行第一个指令。
    预测模型固定为 a_prec=0 的 COM，与仿真模型无关。
    """

    def __init__(
        self,
        horizon: int,
        p: AccParams,
        options: Optional[BarrierOptions] = None,
        warm_start: bool = settings.MPC_WARM_START,
    ):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        self.horizon = horizon
        self.p = p
        self.options = options or BarrierOptions()
        self.warm_start = warm_start
        self.name = f"MPC(H={horizon})"
        self._previous: Optional[np.ndarray] = None
        self._report: Optional[SolveReport] = None
        self._warnings = 0
        self.iteration_log = []

    def reset(self, world: WorldState) -> None:
        self._previous = None
        self._report = None
        self._warnings = 0
        self.iteration_log = []

    def act(self, world: WorldState) -> float:
        warm = None
        if self.warm_start and self._previous is not None:
            warm = np.append(self._previous[1:], self._previous[-1])
        prob = NlpProblem(
            H=self.horizon, s0=world.kin, u_min=self.p.u_min, u_max=self.p.u_max,
            mu=self.options.mu_init, warm_start=warm,
        )
        u, report = solve_barrier(prob, self.p, options=self.options)
        if not report.converged:
            self._warnings += 1
            logging.warning(
                f"{self.name}: solver stopped at |grad|={report.grad_inf_norm:.2e} "
                f"after {report.iterations} iterations, applying best iterate"
            )
        self._previous = u
        self._report = report
        self.iteration_log.append(report.iterations)
        return float(u[0])

    @property
    def last_report(self) -> Optional[SolveReport]:
        return self._report

    @property
    def solver_warnings(self) -> int:
        return self._warnings


class IpoController(IController):
    """整回合开环基准: 在 reset 时以 H = T 求解一次，之后按表回放"""
    name = 'IPO'

    def __init__(self, T: int, p: AccParams, options: Optional[BarrierOptions] = None):
        self.T = T
        self.p = p
        self.options = options or BarrierOptions()
        self.plan: Optional[np.ndarray] = None
        self._report: Optional[SolveReport] = None
        self._step = 0

    def reset(self, world: WorldState) -> None:
        prob = NlpProblem(H=self.T, s0=world.kin, u_min=self.p.u_min, u_max=self.p.u_max, mu=self.options.mu_init)
        self.plan, self._report = solve_barrier(prob, self.p, options=self.options)
        self._step = 0
        logging.info(
            f"IPO solved H={self.T}: objective={self._report.objective:.6f}, "
            f"iterations={self._report.iterations}, converged={self._report.converged}"
        )
        if not self._report.converged:
            logging.warning(f"IPO benchmark did not converge (|grad|={self._report.grad_inf_norm:.2e})")

    def act(self, world: WorldState) -> float:
        u = float(self.plan[min(self._step, self.T - 1)])
        self._step += 1
        return u

    @property
    def last_report(self) -> Optional[SolveReport]:
        return self._report

    @property
    def solver_warnings(self) -> int:
        return int(self._report is not None and not self._report.converged)


def mpc_controller(
    model: ModelSpec,
    s0: KinematicState,
    H: int,
    T: int,
    p: AccParams,
    options: Optional[BarrierOptions] = None,
    warm_start: bool = settings.MPC_WARM_START,
    a_prec=None,
    v_ego0: float = 0.0,
    scenario: str = '',
) -> EpisodeTrace:
    controller = MpcController(H, p, options=options, warm_start=warm_start)
    return run_episode(controller, model, s0, T, p, a_prec=a_prec, v_ego0=v_ego0, scenario=scenario)


def ipo_benchmark(
    s0: KinematicState,
    T: int,
    p: AccParams,
    options: Optional[BarrierOptions] = None,
    scenario: str = '',
) -> EpisodeTrace:
    """只在精确 COM 上定义"""
    return run_episode(IpoController(T, p, options), ModelSpec.com(), s0, T, p, scenario=scenario)
