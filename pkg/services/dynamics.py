"""
车辆纵向动力学: 面向控制的一阶模型 (COM)、带纯时延的 COM，以及代理高保真模型 (SHFM)。

所有 step 函数都是纯函数: 输入 WorldState (含延迟缓冲等内部记忆)，返回新的 WorldState。
"""
import math
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np

from core.models import (
    AccParams,
    KinematicState,
    ModelSpec,
    PlantMemory,
    StepOutcome,
    SurrogateParams,
    WorldState,
)

GRAVITY = 9.81
# 低于该速度时滚阻按 tanh 渐入，静止时为 0
ROLLING_RAMP_SPEED = 0.1
POWER_SPEED_FLOOR = 0.1


def rk4(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = fn(x)
    k2 = fn(x + 0.5 * h * k1)
    k3 = fn(x + 0.5 * h * k2)
    k4 = fn(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _com_rate(x: np.ndarray, u: float, a_prec: float, p: AccParams) -> np.ndarray:
    e_v, a_i = x[1], x[2]
    return np.array([e_v - p.t_g * a_i, a_prec - a_i, (u - a_i) / p.tau])


def com_derivative(s: KinematicState, u: float, a_prec: float, p: AccParams) -> KinematicState:
    """状态方程 (ė, ė_v, ȧ_i)，以 KinematicState 形式返回变化率"""
    return KinematicState.from_array(_com_rate(s.as_array(), u, a_prec, p))


def rk4_step(s: KinematicState, u: float, a_prec: float, dt: float, p: AccParams) -> KinematicState:
    """零阶保持 u 的经典四阶 Runge-Kutta 一步"""
    x = rk4(lambda y: _com_rate(y, u, a_prec, p), s.as_array(), dt)
    return KinematicState.from_array(x)


@lru_cache(maxsize=32)
def com_matrices(p: AccParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    数值提取 RK4 离散化后的仿射映射 s' = Ad s + Bd u (a_prec = 0)。
    COM 是线性的，RK4 保持线性，因此 Ad, Bd 与工作点无关。
    """
    zero = KinematicState(0.0, 0.0, 0.0)
    Ad = np.column_stack([
        rk4_step(KinematicState.from_array(col), 0.0, 0.0, p.dt, p).as_array()
        for col in np.eye(3)
    ])
    Bd = rk4_step(zero, 1.0, 0.0, p.dt, p).as_array()
    Ad.setflags(write=False)
    Bd.setflags(write=False)
    return Ad, Bd


# --- WorldState 构造 ---

def initial_world(model: ModelSpec, s0: KinematicState, p: AccParams, v_ego0: float = 0.0) -> WorldState:
    """
    由初始条件构造世界状态: 本车位于原点，前车位置由期望车距反推。
    延迟缓冲用 a_i,0 预填充。
    """
    x_prec = p.b + p.d_0 + p.t_g * v_ego0 + s0.e
    v_prec = v_ego0 + s0.e_v
    commands = (s0.a_i,) * model.delay_steps() if model.variant != 'com' else ()
    memory = PlantMemory(commands=commands, a_ref=s0.a_i)
    if model.variant == 'shfm':
        memory = PlantMemory(
            commands=commands,
            a_ref=s0.a_i,
            force=model.surrogate.mass * s0.a_i + resistive_force(v_ego0, model.surrogate),
        )
    return WorldState(x_prec=x_prec, v_prec=v_prec, x_ego=0.0, v_ego=v_ego0, kin=s0, memory=memory)


def _split_commands(model: ModelSpec, memory: PlantMemory, u: float, p: AccParams) -> Tuple[Sequence[float], Tuple[float, ...]]:
    """返回本步 inner_dt 分辨率下实际作用的指令，以及剩余的待执行指令"""
    n_sub = model.substeps(p)
    queue = memory.commands + (u,) * n_sub
    return queue[:n_sub], queue[n_sub:]


# --- COM / DelayedCOM ---

def _com_world_step(w: WorldState, u: float, a_prec: float, h: float, p: AccParams) -> WorldState:
    def rate(z: np.ndarray) -> np.ndarray:
        return np.array([z[1], a_prec, z[3], z[4], (u - z[4]) / p.tau])

    z = rk4(rate, np.array([w.x_prec, w.v_prec, w.x_ego, w.v_ego, w.kin.a_i]), h)
    kin = rk4_step(w.kin, u, a_prec, h, p)
    return WorldState(
        x_prec=float(z[0]), v_prec=float(z[1]), x_ego=float(z[2]), v_ego=float(z[3]),
        kin=kin, memory=w.memory,
    )


def _step_delayed(model: ModelSpec, w: WorldState, u: float, a_prec: float, p: AccParams) -> StepOutcome:
    applied, pending = _split_commands(model, w.memory, u, p)
    if all(c == applied[0] for c in applied):
        w_next = _com_world_step(w, applied[0], a_prec, p.dt, p)
    else:
        w_next = w
        for cmd in applied:
            w_next = _com_world_step(w_next, cmd, a_prec, model.inner_dt, p)
    w_next = WorldState(
        x_prec=w_next.x_prec, v_prec=w_next.v_prec, x_ego=w_next.x_ego, v_ego=w_next.v_ego,
        kin=w_next.kin, memory=PlantMemory(commands=tuple(pending)),
    )
    return StepOutcome(world=w_next, realized_accel=w_next.kin.a_i)


# --- SHFM ---

def resistive_force(v: float, sp: SurrogateParams) -> float:
    return sp.drag_area * v * v + sp.c_rr * sp.mass * GRAVITY * math.tanh(v / ROLLING_RAMP_SPEED)


def traction_limit(v: float, sp: SurrogateParams, p: AccParams) -> float:
    force_cap = sp.mass * max(abs(p.u_min), abs(p.u_max))
    return min(force_cap, sp.p_max / max(v, POWER_SPEED_FLOOR))


def _saturate(force: float, v: float, sp: SurrogateParams, p: AccParams) -> Tuple[float, bool]:
    force_cap = sp.mass * max(abs(p.u_min), abs(p.u_max))
    if force > 0:
        limit = traction_limit(v, sp, p)
        # 功率约束比力约束更紧且生效时才算 power-limited
        power_bound = sp.p_max / max(v, POWER_SPEED_FLOOR)
        return min(force, limit), force > power_bound and power_bound < force_cap
    return max(force, -force_cap), False


def _shfm_accel(v: float, force: float, sp: SurrogateParams, p: AccParams) -> float:
    applied, _ = _saturate(force, v, sp, p)
    a = (applied - resistive_force(v, sp)) / sp.mass
    if v <= 0.0 and a < 0.0:
        return 0.0
    return a


def _shfm_rate(y: np.ndarray, u_d: float, a_prec: float, sp: SurrogateParams, p: AccParams) -> np.ndarray:
    # y = [x_prec, v_prec, x_ego, v_ego, force, pi_integral, a_ref]
    v, force, integral, a_ref = y[3], y[4], y[5], y[6]
    a = _shfm_accel(v, force, sp, p)
    err = a_ref - a
    force_cmd = resistive_force(v, sp) + sp.mass * (a_ref + sp.pi_kp * err + sp.pi_ki * integral)
    applied, _ = _saturate(force, v, sp, p)
    # anti-windup: 饱和时不再沿饱和方向积分
    saturated = applied != force and (applied - force) * err < 0
    return np.array([
        y[1],
        a_prec,
        v,
        a,
        (force_cmd - force) / sp.actuator_tau,
        0.0 if saturated else err,
        (u_d - a_ref) / p.tau,
    ])


def _step_shfm(model: ModelSpec, w: WorldState, u: float, a_prec: float, p: AccParams) -> StepOutcome:
    sp = model.surrogate
    applied, pending = _split_commands(model, w.memory, u, p)
    mem = w.memory
    y = np.array([w.x_prec, w.v_prec, w.x_ego, w.v_ego, mem.force, mem.pi_integral, mem.a_ref])
    power_limited = False
    for u_d in applied:
        power_limited |= _saturate(y[4], y[3], sp, p)[1]
        y = rk4(lambda z: _shfm_rate(z, u_d, a_prec, sp, p), y, model.inner_dt)
        if y[3] < 0.0:
            # 不允许倒车
            y[3] = 0.0
    a_end = _shfm_accel(y[3], y[4], sp, p)
    world = WorldState(
        x_prec=float(y[0]), v_prec=float(y[1]), x_ego=float(y[2]), v_ego=float(y[3]),
        kin=KinematicState(0.0, 0.0, a_end),
        memory=PlantMemory(commands=tuple(pending), pi_integral=float(y[5]), a_ref=float(y[6]), force=float(y[4])),
    )
    kin = KinematicState(world.gap_error(p), world.velocity_error(), a_end)
    world = WorldState(world.x_prec, world.v_prec, world.x_ego, world.v_ego, kin, world.memory)
    return StepOutcome(world=world, realized_accel=a_end, power_limited=bool(power_limited))


def step_model(model: ModelSpec, w: WorldState, u: float, a_prec: float, p: AccParams) -> StepOutcome:
    """按 ModelSpec 推进一个控制周期 dt; u 由调用者预先限幅"""
    if model.variant == 'com':
        w_next = _com_world_step(w, u, a_prec, p.dt, p)
        return StepOutcome(world=w_next, realized_accel=w_next.kin.a_i)
    if model.variant == 'delayed_com':
        return _step_delayed(model, w, u, a_prec, p)
    return _step_shfm(model, w, u, a_prec, p)
