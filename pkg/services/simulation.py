"""
闭环回合驱动: 所有实验 (DRL / MPC / IPO, COM / DelayedCOM / SHFM) 共用同一个 run_episode。
"""
import logging
import time
from typing import Optional, Sequence

import numpy as np

from core.interfaces import IController
from core.models import AccParams, EpisodeTrace, KinematicState, ModelSpec, ParamValidationError
from services.cost import finite_difference_jerk, stage_costs
from services.dynamics import initial_world, step_model


def _lead_profile(a_prec: Optional[Sequence[float]], T: int) -> np.ndarray:
    if a_prec is None:
        return np.zeros(T)
    lead = np.asarray(a_prec, dtype=float)
    if lead.size < T:
        raise ParamValidationError(f"preceding-vehicle profile has {lead.size} samples, episode needs {T}")
    return lead[:T]


def run_episode(
    controller: IController,
    model: ModelSpec,
    s0: KinematicState,
    T: int,
    p: AccParams,
    a_prec: Optional[Sequence[float]] = None,
    v_ego0: float = 0.0,
    scenario: str = '',
) -> EpisodeTrace:
    """
    推进 T 个控制周期并逐步记录。
    指令在作用前被限幅到 [u_min, u_max]; 控制器耗时与仿真耗时分开统计。
    """
    if T < 1:
        raise ParamValidationError(f"episode length must be >= 1, got {T}")
    lead = _lead_profile(a_prec, T)
    world = initial_world(model, s0, p, v_ego0)

    e = np.empty(T)
    ev = np.empty(T)
    a = np.empty(T)
    u = np.empty(T)
    power_limited = np.zeros(T, dtype=bool)
    controller_seconds = 0.0
    sim_seconds = 0.0

    start = time.perf_counter()
    controller.reset(world)
    controller_seconds += time.perf_counter() - start

    for t in range(T):
        e[t], ev[t], a[t] = world.kin.e, world.kin.e_v, world.kin.a_i

        start = time.perf_counter()
        u[t] = p.clamp(controller.act(world))
        controller_seconds += time.perf_counter() - start

        start = time.perf_counter()
        outcome = step_model(model, world, u[t], lead[t], p)
        sim_seconds += time.perf_counter() - start
        power_limited[t] = outcome.power_limited
        world = outcome.world

        if not world.kin.is_finite():
            raise FloatingPointError(f"{controller.name} on {model.label} produced a non-finite state at step {t}")

    jerk = finite_difference_jerk(a, p.dt, world.kin.a_i)
    trace = EpisodeTrace(
        t=np.arange(T) * p.dt,
        e=e,
        ev=ev,
        a=a,
        u=u,
        jerk=jerk,
        stage_cost=stage_costs(e, u, jerk, p),
        power_limited=power_limited,
        method=controller.name,
        scenario=scenario,
        controller_seconds=controller_seconds,
        sim_seconds=sim_seconds,
        solver_warnings=controller.solver_warnings,
    )
    logging.debug(f"{scenario or 'episode'}: {controller.name} on {model.label} cost={trace.cost:.4f}")
    return trace
