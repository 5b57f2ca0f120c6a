import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from config import settings


class ParamValidationError(ValueError):
    """参数不满足物理或数值约束时抛出"""
    pass


@dataclass(frozen=True)
class KinematicState:
    """ACC 三状态: 车距误差 e (m), 相对速度 e_v (m/s), 本车加速度 a_i (m/s²)"""
    e: float
    e_v: float
    a_i: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e, self.e_v, self.a_i], dtype=float)

    @classmethod
    def from_array(cls, x) -> "KinematicState":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def __add__(self, other: "KinematicState") -> "KinematicState":
        return KinematicState(self.e + other.e, self.e_v + other.e_v, self.a_i + other.a_i)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.e, self.e_v, self.a_i))


@dataclass(frozen=True)
class AccParams:
    t_g: float = settings.ACC_TIME_GAP
    tau: float = settings.ACC_TAU
    dt: float = settings.ACC_DT
    u_max: float = settings.ACC_U_MAX
    u_min: float = settings.ACC_U_MIN
    e_nmax: float = settings.ACC_E_NMAX
    alpha: float = settings.ACC_ALPHA
    beta: float = settings.ACC_BETA
    gamma_w: float = settings.ACC_GAMMA
    eps: float = settings.ACC_EPS
    d_0: float = settings.ACC_STANDSTILL
    b: float = settings.ACC_BODY_LENGTH

    def __post_init__(self):
        weights = (self.alpha, self.beta, self.gamma_w)
        if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ParamValidationError(f"cost weights must be >= 0 and sum to 1, got {weights}")
        if not self.u_min < 0 < self.u_max:
            raise ParamValidationError(f"need u_min < 0 < u_max, got [{self.u_min}, {self.u_max}]")
        for name in ('tau', 'dt', 'eps', 'e_nmax'):
            if getattr(self, name) <= 0:
                raise ParamValidationError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def jerk_scale(self) -> float:
        return (self.u_max - self.u_min) / self.dt

    @property
    def u_mid(self) -> float:
        return 0.5 * (self.u_max + self.u_min)

    @property
    def u_half(self) -> float:
        return 0.5 * (self.u_max - self.u_min)

    def clamp(self, u: float) -> float:
        return min(max(u, self.u_min), self.u_max)


def _is_multiple(value: float, step: float) -> bool:
    n = round(value / step)
    return abs(n * step - value) <= 1e-9 * max(1.0, abs(value))


@dataclass(frozen=True)
class SurrogateParams:
    """代理高保真模型参数，数值为 Prius 级别的假设值"""
    mass: float = settings.SHFM_MASS
    drag_area: float = settings.SHFM_DRAG_AREA
    c_rr: float = settings.SHFM_C_RR
    p_max: float = settings.SHFM_P_MAX
    control_delay: float = settings.SHFM_CONTROL_DELAY
    pi_kp: float = settings.SHFM_PI_KP
    pi_ki: float = settings.SHFM_PI_KI
    inner_dt: float = settings.SHFM_INNER_DT
    actuator_tau: float = settings.SHFM_ACTUATOR_TAU

    def __post_init__(self):
        if self.mass <= 0:
            raise ParamValidationError(f"mass must be positive, got {self.mass}")
        if self.p_max <= 0:
            raise ParamValidationError(f"p_max must be positive, got {self.p_max}")
        if self.inner_dt <= 0 or self.actuator_tau <= 0:
            raise ParamValidationError("inner_dt and actuator_tau must be positive")
        if self.control_delay < 0 or not _is_multiple(self.control_delay, self.inner_dt):
            raise ParamValidationError(
                f"control_delay {self.control_delay} is not a non-negative multiple of inner_dt {self.inner_dt}"
            )


@dataclass(frozen=True)
class ModelSpec:
    """仿真对象: 'com' | 'delayed_com' | 'shfm'"""
    variant: str = 'com'
    tau_d: float = 0.0
    surrogate: Optional[SurrogateParams] = None
    inner_dt: float = settings.SHFM_INNER_DT

    def __post_init__(self):
        if self.variant not in ('com', 'delayed_com', 'shfm'):
            raise ParamValidationError(f"unknown model variant '{self.variant}'")
        if self.variant == 'shfm' and self.surrogate is None:
            raise ParamValidationError("shfm variant needs SurrogateParams")
        if self.tau_d < 0 or not _is_multiple(self.tau_d, self.inner_dt):
            raise ParamValidationError(
                f"tau_d {self.tau_d} is not a non-negative multiple of inner_dt {self.inner_dt}"
            )

    @classmethod
    def com(cls) -> "ModelSpec":
        return cls('com')

    @classmethod
    def delayed(cls, tau_d: float, inner_dt: float = settings.SHFM_INNER_DT) -> "ModelSpec":
        return cls('delayed_com', tau_d=tau_d, inner_dt=inner_dt)

    @classmethod
    def surrogate_hfm(cls, params: Optional[SurrogateParams] = None) -> "ModelSpec":
        params = params or SurrogateParams()
        return cls('shfm', tau_d=params.control_delay, surrogate=params, inner_dt=params.inner_dt)

    @property
    def label(self) -> str:
        if self.variant == 'com':
            return 'COM'
        if self.variant == 'delayed_com':
            return f"DelayedCOM({self.tau_d:g}s)"
        return 'SHFM'

    def substeps(self, p: AccParams) -> int:
        n = round(p.dt / self.inner_dt)
        if n < 1 or not _is_multiple(p.dt, self.inner_dt):
            raise ParamValidationError(f"inner_dt {self.inner_dt} does not divide dt {p.dt}")
        return n

    def delay_steps(self) -> int:
        return int(round(self.tau_d / self.inner_dt))


@dataclass(frozen=True)
class PlantMemory:
    """延迟缓冲(inner_dt 分辨率, 最旧在前)以及 SHFM 的内部状态"""
    commands: Tuple[float, ...] = ()
    pi_integral: float = 0.0
    a_ref: float = 0.0
    force: float = 0.0


@dataclass(frozen=True)
class WorldState:
    x_prec: float
    v_prec: float
    x_ego: float
    v_ego: float
    kin: KinematicState
    memory: PlantMemory = field(default_factory=PlantMemory)

    def gap_error(self, p: AccParams) -> float:
        return self.x_prec - self.x_ego - p.b - (p.d_0 + p.t_g * self.v_ego)

    def velocity_error(self) -> float:
        return self.v_prec - self.v_ego


@dataclass(frozen=True)
class StepOutcome:
    world: WorldState
    realized_accel: float
    power_limited: bool = False


@dataclass(frozen=True)
class StageCostBreakdown:
    c_err: float
    c_ctrl: float
    c_jerk: float
    total: float


@dataclass(eq=False)
class EpisodeTrace:
    """逐步记录; 第 t 行是第 t 步开始时的状态和该步的指令"""
    t: np.ndarray
    e: np.ndarray
    ev: np.ndarray
    a: np.ndarray
    u: np.ndarray
    jerk: np.ndarray
    stage_cost: np.ndarray
    power_limited: np.ndarray
    method: str = ''
    scenario: str = ''
    controller_seconds: float = 0.0
    sim_seconds: float = 0.0
    solver_warnings: int = 0

    def __len__(self) -> int:
        return len(self.t)

    @property
    def cost(self) -> float:
        return float(np.sum(self.stage_cost))


@dataclass(frozen=True)
class SolveReport:
    objective: float
    iterations: int
    grad_inf_norm: float
    converged: bool
    mu: float = 0.0


@dataclass(eq=False)
class NlpProblem:
    """单步打靶的决策问题: H 个指令, 盒约束, 障碍参数"""
    H: int
    s0: KinematicState
    u_min: float
    u_max: float
    mu: float = settings.SOLVER_MU_INIT
    u_vec: Optional[np.ndarray] = None
    warm_start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.H < 1:
            raise ParamValidationError(f"horizon must be >= 1, got {self.H}")
        if not self.u_min < self.u_max:
            raise ParamValidationError("u_min must be below u_max")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = settings.DDPG_GAMMA
    tau_target: float = settings.DDPG_TAU_TARGET
    lr_actor: float = settings.DDPG_LR_ACTOR
    lr_critic: float = settings.DDPG_LR_CRITIC
    buffer_size: int = settings.DDPG_BUFFER_SIZE
    batch: int = settings.DDPG_BATCH
    noise_mean: float = settings.DDPG_NOISE_MEAN
    noise_std: float = settings.DDPG_NOISE_STD
    noise_relative: bool = False
    total_steps: int = settings.DDPG_TOTAL_STEPS
    episode_len: int = settings.EPISODE_STEPS
    seeds: Tuple[int, ...] = tuple(settings.DDPG_SEEDS)
    hidden: int = settings.DDPG_HIDDEN
    warmup_batches: int = 10
    e_range: Tuple[float, float] = (-5.0, 5.0)
    ev_range: Tuple[float, float] = (-5.0, 5.0)
    ai_range: Tuple[float, float] = (-3.0, 2.0)


@dataclass(frozen=True)
class IcGrid:
    name: str
    e0_values: Tuple[float, ...]
    ev0_values: Tuple[float, ...] = (-5.0, -2.5, 0.0, 2.5, 5.0)
    ai0_values: Tuple[float, ...] = (-3.0, 0.0, 2.0)

    @classmethod
    def in_range(cls) -> "IcGrid":
        return cls('in', (-5.0, -2.5, 0.0, 2.5, 5.0))

    @classmethod
    def cut_in(cls) -> "IcGrid":
        return cls('cutin', (-20.0, -17.5, -15.0, -12.5, -10.0))

    def initial_conditions(self) -> List[KinematicState]:
        return [
            KinematicState(e0, ev0, ai0)
            for e0, ev0, ai0 in itertools.product(self.e0_values, self.ev0_values, self.ai0_values)
        ]


@dataclass(eq=False)
class DriveCycle:
    name: str
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.shape != self.v.shape or self.t.size < 2:
            raise ParamValidationError(f"cycle '{self.name}' needs matching time/speed samples")
        if np.any(np.diff(self.t) <= 0):
            raise ParamValidationError(f"cycle '{self.name}' time is not strictly increasing")
        if np.any(self.v < 0):
            raise ParamValidationError(f"cycle '{self.name}' has negative speeds")

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


@dataclass
class SummaryRow:
    scenario: str
    method: str
    episode_cost: float
    e_min: float
    e_mean: float
    e_max: float
    j_min: float
    j_mean: float
    j_max: float
    baseline_cost: Optional[float] = None
    baseline_method: Optional[str] = None
    controller_seconds: float = 0.0

    @property
    def increase_pct(self) -> Optional[float]:
        if self.baseline_cost is None:
            return None
        return (self.episode_cost / self.baseline_cost - 1.0) * 100.0


@dataclass(frozen=True)
class BarrierOptions:
    """内点法调度参数; mu 从 mu_init 每轮乘以 mu_factor, 截断到 mu_final"""
    mu_init: float = settings.SOLVER_MU_INIT
    mu_warm: float = settings.SOLVER_MU_WARM
    mu_final: float = settings.SOLVER_MU_FINAL
    mu_factor: float = settings.SOLVER_MU_FACTOR
    max_outer: int = settings.SOLVER_MAX_OUTER
    max_inner: int = settings.SOLVER_MAX_INNER
    max_inner_qn: int = settings.SOLVER_MAX_INNER_QN
    tol: float = settings.SOLVER_TOL
    newton_max_horizon: int = settings.SOLVER_NEWTON_MAX_HORIZON
    # 平滑参数随 mu 一起收紧到 AccParams.eps
    smoothing_continuation: bool = True

    def __post_init__(self):
        if not 0 < self.mu_final <= self.mu_warm <= self.mu_init:
            raise ParamValidationError("need 0 < mu_final <= mu_warm <= mu_init")
        if not 0 < self.mu_factor < 1:
            raise ParamValidationError(f"mu_factor must lie in (0, 1), got {self.mu_factor}")
        if min(self.max_outer, self.max_inner, self.max_inner_qn) < 1 or self.tol <= 0:
            raise ParamValidationError("iteration caps and tol must be positive")


@dataclass(frozen=True)
class MethodSpec:
    """'DRL' | 'MPC' (需要 horizon) | 'IPO'"""
    kind: str
    horizon: int = 0

    def __post_init__(self):
        if self.kind not in ('DRL', 'MPC', 'IPO'):
            raise ParamValidationError(f"unknown method '{self.kind}'")
        if self.kind == 'MPC' and self.horizon < 1:
            raise ParamValidationError(f"MPC needs a horizon >= 1, got {self.horizon}")

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        """接受 DRL, IPO, MPC50, MPC(H=50)"""
        raw = text.strip().upper()
        if raw in ('DRL', 'IPO'):
            return cls(raw)
        if raw.startswith('MPC'):
            digits = ''.join(ch for ch in raw[3:] if ch.isdigit())
            if digits:
                return cls('MPC', int(digits))
        raise ParamValidationError(f"cannot parse method '{text}'")

    @property
    def label(self) -> str:
        return f"MPC(H={self.horizon})" if self.kind == 'MPC' else self.kind
