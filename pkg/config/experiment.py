"""
实验配置文件 (key=value 文本，用 python-dotenv 解析)。

键名与 settings 中的环境变量同名，未出现的键沿用 settings 默认值。
"""
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

from dotenv import dotenv_values

from config import settings
from core.models import (
    AccParams,
    BarrierOptions,
    KinematicState,
    MethodSpec,
    ParamValidationError,
    SurrogateParams,
    TrainConfig,
)


class ConfigError(ValueError):
    """配置文件不可读、键未知或取值非法"""
    pass


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('true', '1', 'yes', 'on'):
        return True
    if value in ('false', '0', 'no', 'off'):
        return False
    raise ValueError(f"expected a boolean, got '{raw}'")


def _ints(raw: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in raw.split(',') if x.strip())


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in raw.split(',') if x.strip())


def _methods(raw: str) -> Tuple[MethodSpec, ...]:
    return tuple(MethodSpec.parse(x) for x in raw.split(',') if x.strip())


# 键 -> (分组, 字段, 解析函数)
_KEYS: Dict[str, Tuple[str, str, Callable[[str], object]]] = {
    'ACC_TIME_GAP': ('acc', 't_g', float),
    'ACC_TAU': ('acc', 'tau', float),
    'ACC_DT': ('acc', 'dt', float),
    'ACC_U_MAX': ('acc', 'u_max', float),
    'ACC_U_MIN': ('acc', 'u_min', float),
    'ACC_E_NMAX': ('acc', 'e_nmax', float),
    'ACC_ALPHA': ('acc', 'alpha', float),
    'ACC_BETA': ('acc', 'beta', float),
    'ACC_GAMMA': ('acc', 'gamma_w', float),
    'ACC_EPS': ('acc', 'eps', float),
    'ACC_STANDSTILL': ('acc', 'd_0', float),
    'ACC_BODY_LENGTH': ('acc', 'b', float),
    'SHFM_MASS': ('surrogate', 'mass', float),
    'SHFM_DRAG_AREA': ('surrogate', 'drag_area', float),
    'SHFM_C_RR': ('surrogate', 'c_rr', float),
    'SHFM_P_MAX': ('surrogate', 'p_max', float),
    'SHFM_CONTROL_DELAY': ('surrogate', 'control_delay', float),
    'SHFM_PI_KP': ('surrogate', 'pi_kp', float),
    'SHFM_PI_KI': ('surrogate', 'pi_ki', float),
    'SHFM_INNER_DT': ('surrogate', 'inner_dt', float),
    'SHFM_ACTUATOR_TAU': ('surrogate', 'actuator_tau', float),
    'SOLVER_MU_INIT': ('solver', 'mu_init', float),
    'SOLVER_MU_WARM': ('solver', 'mu_warm', float),
    'SOLVER_MU_FINAL': ('solver', 'mu_final', float),
    'SOLVER_MU_FACTOR': ('solver', 'mu_factor', float),
    'SOLVER_MAX_OUTER': ('solver', 'max_outer', int),
    'SOLVER_MAX_INNER': ('solver', 'max_inner', int),
    'SOLVER_MAX_INNER_QN': ('solver', 'max_inner_qn', int),
    'SOLVER_TOL': ('solver', 'tol', float),
    'SOLVER_NEWTON_MAX_HORIZON': ('solver', 'newton_max_horizon', int),
    'DDPG_GAMMA': ('train', 'gamma', float),
    'DDPG_TAU_TARGET': ('train', 'tau_target', float),
    'DDPG_LR_ACTOR': ('train', 'lr_actor', float),
    'DDPG_LR_CRITIC': ('train', 'lr_critic', float),
    'DDPG_BUFFER_SIZE': ('train', 'buffer_size', int),
    'DDPG_BATCH': ('train', 'batch', int),
    'DDPG_NOISE_MEAN': ('train', 'noise_mean', float),
    'DDPG_NOISE_STD': ('train', 'noise_std', float),
    'DDPG_NOISE_RELATIVE': ('train', 'noise_relative', _bool),
    'DDPG_TOTAL_STEPS': ('train', 'total_steps', int),
    'DDPG_SEEDS': ('train', 'seeds', _ints),
    'DDPG_HIDDEN': ('train', 'hidden', int),
    'EPISODE_STEPS': ('experiment', 'episode_steps', int),
    'MPC_HORIZON': ('experiment', 'mpc_horizon', int),
    'MPC_WARM_START': ('experiment', 'warm_start', _bool),
    'SWEEP_HORIZONS': ('experiment', 'sweep_horizons', _ints),
    'DELAY_VALUES': ('experiment', 'delay_values', _floats),
    'SHFM_SPEEDS': ('experiment', 'shfm_speeds', _floats),
    'SINGLE_IC': ('experiment', 'single_ic', _floats),
    'METHODS': ('experiment', 'methods', _methods),
    'CHECKPOINT_PATH': ('experiment', 'checkpoint_path', str),
}


@dataclass(frozen=True)
class ExperimentConfig:
    acc: AccParams = field(default_factory=AccParams)
    surrogate: SurrogateParams = field(default_factory=SurrogateParams)
    solver: BarrierOptions = field(default_factory=BarrierOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    episode_steps: int = settings.EPISODE_STEPS
    mpc_horizon: int = settings.MPC_HORIZON
    warm_start: bool = settings.MPC_WARM_START
    sweep_horizons: Tuple[int, ...] = tuple(settings.SWEEP_HORIZONS)
    delay_values: Tuple[float, ...] = tuple(settings.DELAY_VALUES)
    shfm_speeds: Tuple[float, ...] = tuple(settings.SHFM_SPEEDS)
    single_ic: Tuple[float, ...] = tuple(settings.SINGLE_IC)
    methods: Tuple[MethodSpec, ...] = ()
    checkpoint_path: str = settings.CHECKPOINT_PATH

    @property
    def ic(self) -> KinematicState:
        return KinematicState(*self.single_ic)

    def default_methods(self, include_ipo: bool = True) -> Tuple[MethodSpec, ...]:
        if self.methods:
            return self.methods
        base = (MethodSpec('DRL'), MethodSpec('MPC', self.mpc_horizon))
        return base + ((MethodSpec('IPO'),) if include_ipo else ())


def load_experiment_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """path 为 None 时只用 settings 默认值; overrides 优先级最高"""
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file '{path}' not found")
        values.update(dotenv_values(path))
    values.update(overrides or {})
    source = path or '<defaults>'

    grouped: Dict[str, Dict[str, object]] = {'acc': {}, 'surrogate': {}, 'solver': {}, 'train': {}, 'experiment': {}}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ConfigError(f"{source}: unknown key '{key}'")
        if raw is None or not raw.strip():
            raise ConfigError(f"{source}: key '{key}' has no value")
        group, name, parse = _KEYS[key]
        try:
            grouped[group][name] = parse(raw)
        except (ValueError, ParamValidationError) as e:
            raise ConfigError(f"{source}: key '{key}' has invalid value '{raw}': {e}") from e

    try:
        cfg = ExperimentConfig(
            acc=AccParams(**grouped['acc']),
            surrogate=SurrogateParams(**grouped['surrogate']),
            solver=BarrierOptions(**grouped['solver']),
            train=replace(
                TrainConfig(),
                episode_len=int(grouped['experiment'].get('episode_steps', settings.EPISODE_STEPS)),
                **grouped['train'],
            ),
            **grouped['experiment'],
        )
    except ParamValidationError as e:
        raise ConfigError(f"{source}: {e}") from e
    if len(cfg.single_ic) != 3:
        raise ConfigError(f"{source}: key 'SINGLE_IC' needs three values e,e_v,a_i")
    if cfg.episode_steps < 1:
        raise ConfigError(f"{source}: key 'EPISODE_STEPS' must be >= 1")
    return cfg
