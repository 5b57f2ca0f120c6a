"""
一阶惯性环节时间常数辨识: 用记录的指令加速度和实际加速度拟合 tau。
"""
import logging

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter

TAU_BOUNDS = (1e-3, 2.0)


def rk4_lag_gain(h: float, tau: float) -> float:
    """RK4 一步作用在 a' = (u - a)/tau 上的增益: a+ = a + gain * (u - a)"""
    x = h / tau
    return x - x ** 2 / 2 + x ** 3 / 6 - x ** 4 / 24


def first_order_response(u, a0: float, tau: float, dt: float, delay_steps: int = 0) -> np.ndarray:
    """按 RK4 离散化回放一阶滞后，延迟缓冲用 a0 预填充"""
    u = np.asarray(u, dtype=float)
    applied = np.concatenate([np.full(delay_steps, a0), u])[: u.size]
    g = rk4_lag_gain(dt, tau)
    forced = lfilter([0.0, g], [1.0, g - 1.0], applied)
    return forced + a0 * (1.0 - g) ** np.arange(u.size)


def identify_time_constant(u, a, dt: float, delay_steps: int = 0) -> float:
    u = np.asarray(u, dtype=float)
    a = np.asarray(a, dtype=float)
    if u.shape != a.shape or u.size < 3:
        raise ValueError("need matching command/acceleration logs with at least 3 samples")

    def residual(tau: float) -> float:
        return float(np.mean((first_order_response(u, a[0], tau, dt, delay_steps) - a) ** 2))

    result = minimize_scalar(residual, bounds=TAU_BOUNDS, method='bounded', options={'xatol': 1e-6})
    logging.debug(f"Identified tau={result.x:.4f} s (rms={np.sqrt(result.fun):.3e})")
    return float(result.x)
