import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.models import AccParams, KinematicState, ModelSpec, ParamValidationError, SurrogateParams
from services.drl.agent import DrlController
from services.dynamics import (
    com_derivative,
    com_matrices,
    initial_world,
    resistive_force,
    rk4_step,
    step_model,
)
from services.simulation import run_episode
from tests.doubles import ConstantController
from tests.oracles import exact_step, taylor_rk4_step

ZERO = KinematicState(0.0, 0.0, 0.0)
P = AccParams()


def _piecewise_commands(rng, seconds: float, hold: float, dt: float):
    holds = rng.uniform(-3.0, 2.0, size=int(round(seconds / hold)))
    return np.repeat(holds, int(round(hold / dt)))


def test_derivative_matches_state_equation(p):
    d = com_derivative(KinematicState(1.0, 2.0, 0.5), u=1.5, a_prec=0.3, p=p)
    assert d.e == pytest.approx(2.0 - p.t_g * 0.5)
    assert d.e_v == pytest.approx(0.3 - 0.5)
    assert d.a_i == pytest.approx((1.5 - 0.5) / p.tau)


def test_single_step_from_rest(p):
    s1 = rk4_step(ZERO, 1.0, 0.0, p.dt, p)
    # h/tau = 1: 1 - (1 - 1 + 1/2 - 1/6 + 1/24)
    assert s1.a_i == pytest.approx(0.625, abs=1e-12)


def test_control_step_rk4_is_not_the_exact_step(p):
    # dt = tau 时单步 RK4 与 expm 相差约 7e-3，1e-6 只能在细分步长后达到
    s1 = rk4_step(ZERO, 1.0, 0.0, p.dt, p)
    x1 = exact_step(ZERO.as_array(), 1.0, p.dt, p)
    assert x1[2] == pytest.approx(1.0 - math.exp(-p.dt / p.tau))
    assert abs(s1.a_i - x1[2]) > 5e-3


def test_rk4_matches_truncated_exponential(p):
    rng = np.random.default_rng(3)
    u = _piecewise_commands(rng, 20.0, 1.0, p.dt)
    s = KinematicState(5.0, 5.0, 0.0)
    x = s.as_array()
    for u_k in u:
        s = rk4_step(s, float(u_k), 0.0, p.dt, p)
        x = taylor_rk4_step(x, float(u_k), p.dt, p)
        assert np.max(np.abs(s.as_array() - x)) < 1e-9


@given(
    st.floats(min_value=-3.0, max_value=2.0),
    st.lists(st.floats(min_value=-3.0, max_value=2.0), min_size=1, max_size=40),
)
def test_acceleration_stays_within_command_bounds(a0, commands):
    s = KinematicState(0.0, 0.0, a0)
    for u in commands:
        s = rk4_step(s, u, 0.0, P.dt, P)
        assert P.u_min - 1e-12 <= s.a_i <= P.u_max + 1e-12


def test_refined_rk4_converges_to_exact_solution(p):
    rng = np.random.default_rng(4)
    u = _piecewise_commands(rng, 20.0, 1.0, p.dt)
    h = 0.001
    sub = int(round(p.dt / h))
    s = KinematicState(5.0, 5.0, 0.0)
    x = s.as_array()
    for u_k in u:
        for _ in range(sub):
            s = rk4_step(s, float(u_k), 0.0, h, p)
        x = exact_step(x, float(u_k), p.dt, p)
    assert np.max(np.abs(s.as_array() - x)) < 1e-6


def test_discrete_matrices_match_truncated_exponential(p):
    Ad, Bd = com_matrices(p)
    for i in range(3):
        assert np.allclose(Ad[:, i], taylor_rk4_step(np.eye(3)[i], 0.0, p.dt, p), atol=1e-14)
    assert np.allclose(Bd, taylor_rk4_step(np.zeros(3), 1.0, p.dt, p), atol=1e-14)
    assert not Ad.flags.writeable


def test_world_and_kinematic_states_agree_on_com(p):
    model = ModelSpec.com()
    world = initial_world(model, KinematicState(3.0, -1.0, 0.5), p, v_ego0=12.0)
    assert world.gap_error(p) == pytest.approx(3.0)
    for u in (1.0, -2.0, 0.5, 0.0):
        world = step_model(model, world, u, 0.2, p).world
        assert world.gap_error(p) == pytest.approx(world.kin.e, abs=1e-9)
        assert world.velocity_error() == pytest.approx(world.kin.e_v, abs=1e-9)


def test_zero_delay_is_bit_identical_to_com(p, tiny_nets):
    s0 = KinematicState(-2.5, 2.5, -3.0)
    com = run_episode(DrlController(tiny_nets), ModelSpec.com(), s0, 50, p)
    delayed = run_episode(DrlController(tiny_nets), ModelSpec.delayed(0.0), s0, 50, p)
    for name in ('e', 'ev', 'a', 'u'):
        assert np.array_equal(getattr(com, name), getattr(delayed, name))


def test_delay_holds_the_command_back(p):
    model = ModelSpec.delayed(0.2)
    world = initial_world(model, ZERO, p)
    accels = []
    for _ in range(3):
        outcome = step_model(model, world, 1.0, 0.0, p)
        world = outcome.world
        accels.append(outcome.realized_accel)
    assert accels[0] == 0.0
    assert accels[1] == 0.0
    assert accels[2] == pytest.approx(0.625, abs=1e-12)


def test_delay_must_be_a_multiple_of_inner_step():
    with pytest.raises(ParamValidationError):
        ModelSpec.delayed(0.015)
    with pytest.raises(ParamValidationError):
        SurrogateParams(control_delay=0.005)


@pytest.mark.parametrize('kwargs', [
    {'alpha': 0.5, 'beta': 0.5, 'gamma_w': 0.5},
    {'alpha': -0.1, 'beta': 0.6, 'gamma_w': 0.5},
    {'u_min': 1.0},
    {'tau': 0.0},
])
def test_invalid_acc_params_are_rejected(kwargs):
    with pytest.raises(ParamValidationError):
        AccParams(**kwargs)


def test_shfm_holds_steady_cruise(p):
    model = ModelSpec.surrogate_hfm()
    world = initial_world(model, ZERO, p, v_ego0=20.0)
    for _ in range(50):
        world = step_model(model, world, 0.0, 0.0, p).world
    assert abs(world.kin.e) < 1e-9
    assert abs(world.kin.a_i) < 1e-9
    assert world.v_ego == pytest.approx(20.0, abs=1e-9)


def test_shfm_flags_power_limit_only_at_speed(p):
    model = ModelSpec.surrogate_hfm()
    flags = {}
    for v0 in (5.0, 25.0):
        world = initial_world(model, ZERO, p, v_ego0=v0)
        limited = False
        for _ in range(20):
            outcome = step_model(model, world, p.u_max, 0.0, p)
            world = outcome.world
            limited |= outcome.power_limited
        flags[v0] = limited
    assert flags == {5.0: False, 25.0: True}


def test_shfm_does_not_reverse(p):
    model = ModelSpec.surrogate_hfm()
    world = initial_world(model, ZERO, p, v_ego0=1.0)
    for _ in range(40):
        world = step_model(model, world, p.u_min, 0.0, p).world
        assert world.v_ego >= 0.0
    assert world.v_ego == 0.0


def test_resistive_force_vanishes_at_standstill():
    sp = SurrogateParams()
    assert resistive_force(0.0, sp) == 0.0
    assert resistive_force(20.0, sp) == pytest.approx(sp.drag_area * 400 + sp.c_rr * sp.mass * 9.81, rel=1e-9)


def test_shfm_approaches_com_as_tracking_gain_grows(p):
    s0 = ZERO
    reference = run_episode(ConstantController(1.0), ModelSpec.com(), s0, 30, p, v_ego0=10.0)
    errors = []
    for kp in (1.0, 3.0, 8.0):
        model = ModelSpec.surrogate_hfm(SurrogateParams(p_max=math.inf, control_delay=0.0, pi_kp=kp))
        trace = run_episode(ConstantController(1.0), model, s0, 30, p, v_ego0=10.0)
        errors.append(float(np.max(np.abs(trace.a - reference.a))))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.5 * errors[0]
