import math

import numpy as np
import pytest

from koopman_mpc.dynamics import (
    CartPoleParams,
    cartpole_accelerations,
    cartpole_plant,
    clip_residual,
    extract_residual,
    rk4_step,
)
from koopman_mpc.errors import NumericError

PARAMS = CartPoleParams(1.0, 0.1, 0.5, 9.8)
DT = 1.0 / 15.0


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        CartPoleParams(cart_mass=0.0)
    with pytest.raises(ValueError):
        CartPoleParams(pole_mass=-0.1)


def test_scaled_leaves_gravity_alone():
    p = PARAMS.scaled(0.75)
    assert p.cart_mass == pytest.approx(0.75)
    assert p.pole_mass == pytest.approx(0.075)
    assert p.half_length == pytest.approx(0.375)
    assert p.gravity == 9.8


def test_accelerations_upright_unforced():
    xdd, thetadd = cartpole_accelerations(PARAMS, np.zeros(4), 0.0)
    assert xdd == 0.0 and thetadd == 0.0


def test_accelerations_upright_unit_force():
    # hand evaluation at theta=0, thetadot=0, F=1
    xdd, thetadd = cartpole_accelerations(PARAMS, np.zeros(4), 1.0)
    assert thetadd == pytest.approx(-1.4634146, abs=1e-7)
    assert xdd == pytest.approx(0.9756098, abs=1e-7)


def test_accelerations_downward_equilibrium():
    xdd, thetadd = cartpole_accelerations(PARAMS, np.array([0, 0, np.pi, 0.0]), 0.0)
    assert xdd == pytest.approx(0.0, abs=1e-15)
    assert thetadd == pytest.approx(0.0, abs=1e-14)


def test_accelerations_batched():
    states = np.stack([np.zeros(4), np.array([0, 0, 0.3, 0.5])])
    forces = np.array([1.0, -2.0])
    xdd, thetadd = cartpole_accelerations(PARAMS, states, forces)
    for i in range(2):
        xi, ti = cartpole_accelerations(PARAMS, states[i], forces[i])
        assert xdd[i] == pytest.approx(float(xi))
        assert thetadd[i] == pytest.approx(float(ti))


def test_input_matrix_matches_affine_decomposition():
    plant = cartpole_plant(PARAMS, DT)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1, 1, size=4)
        F = float(rng.uniform(-5, 5))
        full = plant.derivative(x, np.array([F]))
        affine = plant.drift(x) + plant.input_matrix(x)[..., 0] * F
        np.testing.assert_allclose(full, affine, atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, np.pi])
def test_equilibria_are_fixed_points(theta):
    plant = cartpole_plant(PARAMS, DT)
    x = np.array([0.0, 0.0, theta, 0.0])
    np.testing.assert_allclose(rk4_step(plant, x, np.zeros(1)), x, atol=1e-12)


def test_residual_is_added_once():
    plant = cartpole_plant(PARAMS, DT)
    x = np.array([0.1, -0.2, 0.3, 0.4])
    u = np.array([1.5])
    r = np.array([0.01, 0.0, -0.02, 0.003])
    np.testing.assert_allclose(
        rk4_step(plant, x, u, r), rk4_step(plant, x, u) + r, atol=0
    )


def _fine_step_reference(x0, total, dt=1e-5):
    # independent scalar-math integrator
    m_c, m_p, l, g = 1.0, 0.1, 0.5, 9.8
    M = m_c + m_p

    def deriv(s):
        _, xd, th, thd = s
        sin_t, cos_t = math.sin(th), math.cos(th)
        denom = l * (4.0 / 3.0 - m_p * cos_t * cos_t / M)
        thdd = (g * sin_t + cos_t * (-m_p * l * thd * thd * sin_t) / M) / denom
        xdd = (m_p * l * (thd * thd * sin_t - thdd * cos_t)) / M
        return (xd, xdd, thd, thdd)

    s = tuple(x0)
    for _ in range(int(round(total / dt))):
        k1 = deriv(s)
        k2 = deriv(tuple(s[i] + 0.5 * dt * k1[i] for i in range(4)))
        k3 = deriv(tuple(s[i] + 0.5 * dt * k2[i] for i in range(4)))
        k4 = deriv(tuple(s[i] + dt * k3[i] for i in range(4)))
        s = tuple(s[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(4))
    return np.array(s)


def test_rk4_single_step_against_fine_integration():
    plant = cartpole_plant(PARAMS, DT)
    x0 = np.array([0.0, 0.0, 0.1, 0.0])
    coarse = rk4_step(plant, x0, np.zeros(1))
    ref = _fine_step_reference(x0, DT)
    # single-step truncation error at dt=1/15 is ~1e-5 relative; 4 significant digits
    assert np.linalg.norm(coarse - ref) < 1e-4 * np.linalg.norm(ref)


def test_extract_residual_zero_for_nominal_transition():
    plant = cartpole_plant(PARAMS, DT)
    x = np.array([0.2, 0.1, -0.1, 0.05])
    u = np.array([0.7])
    x_next = rk4_step(plant, x, u)
    np.testing.assert_allclose(extract_residual(plant, x, u, x_next), 0.0, atol=1e-15)


def test_extract_residual_recovers_offset():
    plant = cartpole_plant(PARAMS, DT)
    x = np.array([0.2, 0.1, -0.1, 0.05])
    u = np.array([0.7])
    offset = np.array([0.01, 0.0, 0.0, 0.0])
    x_next = rk4_step(plant, x, u) + offset
    np.testing.assert_allclose(extract_residual(plant, x, u, x_next), offset, atol=1e-15)


def test_residual_round_trip_exact():
    true_plant = cartpole_plant(PARAMS, DT)
    nominal = cartpole_plant(PARAMS.scaled(0.75), DT)
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.uniform(-0.5, 0.5, size=4)
        u = rng.uniform(-3, 3, size=1)
        x_next = rk4_step(true_plant, x, u)
        w = extract_residual(nominal, x, u, x_next)
        np.testing.assert_allclose(rk4_step(nominal, x, u) + w, x_next, atol=0)


def test_parameter_mismatch_residual_matches_direct_subtraction():
    true_plant = cartpole_plant(PARAMS, DT)
    nominal = cartpole_plant(PARAMS.scaled(0.75), DT)
    x = np.array([0.3, 0.0, 0.15, -0.1])
    u = np.array([2.0])
    x_next = rk4_step(true_plant, x, u)
    w = extract_residual(nominal, x, u, x_next)
    np.testing.assert_allclose(
        w, rk4_step(true_plant, x, u) - rk4_step(nominal, x, u), atol=1e-15
    )


def test_clip_residual():
    w = np.array([3.0, 4.0, 0.0, 0.0])
    np.testing.assert_allclose(clip_residual(w, 10.0), w)
    clipped = clip_residual(w * 10, 10.0)
    assert np.linalg.norm(clipped) == pytest.approx(10.0)
    np.testing.assert_allclose(clipped / np.linalg.norm(clipped), w / 5.0)


def test_nonfinite_state_raises():
    plant = cartpole_plant(PARAMS, DT)
    with pytest.raises(NumericError):
        rk4_step(plant, np.array([0, 0, np.nan, 0.0]), np.zeros(1))
