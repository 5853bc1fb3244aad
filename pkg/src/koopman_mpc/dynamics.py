"""Control-affine plants, the cart-pole instantiation, and RK4 discretization.

A plant is the discrete-time system

    x_{t+1} = step(x_t, u_t) + w_t

where step() is one classical RK4 step of the continuous vector field
f(x) + g(x) u with zero-order-hold input, and w_t is an additive
per-step residual.  All evaluations broadcast over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, check_finite

Array = np.ndarray


@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters; half_length is l (pole length is 2l)."""

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "half_length", "gravity"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def scaled(self, factor: float) -> "CartPoleParams":
        """Scale the model parameters (masses, length); gravity is physics, not a parameter."""
        return CartPoleParams(
            cart_mass=self.cart_mass * factor,
            pole_mass=self.pole_mass * factor,
            half_length=self.half_length * factor,
            gravity=self.gravity,
        )


def cartpole_accelerations(params: CartPoleParams, state: Array, force) -> tuple[Array, Array]:
    """Continuous-time (xdd, thetadd) for the cart-pole.

    thetadd is computed first; it appears inside the xdd expression.
    Broadcasts over leading axes of state/force.
    """
    state = np.asarray(state, dtype=float)
    force = np.asarray(force, dtype=float)
    theta = state[..., 2]
    theta_dot = state[..., 3]
    m_total = params.cart_mass + params.pole_mass
    ml = params.pole_mass * params.half_length
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)

    pivot = (-ml * theta_dot**2 * sin_t - force) / m_total
    denom = params.half_length * (4.0 / 3.0 - params.pole_mass * cos_t**2 / m_total)
    thetadd = (params.gravity * sin_t + cos_t * pivot) / denom
    xdd = (ml * (theta_dot**2 * sin_t - thetadd * cos_t) + force) / m_total

    if not (np.all(np.isfinite(xdd)) and np.all(np.isfinite(thetadd))):
        raise NumericError("non-finite cart-pole acceleration (xdd/thetadd)")
    return xdd, thetadd


@dataclass(frozen=True)
class Plant:
    """Control-affine plant: drift f(x), input matrix g(x), RK4 step size dt."""

    drift: Callable[[Array], Array]
    input_matrix: Callable[[Array], Array]
    dt: float
    d_x: int
    d_u: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")

    def derivative(self, state: Array, control: Array) -> Array:
        g = self.input_matrix(state)
        return self.drift(state) + np.einsum("...ij,...j->...i", g, control)


def cartpole_plant(params: CartPoleParams, dt: float) -> Plant:
    """Cart-pole as a control-affine plant; state [x, xdot, theta, thetadot], input [F]."""

    def drift(state: Array) -> Array:
        xdd, thetadd = cartpole_accelerations(params, state, np.zeros(np.shape(state)[:-1]))
        out = np.empty_like(np.asarray(state, dtype=float))
        out[..., 0] = state[..., 1]
        out[..., 1] = xdd
        out[..., 2] = state[..., 3]
        out[..., 3] = thetadd
        return out

    def input_matrix(state: Array) -> Array:
        # Accelerations are affine in F; closed-form per-unit-force response.
        state = np.asarray(state, dtype=float)
        theta = state[..., 2]
        cos_t = np.cos(theta)
        m_total = params.cart_mass + params.pole_mass
        denom = params.half_length * (4.0 / 3.0 - params.pole_mass * cos_t**2 / m_total)
        thetadd_f = (-cos_t / m_total) / denom
        xdd_f = (1.0 - params.pole_mass * params.half_length * thetadd_f * cos_t) / m_total
        g = np.zeros(state.shape[:-1] + (4, 1))
        g[..., 1, 0] = xdd_f
        g[..., 3, 0] = thetadd_f
        return g

    return Plant(drift=drift, input_matrix=input_matrix, dt=dt, d_x=4, d_u=1)


def rk4_step(plant: Plant, state: Array, control: Array, residual: Array | None = None) -> Array:
    """One classical RK4 step of the nominal dynamics, then add the residual once."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    dt = plant.dt
    k1 = plant.derivative(state, control)
    k2 = plant.derivative(state + 0.5 * dt * k1, control)
    k3 = plant.derivative(state + 0.5 * dt * k2, control)
    k4 = plant.derivative(state + dt * k3, control)
    nxt = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if residual is not None:
        nxt = nxt + residual
    return check_finite(nxt, "rk4_step state")


def extract_residual(plant_nominal: Plant, x_t: Array, u_t: Array, x_next: Array) -> Array:
    """Discrete-time residual: x_next minus the nominal RK4 prediction with zero residual."""
    return np.asarray(x_next, dtype=float) - rk4_step(plant_nominal, x_t, u_t)


def clip_residual(residual: Array, radius: float = 10.0) -> Array:
    """Clamp a residual to the L2 ball of the given radius."""
    residual = np.asarray(residual, dtype=float)
    norm = float(np.linalg.norm(residual))
    if norm > radius:
        return residual * (radius / norm)
    return residual
