"""Built-in oracle checks runnable from the CLI without the test suite.

Each check pairs an implementation with an independent reference:
analytic OGD gradients vs central finite differences, iLQR vs the
finite-horizon Riccati recursion on a linear plant, and RK4 order on
the cart-pole.
"""
from __future__ import annotations

import numpy as np

from .dynamics import CartPoleParams, Plant, cartpole_plant, rk4_step
from .koopman import KoopmanModel, ObservableSet, gradient, loss, zero_observables
from .mpc import MpcConfig, solve


def random_observables(rng: np.random.Generator, d_x: int, d_phi: int, d_psi: int,
                       d_z: int) -> ObservableSet:
    """Smooth random observables for gradient checking."""
    P = rng.uniform(-1, 1, size=(d_phi, d_x))
    W = rng.uniform(-1, 1, size=(d_psi, d_x + d_z))
    return ObservableSet(
        phi=lambda w: np.tanh(np.asarray(w, float) @ P.T),
        psi=lambda w, z: np.tanh(np.concatenate([np.asarray(w, float), np.asarray(z, float)], axis=-1) @ W.T),
        d_phi=d_phi,
        d_psi=d_psi,
        recovery=np.zeros((d_x, d_phi)),
    )


def fd_gradient(model, obs, w_prev, z, w_curr, step=1e-5):
    """Central finite differences of the loss w.r.t. every entry of A and B."""
    dA = np.zeros_like(model.A)
    dB = np.zeros_like(model.B)
    for M, dM in ((model.A, dA), (model.B, dB)):
        it = np.nditer(M, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = M[idx]
            M[idx] = orig + step
            hi = loss(model, obs, w_prev, z, w_curr)
            M[idx] = orig - step
            lo = loss(model, obs, w_prev, z, w_curr)
            M[idx] = orig
            dM[idx] = (hi - lo) / (2 * step)
    return dA, dB


def gradient_check(instances: int = 100, seed: int = 0) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d_x, d_z, d_phi, d_psi = 3, 2, 4, 5
        obs = random_observables(rng, d_x, d_phi, d_psi, d_z)
        model = KoopmanModel(
            A=rng.uniform(-1, 1, size=(d_phi, d_phi)),
            B=rng.uniform(-1, 1, size=(d_phi, d_psi)),
        )
        w_prev = rng.uniform(-1, 1, size=d_x)
        z = rng.uniform(-1, 1, size=d_z)
        w_curr = rng.uniform(-1, 1, size=d_x)
        dA, dB = gradient(model, obs, w_prev, z, w_curr)
        fA, fB = fd_gradient(model, obs, w_prev, z, w_curr)
        num = np.sqrt(np.sum((dA - fA) ** 2) + np.sum((dB - fB) ** 2))
        den = np.sqrt(np.sum(fA**2) + np.sum(fB**2))
        worst = max(worst, num / max(den, 1e-12))
    return worst


def double_integrator(dt: float) -> Plant:
    A_c = np.array([[0.0, 1.0], [0.0, 0.0]])
    B_c = np.array([[0.0], [1.0]])
    return Plant(
        drift=lambda x: np.asarray(x, float) @ A_c.T,
        input_matrix=lambda x: np.broadcast_to(B_c, np.shape(x)[:-1] + (2, 1)),
        dt=dt,
        d_x=2,
        d_u=1,
    )


def discrete_linearization(plant: Plant) -> tuple[np.ndarray, np.ndarray]:
    """Exact (Ad, Bd) of the RK4-discretized linear plant via basis-vector probing."""
    d_x, d_u = plant.d_x, plant.d_u
    zero = rk4_step(plant, np.zeros(d_x), np.zeros(d_u))
    Ad = np.column_stack(
        [rk4_step(plant, e, np.zeros(d_u)) - zero for e in np.eye(d_x)]
    )
    Bd = np.column_stack(
        [rk4_step(plant, np.zeros(d_x), e) - zero for e in np.eye(d_u)]
    )
    return Ad, Bd


def riccati_cost(Ad, Bd, Q, R, x0, N) -> float:
    """Optimal finite-horizon cost sum_{k=0}^{N-1} x'Qx + u'Ru via backward Riccati."""
    V = np.zeros_like(Q)
    for _ in range(N):
        K = np.linalg.solve(R + Bd.T @ V @ Bd, Bd.T @ V @ Ad)
        V = Q + Ad.T @ V @ Ad - Ad.T @ V @ Bd @ K
        V = (V + V.T) / 2
    return float(x0 @ V @ x0)


def lqr_check(seed: int = 0) -> float:
    """Relative cost gap between iLQR and the Riccati oracle on a double integrator."""
    rng = np.random.default_rng(seed)
    plant = double_integrator(dt=0.1)
    Q = np.diag(rng.uniform(0.5, 2.0, size=2))
    R = np.array([[float(rng.uniform(0.5, 2.0))]])
    x0 = rng.uniform(-0.5, 0.5, size=2)
    N = 20
    cfg = MpcConfig(
        horizon=N, Q=Q, R=R,
        input_low=[-1e6], input_high=[1e6],
        max_iterations=100, convergence_tol=1e-12, residual_mode="hold_constant",
    )
    obs = zero_observables(2)
    sol = solve(cfg, plant, KoopmanModel.zeros(2, 1), obs, x0, np.zeros(2))
    Ad, Bd = discrete_linearization(plant)
    ref = riccati_cost(Ad, Bd, Q, R, x0, N)
    return abs(sol.cost - ref) / abs(ref)


def rk4_order_check() -> float:
    """Error-reduction factor when halving dt from 1/15, against a fine-step reference."""
    params = CartPoleParams()
    x0 = np.array([0.0, 0.0, 0.1, 0.0])
    u = np.zeros(1)

    def integrate(dt: float, total: float) -> np.ndarray:
        plant = cartpole_plant(params, dt)
        steps = int(round(total / dt))
        x = x0
        for _ in range(steps):
            x = rk4_step(plant, x, u)
        return x

    ref = _fine_reference(params, x0, 1.0, dt=1e-6)
    e1 = np.linalg.norm(integrate(1.0 / 15.0, 1.0) - ref)
    e2 = np.linalg.norm(integrate(1.0 / 30.0, 1.0) - ref)
    return e1 / e2


def _fine_reference(params: CartPoleParams, x0, total: float, dt: float) -> np.ndarray:
    """Scalar-math RK4 at a very fine step; independent of the numpy plant path."""
    import math

    m_c, m_p, l, g = params.cart_mass, params.pole_mass, params.half_length, params.gravity
    M = m_c + m_p
    ml = m_p * l

    def deriv(s):
        x, xd, th, thd = s
        sin_t = math.sin(th)
        cos_t = math.cos(th)
        pivot = (-ml * thd * thd * sin_t) / M
        denom = l * (4.0 / 3.0 - m_p * cos_t * cos_t / M)
        thdd = (g * sin_t + cos_t * pivot) / denom
        xdd = (ml * (thd * thd * sin_t - thdd * cos_t)) / M
        return (xd, xdd, thd, thdd)

    s = tuple(float(v) for v in x0)
    steps = int(round(total / dt))
    for _ in range(steps):
        k1 = deriv(s)
        k2 = deriv(tuple(s[i] + 0.5 * dt * k1[i] for i in range(4)))
        k3 = deriv(tuple(s[i] + 0.5 * dt * k2[i] for i in range(4)))
        k4 = deriv(tuple(s[i] + dt * k3[i] for i in range(4)))
        s = tuple(s[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(4))
    return np.array(s)


def run_selfchecks():
    """All checks as (name, ok, detail) tuples."""
    results = []
    err = gradient_check(instances=20)
    results.append(("gradient vs finite differences", err < 1e-6, f"max rel err {err:.2e}"))
    rel = lqr_check()
    results.append(("iLQR vs Riccati oracle", rel < 1e-6, f"rel cost gap {rel:.2e}"))
    factor = rk4_order_check()
    results.append(("RK4 order (error drop when halving dt)", factor >= 12.0, f"factor {factor:.1f}"))
    return results
