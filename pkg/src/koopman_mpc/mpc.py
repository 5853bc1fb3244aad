"""Finite-horizon trajectory optimization over residual-augmented dynamics.

The optimizer is iLQR on the augmented state s = (x, w_prev): dynamics
are linearized by central finite differences, the backward pass uses
Levenberg-style regularization, and the forward pass clamps inputs to
the box and backtracks on the step scale.  The predicted residual is
either rolled forward through the learned lifted model ("propagate")
or held at its last observed value ("hold_constant").
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import Plant, rk4_step
from .koopman import KoopmanModel, ObservableSet, predict_residual

Array = np.ndarray

RESIDUAL_MODES = ("propagate", "hold_constant")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    Q: Array
    R: Array
    input_low: Array
    input_high: Array
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    residual_mode: str = "propagate"
    fd_step: float = 1e-6
    reg_init: float = 1e-6
    reg_max: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, float)))
        object.__setattr__(self, "input_low", np.atleast_1d(np.asarray(self.input_low, float)))
        object.__setattr__(self, "input_high", np.atleast_1d(np.asarray(self.input_high, float)))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(self.input_low >= self.input_high):
            raise ValueError("input_low must be elementwise below input_high")
        if np.min(np.linalg.eigvalsh((self.Q + self.Q.T) / 2)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh((self.R + self.R.T) / 2)) <= 0:
            raise ValueError("R must be positive definite")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")


@dataclass
class TrajectorySolution:
    inputs: Array  # (N, d_u)
    states: Array  # (N+1, d_x)
    predicted_residuals: Array  # (N, d_x)
    cost: float
    iterations: int
    converged: bool


def _make_step(
    plant: Plant,
    model: KoopmanModel,
    obs: ObservableSet,
    w_init: Array,
    mode: str,
) -> Callable[[Array, Array], Array]:
    """Augmented transition s=(x, w_prev) -> (x_next, w); batched over leading axes."""
    d_x = plant.d_x
    w_init = np.asarray(w_init, float)

    def step(s: Array, u: Array) -> Array:
        x = s[..., :d_x]
        w_prev = s[..., d_x:]
        if mode == "hold_constant":
            w = np.broadcast_to(w_init, x.shape)
        else:
            z = obs.features(x, u)
            w = predict_residual(model, obs, w_prev, z)
        x_next = rk4_step(plant, x, u, w)
        return np.concatenate([x_next, w], axis=-1)

    return step


def rollout(
    plant_nominal: Plant,
    model: KoopmanModel,
    obs: ObservableSet,
    x0: Array,
    w_init: Array,
    inputs: Array,
    Q: Array,
    R: Array,
    residual_mode: str = "propagate",
) -> tuple[Array, Array, float]:
    """Roll the augmented dynamics under an input sequence.

    Returns (states (N+1, d_x), predicted residuals (N, d_x), accumulated cost).
    """
    step = _make_step(plant_nominal, model, obs, w_init, residual_mode)
    d_x = plant_nominal.d_x
    s0 = np.concatenate([np.asarray(x0, float), np.asarray(w_init, float)])
    S, cost = _rollout_aug(step, s0, np.atleast_2d(np.asarray(inputs, float)), Q, R, d_x)
    return S[:, :d_x], S[1:, d_x:], cost


def _rollout_aug(step, s0: Array, U: Array, Q: Array, R: Array, d_x: int) -> tuple[Array, float]:
    N = U.shape[0]
    S = np.empty((N + 1, s0.shape[0]))
    S[0] = s0
    cost = 0.0
    for k in range(N):
        x = S[k, :d_x]
        u = U[k]
        cost += float(x @ Q @ x + u @ R @ u)
        S[k + 1] = step(S[k], u)
    return S, cost


def _linearize(step, S: Array, U: Array, eps: float) -> tuple[Array, Array]:
    """Central-difference Jacobians of the augmented step along a trajectory.

    Returns fs (N, n, n) and fu (N, n, m), batched in a single step() call.
    """
    N, m = U.shape
    n = S.shape[1]
    s_nom = S[:-1]

    # state perturbations: (N, 2n, n); input perturbations: (N, 2m, m)
    eye_n = np.eye(n) * eps
    eye_m = np.eye(m) * eps
    s_pert = np.concatenate(
        [
            s_nom[:, None, :] + eye_n[None, :, :],
            s_nom[:, None, :] - eye_n[None, :, :],
            np.broadcast_to(s_nom[:, None, :], (N, 2 * m, n)),
        ],
        axis=1,
    )
    u_pert = np.concatenate(
        [
            np.broadcast_to(U[:, None, :], (N, 2 * n, m)),
            U[:, None, :] + eye_m[None, :, :],
            U[:, None, :] - eye_m[None, :, :],
        ],
        axis=1,
    )
    out = step(s_pert, u_pert)  # (N, 2n + 2m, n)
    fs = (out[:, :n, :] - out[:, n : 2 * n, :]) / (2.0 * eps)  # d step / d s_j at [:, j, :]
    fu = (out[:, 2 * n : 2 * n + m, :] - out[:, 2 * n + m :, :]) / (2.0 * eps)
    return fs.transpose(0, 2, 1), fu.transpose(0, 2, 1)


def solve(
    config: MpcConfig,
    plant_nominal: Plant,
    model: KoopmanModel,
    obs: ObservableSet,
    x0: Array,
    w_init: Array,
    warm_start: Optional[Array] = None,
) -> TrajectorySolution:
    """Iteratively optimize the input sequence for the residual-augmented horizon problem."""
    N = config.horizon
    d_x = plant_nominal.d_x
    d_u = config.input_low.shape[0]
    Q, R = config.Q, config.R
    lo, hi = config.input_low, config.input_high

    step = _make_step(plant_nominal, model, obs, w_init, config.residual_mode)
    s0 = np.concatenate([np.asarray(x0, float), np.asarray(w_init, float)])
    n = s0.shape[0]

    if warm_start is not None:
        U = np.clip(np.atleast_2d(np.asarray(warm_start, float)), lo, hi).copy()
    else:
        U = np.zeros((N, d_u))

    try:
        S, cost = _rollout_aug(step, s0, U, Q, R, d_x)
    except ArithmeticError:
        S, cost = None, np.inf
    if not np.isfinite(cost):
        # unusable warm start; restart from zero inputs
        U = np.zeros((N, d_u))
        S, cost = _rollout_aug(step, s0, U, Q, R, d_x)

    best = (cost, U.copy(), S.copy())
    reg = config.reg_init
    converged = False
    iterations = 0
    alphas = 0.5 ** np.arange(8)

    for iterations in range(1, config.max_iterations + 1):
        fs, fu = _linearize(step, S, U, config.fd_step)

        # backward pass; retry with more regularization on indefinite Quu
        while True:
            Vs = np.zeros(n)
            Vss = np.zeros((n, n))
            k_ff = np.empty((N, d_u))
            K = np.empty((N, d_u, n))
            ok = True
            for k in range(N - 1, -1, -1):
                x = S[k, :d_x]
                ls = np.zeros(n)
                ls[:d_x] = 2.0 * (Q @ x)
                lu = 2.0 * (R @ U[k])
                lss = np.zeros((n, n))
                lss[:d_x, :d_x] = 2.0 * Q

                A, B = fs[k], fu[k]
                Qs = ls + A.T @ Vs
                Qu = lu + B.T @ Vs
                Qss = lss + A.T @ Vss @ A
                Quu = 2.0 * R + B.T @ Vss @ B + reg * np.eye(d_u)
                Qus = B.T @ Vss @ A
                try:
                    L = np.linalg.cholesky((Quu + Quu.T) / 2)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                kk = -np.linalg.solve(Quu, Qu)
                KK = -np.linalg.solve(Quu, Qus)
                k_ff[k] = kk
                K[k] = KK
                Vs = Qs + KK.T @ Quu @ kk + KK.T @ Qu + Qus.T @ kk
                Vss = Qss + KK.T @ Quu @ KK + KK.T @ Qus + Qus.T @ KK
                Vss = (Vss + Vss.T) / 2
            if ok:
                break
            reg *= 10.0
            if reg > config.reg_max:
                break
        if reg > config.reg_max:
            break

        # forward pass with backtracking line search; inputs clamped to the box
        improved = False
        for alpha in alphas:
            U_new = np.empty_like(U)
            S_new = np.empty_like(S)
            S_new[0] = s0
            new_cost = 0.0
            finite = True
            for k in range(N):
                u = np.clip(U[k] + alpha * k_ff[k] + K[k] @ (S_new[k] - S[k]), lo, hi)
                U_new[k] = u
                x = S_new[k][:d_x]
                new_cost += float(x @ Q @ x + u @ R @ u)
                try:
                    S_new[k + 1] = step(S_new[k], u)
                except ArithmeticError:
                    finite = False
                    break
            if not finite or not np.isfinite(new_cost):
                continue
            if new_cost < cost:
                improved = True
                decrease = cost - new_cost
                U, S, cost = U_new, S_new, new_cost
                if cost < best[0]:
                    best = (cost, U.copy(), S.copy())
                break

        if improved:
            reg = max(reg / 10.0, config.reg_init)
            if decrease < config.convergence_tol:
                converged = True
                break
        else:
            reg *= 10.0
            if reg > config.reg_max:
                break

    cost, U, S = best
    return TrajectorySolution(
        inputs=U,
        states=S[:, :d_x],
        predicted_residuals=S[1:, d_x:],
        cost=cost,
        iterations=iterations,
        converged=converged,
    )
