"""Run-log data model and the regret/error metrics computed from it."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .koopman import KoopmanModel, ObservableSet, project_frobenius

Array = np.ndarray


@dataclass
class RunLog:
    """Per-step record of one closed-loop run (time indices 1..T)."""

    t: Array  # (T,) int
    x: Array  # (T, d_x) state at t
    u: Array  # (T, d_u) applied input
    w: Array  # (T, d_x) observed residual
    w_hat: Array  # (T, d_x) one-step predicted residual
    stage_cost: Array  # (T,)
    loss: Array  # (T,) online learner loss l_t
    iterations: Array  # (T,) solver iterations
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.t)


@dataclass
class RegretReport:
    cumulative_cost: float
    oracle_cost: float
    dynamic_regret: float
    estimation_regret: float = float("nan")
    growth_exponent: float = float("nan")


def stabilization_error(log: RunLog) -> Array:
    """Per-step squared state norm ||x_t||^2."""
    return np.sum(log.x * log.x, axis=-1)


def dynamic_regret(alg_log: RunLog, oracle_log: RunLog) -> RegretReport:
    """Cumulative-cost gap between an algorithm and the clairvoyant oracle run.

    Each log carries its own residual realization; only the quadratic
    stage costs enter.
    """
    if alg_log.T != oracle_log.T:
        raise ValueError("logs must cover the same horizon")
    alg = float(np.sum(alg_log.stage_cost))
    orc = float(np.sum(oracle_log.stage_cost))
    return RegretReport(cumulative_cost=alg, oracle_cost=orc, dynamic_regret=alg - orc)


def hindsight_model(log: RunLog, obs: ObservableSet, radius: float | None = None) -> KoopmanModel:
    """Best fixed lifted-linear parameter by batch least squares over the run's triples."""
    T = log.T
    w_prev = np.vstack([np.zeros((1, log.w.shape[1])), log.w[:-1]])
    z = np.concatenate([log.x, log.u], axis=-1)
    xi = np.concatenate([obs.phi(w_prev), obs.psi(w_prev, z)], axis=-1)  # (T, d_phi + d_psi)
    y = obs.phi(log.w)  # (T, d_phi)
    # y ~= xi @ alpha^T ; solve in the least-squares sense
    alpha_t, *_ = np.linalg.lstsq(xi, y, rcond=None)
    alpha = alpha_t.T
    A, B = alpha[:, : obs.d_phi], alpha[:, obs.d_phi :]
    if radius is not None:
        A, B = project_frobenius(A, B, radius)
    return KoopmanModel(A=A, B=B)


def estimation_regret(log: RunLog, obs: ObservableSet, radius: float | None = None) -> float:
    """Cumulative online loss minus the cumulative loss of the best fixed model in hindsight."""
    best = hindsight_model(log, obs, radius)
    w_prev = np.vstack([np.zeros((1, log.w.shape[1])), log.w[:-1]])
    z = np.concatenate([log.x, log.u], axis=-1)
    pred = obs.phi(w_prev) @ best.A.T + obs.psi(w_prev, z) @ best.B.T
    e = obs.phi(log.w) - pred
    hindsight = float(np.sum(e * e))
    return float(np.sum(log.loss)) - hindsight


def sublinearity_exponent(cumulative: Array) -> float:
    """Log-log slope of a positive nondecreasing cumulative sequence over its second half."""
    cumulative = np.asarray(cumulative, float)
    T = len(cumulative)
    if T < 8:
        raise ValueError("need at least 8 points")
    idx = np.arange(1, T + 1)
    half = T // 2
    y = cumulative[half:]
    if np.any(y <= 0):
        raise ValueError("cumulative sequence must be positive on the fitted window")
    slope, _ = np.polyfit(np.log(idx[half:]), np.log(y), 1)
    return float(slope)


def mean_min_max(curves: Array) -> tuple[Array, Array, Array]:
    """Aggregate (runs, T) curves to per-step mean and min/max band."""
    curves = np.asarray(curves, float)
    return curves.mean(axis=0), curves.min(axis=0), curves.max(axis=0)
