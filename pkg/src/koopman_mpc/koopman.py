"""Lifted linear residual model and the projected online-gradient-descent learner.

The residual w_t is lifted through observables Phi/Psi and modeled as

    Phi(w_t) ~= A @ Phi(w_{t-1}) + B @ Psi(w_{t-1}, z_t)

with w recovered via the matrix C (w = C @ Phi(w)).  The parameters
[A B] are fit online by OGD on the squared lifted prediction error,
projected onto a Frobenius-norm ball.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import NumericError

Array = np.ndarray


def _concat_features(x: Array, u: Array) -> Array:
    return np.concatenate([np.asarray(x, float), np.asarray(u, float)], axis=-1)


@dataclass(frozen=True)
class ObservableSet:
    """Observable maps and their dimensions.

    phi : residual (..., d_x) -> (..., d_phi)
    psi : (w_prev (..., d_x), z (..., d_z)) -> (..., d_psi)
    recovery : (d_x, d_phi) matrix C with C @ phi(w) = w on the operating region
    features : builds z from (state, input); defaults to concatenation
    """

    phi: Callable[[Array], Array]
    psi: Callable[[Array, Array], Array]
    d_phi: int
    d_psi: int
    recovery: Array
    features: Callable[[Array, Array], Array] = _concat_features


@dataclass(frozen=True)
class KoopmanModel:
    """Lifted linear parameters A (d_phi x d_phi), B (d_phi x d_psi)."""

    A: Array
    B: Array

    @classmethod
    def zeros(cls, d_phi: int, d_psi: int) -> "KoopmanModel":
        return cls(A=np.zeros((d_phi, d_phi)), B=np.zeros((d_phi, d_psi)))

    def stacked(self) -> Array:
        return np.hstack([self.A, self.B])

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.stacked()))

    def is_zero(self) -> bool:
        return not (np.any(self.A) or np.any(self.B))


def predict_lifted(model: KoopmanModel, obs: ObservableSet, w_prev: Array, z: Array) -> Array:
    """A @ phi(w_prev) + B @ psi(w_prev, z); broadcasts over batch axes."""
    ph = obs.phi(np.asarray(w_prev, float))
    ps = obs.psi(np.asarray(w_prev, float), np.asarray(z, float))
    if ph.shape[-1] != model.A.shape[1] or ps.shape[-1] != model.B.shape[1]:
        raise ValueError(
            f"observable dimensions ({ph.shape[-1]}, {ps.shape[-1]}) do not match "
            f"model ({model.A.shape[1]}, {model.B.shape[1]})"
        )
    return ph @ model.A.T + ps @ model.B.T


def predict_residual(model: KoopmanModel, obs: ObservableSet, w_prev: Array, z: Array) -> Array:
    """Recover the predicted residual from the lifted prediction."""
    return predict_lifted(model, obs, w_prev, z) @ np.asarray(obs.recovery).T


def loss(model: KoopmanModel, obs: ObservableSet, w_prev: Array, z: Array, w_curr: Array) -> float:
    """Squared L2 norm of the lifted one-step prediction error."""
    e = obs.phi(np.asarray(w_curr, float)) - predict_lifted(model, obs, w_prev, z)
    return float(np.sum(e * e, axis=-1))


def gradient(
    model: KoopmanModel, obs: ObservableSet, w_prev: Array, z: Array, w_curr: Array
) -> tuple[Array, Array]:
    """Analytic gradient of the loss w.r.t. (A, B): (-2 e phi^T, -2 e psi^T)."""
    ph = obs.phi(np.asarray(w_prev, float))
    ps = obs.psi(np.asarray(w_prev, float), np.asarray(z, float))
    e = obs.phi(np.asarray(w_curr, float)) - (ph @ model.A.T + ps @ model.B.T)
    return -2.0 * np.outer(e, ph), -2.0 * np.outer(e, ps)


def project_frobenius(A: Array, B: Array, radius: float) -> tuple[Array, Array]:
    """Euclidean projection of the stacked [A B] onto the Frobenius ball."""
    norm = float(np.sqrt(np.sum(A * A) + np.sum(B * B)))
    if norm <= radius:
        return A, B
    scale = radius / norm
    return A * scale, B * scale


@dataclass(frozen=True)
class OgdLearner:
    """Projected OGD state: current model, learning rate, ball radius, w_{t-1} memory."""

    model: KoopmanModel
    eta: float
    radius: float
    prev_residual: Array

    @classmethod
    def zero(cls, obs: ObservableSet, d_x: int, eta: float, radius: float) -> "OgdLearner":
        return cls(
            model=KoopmanModel.zeros(obs.d_phi, obs.d_psi),
            eta=eta,
            radius=radius,
            prev_residual=np.zeros(d_x),
        )


def ogd_update(learner: OgdLearner, obs: ObservableSet, z: Array, w_curr: Array) -> OgdLearner:
    """Gradient step on the current sample, project, shift the residual memory."""
    dA, dB = gradient(learner.model, obs, learner.prev_residual, z, w_curr)
    if not (np.all(np.isfinite(dA)) and np.all(np.isfinite(dB))):
        raise NumericError("non-finite OGD gradient")
    A = learner.model.A - learner.eta * dA
    B = learner.model.B - learner.eta * dB
    A, B = project_frobenius(A, B, learner.radius)
    return replace(learner, model=KoopmanModel(A=A, B=B), prev_residual=np.asarray(w_curr, float))


def cartpole_observables() -> ObservableSet:
    """Cart-pole observables: Phi = identity on R^4, Psi = 9 bounded features of z = (x, u)."""

    def phi(w: Array) -> Array:
        return np.asarray(w, float)

    def psi(w_prev: Array, z: Array) -> Array:
        # z = [x, xdot, theta, thetadot, u]; w_prev is unused in this instantiation
        z = np.asarray(z, float)
        t = np.tanh(z[..., :4])
        u = z[..., 4]
        return np.stack(
            [
                t[..., 0],
                t[..., 1],
                t[..., 2],
                t[..., 3],
                u,
                t[..., 2] * t[..., 3],
                t[..., 3] ** 2,
                u * t[..., 2],
                u * t[..., 3],
            ],
            axis=-1,
        )

    return ObservableSet(phi=phi, psi=psi, d_phi=4, d_psi=9, recovery=np.eye(4))


def zero_observables(d_x: int) -> ObservableSet:
    """Trivial observable set for residual-free MPC: Phi identity, Psi a single zero."""

    def phi(w: Array) -> Array:
        return np.asarray(w, float)

    def psi(w_prev: Array, z: Array) -> Array:
        return np.zeros(np.shape(w_prev)[:-1] + (1,))

    return ObservableSet(phi=phi, psi=psi, d_phi=d_x, d_psi=1, recovery=np.eye(d_x))
