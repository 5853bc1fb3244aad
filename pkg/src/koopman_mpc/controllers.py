"""Closed-loop policies: Koopman-MPC, Nominal MPC, RFF-MPC, and the clairvoyant oracle.

Every controller follows the step/observe protocol: step(t, x) returns
the input to apply; observe(u, x_next) feeds back the outcome.  Learned
controllers (Koopman, RFF) share the same OGD machinery and differ only
in their observable set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import mpc
from .dynamics import Plant, clip_residual, extract_residual
from .koopman import (
    KoopmanModel,
    ObservableSet,
    OgdLearner,
    loss,
    ogd_update,
    predict_residual,
    zero_observables,
)

Array = np.ndarray


class Controller:
    """Causal policy interface."""

    name = "controller"

    def step(self, t: int, x: Array) -> Array:
        raise NotImplementedError

    def observe(self, u: Array, x_next: Array) -> None:
        raise NotImplementedError


class _MpcController(Controller):
    """Warm-started receding-horizon base: owns the plant model and last solution."""

    def __init__(self, plant: Plant, config: mpc.MpcConfig):
        self.plant = plant
        self.config = config
        self._warm: Optional[Array] = None
        self.last_solution: Optional[mpc.TrajectorySolution] = None
        self.last_x: Optional[Array] = None
        self.last_prediction = np.zeros(plant.d_x)
        self.last_loss = 0.0

    def _solve(self, x: Array, model: KoopmanModel, obs: ObservableSet, w_init: Array,
               residual_mode: str) -> Array:
        from dataclasses import replace

        cfg = self.config
        if cfg.residual_mode != residual_mode:
            cfg = replace(cfg, residual_mode=residual_mode)
        sol = mpc.solve(cfg, self.plant, model, obs, x, w_init, warm_start=self._warm)
        # shift one step, repeat the last input
        self._warm = np.vstack([sol.inputs[1:], sol.inputs[-1:]])
        self.last_solution = sol
        self.last_x = np.asarray(x, float)
        return np.clip(sol.inputs[0], cfg.input_low, cfg.input_high)


class NominalMpc(_MpcController):
    """MPC on the nominal dynamics; ignores residuals entirely."""

    name = "nominal"

    def __init__(self, plant_nominal: Plant, config: mpc.MpcConfig):
        super().__init__(plant_nominal, config)
        self._obs = zero_observables(plant_nominal.d_x)
        self._model = KoopmanModel.zeros(self._obs.d_phi, self._obs.d_psi)

    def step(self, t: int, x: Array) -> Array:
        return self._solve(x, self._model, self._obs, np.zeros(self.plant.d_x), "hold_constant")

    def observe(self, u: Array, x_next: Array) -> None:
        pass


class OracleMpc(_MpcController):
    """Clairvoyant surrogate: receding-horizon MPC on the TRUE dynamics."""

    name = "oracle"

    def __init__(self, plant_true: Plant, config: mpc.MpcConfig):
        super().__init__(plant_true, config)
        self._obs = zero_observables(plant_true.d_x)
        self._model = KoopmanModel.zeros(self._obs.d_phi, self._obs.d_psi)

    def step(self, t: int, x: Array) -> Array:
        return self._solve(x, self._model, self._obs, np.zeros(self.plant.d_x), "hold_constant")

    def observe(self, u: Array, x_next: Array) -> None:
        pass


class LearnedMpc(_MpcController):
    """MPC with residuals learned online by projected OGD over a given observable set."""

    name = "learned"

    def __init__(
        self,
        plant_nominal: Plant,
        config: mpc.MpcConfig,
        obs: ObservableSet,
        eta: float = 0.01,
        radius: float = 10.0,
        residual_clip: float = 10.0,
    ):
        super().__init__(plant_nominal, config)
        self.obs = obs
        self.learner = OgdLearner.zero(obs, plant_nominal.d_x, eta, radius)
        self.residual_clip = residual_clip

    def step(self, t: int, x: Array) -> Array:
        return self._solve(
            x, self.learner.model, self.obs, self.learner.prev_residual,
            self.config.residual_mode,
        )

    def observe(self, u: Array, x_next: Array) -> None:
        u = np.atleast_1d(np.asarray(u, float))
        w_t = clip_residual(
            extract_residual(self.plant, self.last_x, u, x_next), self.residual_clip
        )
        z = self.obs.features(self.last_x, u)
        self.last_prediction = predict_residual(
            self.learner.model, self.obs, self.learner.prev_residual, z
        )
        self.last_loss = loss(self.learner.model, self.obs, self.learner.prev_residual, z, w_t)
        self.learner = ogd_update(self.learner, self.obs, z, w_t)
        self.last_residual = w_t


class KoopmanMpc(LearnedMpc):
    name = "koopman"


@dataclass(frozen=True)
class RffFeatures:
    """Seeded random Fourier feature map over (w_prev, z)."""

    frequencies: Array  # (D, d_in)
    phases: Array  # (D,)

    @classmethod
    def sample(cls, rng: np.random.Generator, feature_count: int, d_in: int,
               sigma: float) -> "RffFeatures":
        return cls(
            frequencies=rng.normal(0.0, sigma, size=(feature_count, d_in)),
            phases=rng.uniform(0.0, 2.0 * np.pi, size=feature_count),
        )

    def __call__(self, w_prev: Array, z: Array) -> Array:
        v = np.concatenate([np.asarray(w_prev, float), np.asarray(z, float)], axis=-1)
        d = self.frequencies.shape[0]
        return np.sqrt(2.0 / d) * np.cos(v @ self.frequencies.T + self.phases)


def rff_observables(
    rng: np.random.Generator, d_x: int, d_z: int, feature_count: int = 200, sigma: float = 1.0
) -> ObservableSet:
    """Phi = identity, Psi = random Fourier features of (w_prev, z)."""
    feats = RffFeatures.sample(rng, feature_count, d_x + d_z, sigma)
    return ObservableSet(
        phi=lambda w: np.asarray(w, float),
        psi=feats,
        d_phi=d_x,
        d_psi=feature_count,
        recovery=np.eye(d_x),
    )


class RffMpc(LearnedMpc):
    name = "rff"

    def __init__(
        self,
        plant_nominal: Plant,
        config: mpc.MpcConfig,
        rng: np.random.Generator,
        d_z: int,
        feature_count: int = 200,
        sigma: float = 1.0,
        eta: float = 0.01,
        radius: float = 10.0,
        residual_clip: float = 10.0,
    ):
        obs = rff_observables(rng, plant_nominal.d_x, d_z, feature_count, sigma)
        super().__init__(plant_nominal, config, obs, eta, radius, residual_clip)


CONTROLLER_NAMES = ("koopman", "nominal", "rff", "oracle")
