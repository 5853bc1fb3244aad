"""Model predictive control with online Koopman learning of residual dynamics."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: F401
    CartPoleParams,
    Plant,
    cartpole_accelerations,
    cartpole_plant,
    clip_residual,
    extract_residual,
    rk4_step,
)
from .errors import NumericError  # noqa: F401
from .koopman import (  # noqa: F401
    KoopmanModel,
    ObservableSet,
    OgdLearner,
    cartpole_observables,
    gradient,
    loss,
    ogd_update,
    predict_lifted,
    predict_residual,
    project_frobenius,
    zero_observables,
)
from .mpc import MpcConfig, TrajectorySolution, rollout, solve  # noqa: F401
