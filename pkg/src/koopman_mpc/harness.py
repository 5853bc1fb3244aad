"""Seeded experiment execution, CSV/SVG artifact emission.

Reproduces the cart-pole benchmark: each run index derives its own
counter-based RNG stream, samples an initial state, and executes every
configured controller from that same initial state on the true plant
while the controllers are handed a scaled (mismatched) nominal model.
"""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .controllers import (
    CONTROLLER_NAMES,
    Controller,
    KoopmanMpc,
    NominalMpc,
    OracleMpc,
    RffMpc,
)
from .dynamics import CartPoleParams, cartpole_plant, clip_residual, extract_residual, rk4_step
from .errors import NumericError
from .koopman import cartpole_observables
from .metrics import RunLog, mean_min_max, stabilization_error
from .mpc import MpcConfig

Array = np.ndarray


class ConfigError(ValueError):
    """Malformed experiment configuration; message names the offending field."""


@dataclass
class ExperimentConfig:
    duration: float = 6.0
    control_rate: float = 15.0
    horizon: int = 20
    q_diag: tuple = (5.0, 0.1, 5.0, 0.1)
    r_weight: float = 0.1
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    nominal_scale: float = 0.75
    eta: float = 0.01
    projection_radius: float = 10.0
    residual_clip: float = 10.0
    input_limit: float = 10.0
    controllers: tuple = ("koopman", "rff", "nominal")
    run_count: int = 20
    base_seed: int = 0
    init_low: tuple = (-1.0, -0.1, -0.2, -0.1)
    init_high: tuple = (1.0, 0.1, 0.2, 0.1)
    residual_mode: str = "propagate"
    rff_features: int = 200
    rff_sigma: float = 1.0
    max_iterations: int = 30
    convergence_tol: float = 1e-4
    substeps: int = 1
    rng: str = "philox"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.control_rate <= 0:
            raise ConfigError("control_rate must be positive")
        steps = self.duration * self.control_rate
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("duration * control_rate must be an integer number of steps")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.run_count < 1:
            raise ConfigError("run_count must be >= 1")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.rng != "philox":
            raise ConfigError(f"rng must be 'philox', got {self.rng!r}")
        if self.residual_mode not in ("propagate", "hold_constant"):
            raise ConfigError(f"residual_mode must be propagate or hold_constant, got {self.residual_mode!r}")
        unknown = set(self.controllers) - set(CONTROLLER_NAMES)
        if unknown:
            raise ConfigError(f"controllers contains unknown names: {sorted(unknown)}")
        if not len(self.init_low) == len(self.init_high) == 4:
            raise ConfigError("init_low/init_high must have 4 entries")
        if any(l >= h for l, h in zip(self.init_low, self.init_high)):
            raise ConfigError("init_low must be elementwise below init_high")

    @property
    def steps(self) -> int:
        return int(round(self.duration * self.control_rate))

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate

    def true_params(self) -> CartPoleParams:
        return CartPoleParams(self.cart_mass, self.pole_mass, self.half_length, self.gravity)

    def nominal_params(self) -> CartPoleParams:
        return self.true_params().scaled(self.nominal_scale)

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(
            horizon=self.horizon,
            Q=np.diag(self.q_diag),
            R=np.array([[self.r_weight]]),
            input_low=np.array([-self.input_limit]),
            input_high=np.array([self.input_limit]),
            max_iterations=self.max_iterations,
            convergence_tol=self.convergence_tol,
            residual_mode=self.residual_mode,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("q_diag", "controllers", "init_low", "init_high"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("q_diag", "controllers", "init_low", "init_high"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config file must be a mapping")
        return cls.from_dict(data)

    def to_yaml(self, path: str) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based Philox generator; (seed, stream) keys are independent."""
    return np.random.Generator(np.random.Philox(key=(np.uint64(seed) << np.uint64(16)) + np.uint64(stream)))


def sample_initial_state(config: ExperimentConfig, seed: int) -> Array:
    rng = make_rng(seed, 0)
    return rng.uniform(np.asarray(config.init_low), np.asarray(config.init_high))


def build_controller(name: str, config: ExperimentConfig, seed: int) -> Controller:
    dt = config.control_dt
    mpc_cfg = config.mpc_config()
    nominal = cartpole_plant(config.nominal_params(), dt)
    if name == "nominal":
        return NominalMpc(nominal, mpc_cfg)
    if name == "oracle":
        return OracleMpc(cartpole_plant(config.true_params(), dt), mpc_cfg)
    if name == "koopman":
        return KoopmanMpc(
            nominal, mpc_cfg, cartpole_observables(),
            eta=config.eta, radius=config.projection_radius,
            residual_clip=config.residual_clip,
        )
    if name == "rff":
        return RffMpc(
            nominal, mpc_cfg, make_rng(seed, 1), d_z=5,
            feature_count=config.rff_features, sigma=config.rff_sigma,
            eta=config.eta, radius=config.projection_radius,
            residual_clip=config.residual_clip,
        )
    raise ConfigError(f"unknown controller {name!r}")


def simulate_run(config: ExperimentConfig, run_index: int, controller_name: str,
                 x1: Array | None = None, steps: int | None = None) -> RunLog:
    """One closed-loop run of a single controller on the true plant."""
    seed = config.base_seed + run_index
    if x1 is None:
        x1 = sample_initial_state(config, seed)
    T = steps if steps is not None else config.steps
    dt = config.control_dt
    sub_plant = cartpole_plant(config.true_params(), dt / config.substeps)
    nominal_plant = cartpole_plant(config.nominal_params(), dt)
    Q = np.diag(config.q_diag)
    R = np.array([[config.r_weight]])

    ctrl = build_controller(controller_name, config, seed)

    x = np.asarray(x1, float)
    rec_t = np.arange(1, T + 1)
    rec_x = np.empty((T, 4))
    rec_u = np.empty((T, 1))
    rec_w = np.empty((T, 4))
    rec_what = np.empty((T, 4))
    rec_cost = np.empty(T)
    rec_loss = np.empty(T)
    rec_iter = np.empty(T, dtype=int)

    for i in range(T):
        t = i + 1
        u = np.atleast_1d(ctrl.step(t, x))
        x_next = x
        for _ in range(config.substeps):
            x_next = rk4_step(sub_plant, x_next, u)
        w = clip_residual(extract_residual(nominal_plant, x, u, x_next), config.residual_clip)
        rec_x[i] = x
        rec_u[i] = u
        rec_w[i] = w
        rec_what[i] = ctrl.last_prediction if hasattr(ctrl, "last_prediction") else 0.0
        rec_cost[i] = float(x @ Q @ x + u @ R @ u)
        sol = getattr(ctrl, "last_solution", None)
        rec_iter[i] = sol.iterations if sol is not None else 0
        ctrl.observe(u, x_next)
        rec_loss[i] = getattr(ctrl, "last_loss", 0.0)
        x = x_next

    return RunLog(
        t=rec_t, x=rec_x, u=rec_u, w=rec_w, w_hat=rec_what,
        stage_cost=rec_cost, loss=rec_loss, iterations=rec_iter,
        meta={
            "seed": seed, "run": run_index, "controller": controller_name,
            "scale": config.nominal_scale,
        },
    )


@dataclass
class RunArtifact:
    runs_csv: str
    aggregate_csv: str
    plot_paths: list = field(default_factory=list)
    config_path: str = ""
    version: str = __version__
    logs: dict = field(default_factory=dict)  # (run_index, controller) -> RunLog
    failures: list = field(default_factory=list)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


RUN_CSV_COLUMNS = (
    ["run", "controller", "t"]
    + [f"x{i}" for i in range(1, 5)]
    + ["u"]
    + [f"w{i}" for i in range(1, 5)]
    + [f"what{i}" for i in range(1, 5)]
    + ["stage_cost", "loss"]
)


def write_runs_csv(path: str, logs: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_CSV_COLUMNS)
        for (run_index, name) in sorted(logs, key=lambda k: (k[0], k[1])):
            log = logs[(run_index, name)]
            for i in range(log.T):
                row = [str(run_index), name, str(int(log.t[i]))]
                row += [_fmt(v) for v in log.x[i]]
                row += [_fmt(log.u[i, 0])]
                row += [_fmt(v) for v in log.w[i]]
                row += [_fmt(v) for v in log.w_hat[i]]
                row += [_fmt(log.stage_cost[i]), _fmt(log.loss[i])]
                writer.writerow(row)


def write_aggregate_csv(path: str, logs: dict) -> None:
    by_controller: dict[str, list] = {}
    for (run_index, name), log in sorted(logs.items(), key=lambda kv: kv[0]):
        by_controller.setdefault(name, []).append(stabilization_error(log))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["controller", "t", "mean_sq_err", "min_sq_err", "max_sq_err"])
        for name in sorted(by_controller):
            mean, lo, hi = mean_min_max(np.vstack(by_controller[name]))
            for i in range(len(mean)):
                writer.writerow([name, str(i + 1), _fmt(mean[i]), _fmt(lo[i]), _fmt(hi[i])])


def read_runs_csv(path: str) -> dict:
    """Parse a runs CSV back into RunLog objects keyed by (run, controller)."""
    rows: dict[tuple, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.setdefault((int(row["run"]), row["controller"]), []).append(row)
    logs = {}
    for key, rr in rows.items():
        rr.sort(key=lambda r: int(r["t"]))
        T = len(rr)
        log = RunLog(
            t=np.array([int(r["t"]) for r in rr]),
            x=np.array([[float(r[f"x{i}"]) for i in range(1, 5)] for r in rr]),
            u=np.array([[float(r["u"])] for r in rr]),
            w=np.array([[float(r[f"w{i}"]) for i in range(1, 5)] for r in rr]),
            w_hat=np.array([[float(r[f"what{i}"]) for i in range(1, 5)] for r in rr]),
            stage_cost=np.array([float(r["stage_cost"]) for r in rr]),
            loss=np.array([float(r["loss"]) for r in rr]),
            iterations=np.zeros(T, dtype=int),
            meta={"run": key[0], "controller": key[1]},
        )
        logs[key] = log
    return logs


def run_experiment(config: ExperimentConfig, outdir: str, plots: bool = True) -> RunArtifact:
    """Execute all configured runs/controllers; emit CSVs, config snapshot, and plots."""
    os.makedirs(outdir, exist_ok=True)
    logs: dict = {}
    failures: list = []
    for run_index in range(config.run_count):
        seed = config.base_seed + run_index
        x1 = sample_initial_state(config, seed)
        for name in config.controllers:
            try:
                logs[(run_index, name)] = simulate_run(config, run_index, name, x1=x1)
            except NumericError as exc:
                failures.append({"run": run_index, "controller": name, "error": str(exc)})

    runs_csv = os.path.join(outdir, "runs.csv")
    aggregate_csv = os.path.join(outdir, "aggregate.csv")
    config_path = os.path.join(outdir, "config.yaml")
    write_runs_csv(runs_csv, logs)
    write_aggregate_csv(aggregate_csv, logs)
    config.to_yaml(config_path)

    artifact = RunArtifact(
        runs_csv=runs_csv, aggregate_csv=aggregate_csv, config_path=config_path,
        logs=logs, failures=failures,
    )
    if plots:
        artifact.plot_paths = make_plots(outdir, logs, config.control_dt)
    return artifact


def make_plots(outdir: str, logs: dict, dt: float) -> list:
    """SVG plots: mean stabilization error, sample trajectory (run 0), prediction error."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    controllers = sorted({name for (_, name) in logs})
    if not controllers:
        return paths
    T = next(iter(logs.values())).T
    time = np.arange(1, T + 1) * dt

    # mean stabilization error with min/max band
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in controllers:
        curves = np.vstack(
            [stabilization_error(logs[k]) for k in sorted(logs) if k[1] == name]
        )
        mean, lo, hi = mean_min_max(curves)
        ax.plot(time, mean, label=name)
        ax.fill_between(time, lo, hi, alpha=0.15)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(r"$\|x_t\|^2$")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("Mean stabilization error")
    p = os.path.join(outdir, "stabilization_error.svg")
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    # sample trajectory: run 0
    fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    labels = ["cart position [m]", "pole angle [rad]"]
    for name in controllers:
        key = (0, name)
        if key not in logs:
            continue
        log = logs[key]
        axes[0].plot(time, log.x[:, 0], label=name)
        axes[1].plot(time, log.x[:, 2], label=name)
    for ax, lbl in zip(axes, labels):
        ax.set_ylabel(lbl)
        ax.legend()
    axes[1].set_xlabel("time [s]")
    axes[0].set_title("Sample trajectory (run 0)")
    p = os.path.join(outdir, "sample_trajectory.svg")
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    # residual prediction error
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in controllers:
        keys = [k for k in sorted(logs) if k[1] == name]
        err = np.vstack(
            [np.linalg.norm(logs[k].w - logs[k].w_hat, axis=-1) for k in keys]
        ).mean(axis=0)
        ax.plot(time, err, label=f"{name}: $\\|w_t-\\hat w_t\\|$")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("residual prediction error")
    ax.legend()
    ax.set_title("One-step residual prediction error")
    p = os.path.join(outdir, "prediction_error.svg")
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)
    return paths
