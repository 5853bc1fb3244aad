"""End-to-end acceptance criteria, one test per criterion.

Heavy closed-loop experiments are shared through module-scoped
fixtures.  Each test prints a single PASS/FAIL line (visible with
pytest -s or in captured output).
"""
import filecmp
import time

import numpy as np
import pytest

from koopman_mpc.harness import ExperimentConfig, run_experiment, sample_initial_state, simulate_run
from koopman_mpc.koopman import ObservableSet, OgdLearner, loss, ogd_update
from koopman_mpc.metrics import stabilization_error, sublinearity_exponent
from koopman_mpc.selfcheck import gradient_check, lqr_check, rk4_order_check


def report(name: str, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def fig2_logs(tmp_path_factory):
    cfg = ExperimentConfig(
        nominal_scale=0.75, run_count=20, controllers=("koopman", "rff", "nominal")
    )
    artifact = run_experiment(cfg, str(tmp_path_factory.mktemp("fig2")), plots=False)
    assert not artifact.failures, artifact.failures
    return cfg, artifact.logs


@pytest.fixture(scope="module")
def fig3_logs():
    cfg = ExperimentConfig(nominal_scale=0.55, run_count=20, controllers=("koopman", "rff"))
    logs = {}
    for i in range(cfg.run_count):
        x1 = sample_initial_state(cfg, cfg.base_seed + i)
        for name in cfg.controllers:
            logs[(i, name)] = simulate_run(cfg, i, name, x1=x1)
    return cfg, logs


def final_error(log):
    return float(stabilization_error(log)[-1])


# ---------------------------------------------------------------- criteria


def test_gradient_oracle():
    start = time.time()
    worst = gradient_check(instances=100)
    elapsed = time.time() - start
    report(
        "gradient oracle",
        worst < 1e-6 and elapsed < 1.0,
        f"max rel err {worst:.2e} over 100 instances in {elapsed:.2f}s",
    )


def test_solver_oracle():
    start = time.time()
    rel = lqr_check()
    elapsed = time.time() - start
    report(
        "solver oracle (iLQR vs Riccati)",
        rel < 1e-6 and elapsed < 1.0,
        f"rel cost gap {rel:.2e} in {elapsed:.2f}s",
    )


def test_integrator_order():
    factor = rk4_order_check()
    report("integrator order", factor >= 12.0, f"error drop factor {factor:.1f} (need >= 12)")


def test_no_mismatch_sanity():
    cfg = ExperimentConfig(nominal_scale=1.0, run_count=20, controllers=("nominal",))
    worst = 0.0
    for i in range(cfg.run_count):
        log = simulate_run(cfg, i, "nominal")
        worst = max(worst, final_error(log))
    report("no-mismatch sanity", worst < 1e-3, f"worst final ||x_T||^2 = {worst:.2e}")


def test_fig2_every_koopman_run_stabilizes(fig2_logs):
    cfg, logs = fig2_logs
    finals = [final_error(logs[(i, "koopman")]) for i in range(cfg.run_count)]
    report(
        "fig2a: Koopman-MPC stabilizes every run",
        max(finals) < 0.05,
        f"worst final ||x_T||^2 = {max(finals):.3g} over {cfg.run_count} runs",
    )


def test_fig2_final_second_ordering(fig2_logs):
    cfg, logs = fig2_logs
    window = int(cfg.control_rate)  # final 1 s
    means = {}
    for name in cfg.controllers:
        curves = np.vstack(
            [stabilization_error(logs[(i, name)])[-window:] for i in range(cfg.run_count)]
        )
        means[name] = float(curves.mean())
    ok = means["koopman"] <= means["rff"] <= means["nominal"]
    report(
        "fig2b: final-second ordering koopman <= rff <= nominal",
        ok,
        f"koopman {means['koopman']:.3g}, rff {means['rff']:.3g}, nominal {means['nominal']:.3g}",
    )


def test_fig2_prediction_error(fig2_logs):
    cfg, logs = fig2_logs
    window = int(2 * cfg.control_rate)  # final 2 s
    pred_err = np.mean(
        [
            np.linalg.norm(
                logs[(i, "koopman")].w[-window:] - logs[(i, "koopman")].w_hat[-window:], axis=-1
            ).mean()
            for i in range(cfg.run_count)
        ]
    )
    # Nominal's implicit prediction is zero, so its error is ||w_t|| on its own run
    zero_pred = np.mean(
        [
            np.linalg.norm(logs[(i, "nominal")].w[-window:], axis=-1).mean()
            for i in range(cfg.run_count)
        ]
    )
    report(
        "fig2c: Koopman one-step prediction beats Nominal's zero prediction",
        pred_err < 0.5 * zero_pred,
        f"koopman mean ||w - w_hat|| {pred_err:.3g} vs 0.5 * nominal ||w|| {0.5 * zero_pred:.3g}",
    )


def test_fig3_55_percent(fig3_logs):
    cfg, logs = fig3_logs
    koop_fail = sum(final_error(logs[(i, "koopman")]) >= 0.1 for i in range(cfg.run_count))
    rff_fail = sum(final_error(logs[(i, "rff")]) >= 0.1 for i in range(cfg.run_count))
    ok = (cfg.run_count - koop_fail) >= 18 and koop_fail <= rff_fail
    report(
        "fig3: 55% scale robustness",
        ok,
        f"koopman failures {koop_fail}/20, rff failures {rff_fail}/20",
    )


def test_estimation_regret_sublinear():
    # residual generated exactly by a fixed lifted-linear model inside the domain ball
    rng = np.random.default_rng(3)
    d_x, d_z, d_feat = 2, 2, 4
    W = rng.normal(size=(d_feat, d_x + d_z))
    obs = ObservableSet(
        phi=lambda w: np.asarray(w, float),
        psi=lambda w, z: np.tanh(
            np.concatenate([np.asarray(w, float), np.asarray(z, float)], axis=-1) @ W.T
        ),
        d_phi=d_x,
        d_psi=d_feat,
        recovery=np.eye(d_x),
    )
    A_true = np.array([[0.5, 0.1], [0.0, 0.4]])
    B_true = 0.3 * rng.normal(size=(d_x, d_feat))
    T = 10_000
    learner = OgdLearner.zero(obs, d_x, eta=1.0 / np.sqrt(T), radius=10.0)
    w = np.zeros(d_x)
    d = d_x + d_feat
    gram = np.zeros((d, d))
    cross = np.zeros((d, d_x))
    sq = 0.0
    cum_online = np.empty(T)
    cum_hindsight = np.empty(T)
    total = 0.0
    for t in range(T):
        z = rng.uniform(-1, 1, size=d_z)
        ps = obs.psi(w, z)
        w_new = A_true @ w + B_true @ ps
        total += loss(learner.model, obs, w, z, w_new)
        learner = ogd_update(learner, obs, z, w_new)
        xi = np.concatenate([w, ps])
        gram += np.outer(xi, xi)
        cross += np.outer(xi, w_new)
        sq += float(w_new @ w_new)
        alpha = np.linalg.lstsq(gram, cross, rcond=None)[0]
        cum_online[t] = total
        cum_hindsight[t] = sq - float(np.sum(cross * alpha))
        w = w_new
    regret = cum_online - np.maximum(cum_hindsight, 0.0)
    exponent = sublinearity_exponent(np.maximum(regret, 1e-12))
    report(
        "estimation regret sublinearity",
        exponent < 0.6,
        f"growth exponent {exponent:.3f} (need < 0.6), final regret {regret[-1]:.3g}",
    )


def test_dynamic_regret_sublinear():
    cfg = ExperimentConfig(
        duration=60.0, nominal_scale=0.75, run_count=1, controllers=("koopman", "oracle")
    )
    x1 = sample_initial_state(cfg, cfg.base_seed)
    koop = simulate_run(cfg, 0, "koopman", x1=x1)
    oracle = simulate_run(cfg, 0, "oracle", x1=x1)
    gap = np.cumsum(koop.stage_cost) - np.cumsum(oracle.stage_cost)
    exponent = sublinearity_exponent(np.maximum(gap, 1e-12))
    detail = f"growth exponent {exponent:.3f} (soft threshold 0.9), final gap {gap[-1]:.3g}"
    if exponent >= 0.9:
        # informational: report the exponent even when the soft threshold fails
        print(f"\n[INFO] dynamic regret exponent above soft threshold: {detail}")
    report("dynamic regret sublinearity", exponent < 0.9, detail)


def test_determinism(tmp_path):
    cfg = ExperimentConfig(run_count=2, duration=2.0, controllers=("koopman", "nominal"))
    a = run_experiment(cfg, str(tmp_path / "a"), plots=False)
    b = run_experiment(cfg, str(tmp_path / "b"), plots=False)
    same = filecmp.cmp(a.runs_csv, b.runs_csv, shallow=False) and filecmp.cmp(
        a.aggregate_csv, b.aggregate_csv, shallow=False
    )
    report("determinism", same, "byte-identical CSVs across two invocations")
