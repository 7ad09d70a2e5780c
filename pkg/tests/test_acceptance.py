"""Acceptance gate: one test per criterion, each printing a verdict line.

The three case-study sweeps run at their full preset budgets inside
session fixtures (a two-worker process pool; expect tens of minutes on a
small machine). Every other criterion is self-contained and fast.
"""

import csv
import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from eigenode.cli import main as cli_main
from eigenode.eigen import eigen, eigen2x2_closed_form
from eigenode.eigen_grad import eigen_forward, eigen_reverse
from eigenode.experiments import ExperimentConfig, generate_data, resolve_targets, run_experiment
from eigenode.losses import LossSpec, ReferenceData, eigen_trajectory, loss_vector_and_jacobian
from eigenode.network import HybridRHS, flatten_params, glorot_init, load_params, with_params, zero_network
from eigenode.solver import (
    LinearOscillator,
    SolverConfig,
    ground_truth_solve,
    reset_sensitivity_solve_count,
    sensitivity_solve_count,
    solve,
)
from eigenode.training import GradientStrategy, TrainingProblem, train

from conftest import record_criterion

pytestmark = pytest.mark.acceptance

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
THREADS = 2


def _verdict(num: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    record_criterion(f"criterion {num:2d}: {status} — {detail}")
    assert passed, f"criterion {num}: {detail}"


def _final_losses(summaries, configuration):
    return {s.seed: s.final_loss_sol for s in summaries if s.configuration == configuration}


def _validation_maes(summaries, configuration):
    return {s.seed: s.validation_mae for s in summaries if s.configuration == configuration}


@pytest.fixture(scope="session")
def oscillator_sweep(tmp_path_factory):
    config = ExperimentConfig.from_toml(CONFIG_DIR / "oscillator.toml")
    config = replace(
        config,
        out_dir=str(tmp_path_factory.mktemp("osc")),
        configurations=("SOL", "SOL+FRQ+DMP", "SOL+FRQ+DMP+STB"),
    )
    summaries = run_experiment(config, threads=THREADS)
    return config, summaries


@pytest.fixture(scope="session")
def nyquist_sweep(tmp_path_factory):
    config = ExperimentConfig.from_toml(CONFIG_DIR / "nyquist.toml")
    config = replace(
        config,
        out_dir=str(tmp_path_factory.mktemp("nyq")),
        configurations=("SOL", "SOL+FRQ+DMP+STB+OSC"),
    )
    summaries = run_experiment(config, threads=THREADS)
    return config, summaries


@pytest.fixture(scope="session")
def vanderpol_sweep(tmp_path_factory):
    config = ExperimentConfig.from_toml(CONFIG_DIR / "vanderpol.toml")
    config = replace(
        config,
        out_dir=str(tmp_path_factory.mktemp("vdp")),
        configurations=("SOL", "SOL+FRQ+DMP+OSC"),
    )
    summaries = run_experiment(config, threads=THREADS)
    return config, summaries


def test_criterion_1_eigen_solver_correctness():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst_residual = 0.0
    worst_trace = 0.0
    worst_det = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        a = rng.uniform(-5.0, 5.0, (n, n))
        fro = max(np.linalg.norm(a), 1.0)
        result = eigen(a)
        for i in range(n):
            res = np.linalg.norm(a @ result.vectors[:, i] - result.values[i] * result.vectors[:, i])
            worst_residual = max(worst_residual, res / fro)
        trace_err = abs(np.sum(result.values) - np.trace(a)) / max(abs(np.trace(a)), 1.0)
        det = np.linalg.det(a)
        det_err = abs(np.prod(result.values) - det) / max(abs(det), 1.0)
        worst_trace = max(worst_trace, trace_err)
        worst_det = max(worst_det, det_err)
    worst_oracle = 0.0
    for _ in range(500):
        a = rng.uniform(-5.0, 5.0, (2, 2))
        gap = np.abs(eigen(a, with_vectors=False).values - eigen2x2_closed_form(a).values)
        worst_oracle = max(worst_oracle, float(np.max(gap)))
    elapsed = time.perf_counter() - t0
    passed = (
        worst_residual <= 1e-8
        and worst_trace <= 1e-8
        and worst_det <= 1e-8
        and worst_oracle <= 1e-10
        and elapsed < 10.0
    )
    _verdict(
        1, passed,
        f"residual {worst_residual:.2e} (<=1e-8), trace {worst_trace:.2e}, "
        f"det {worst_det:.2e}, oracle gap {worst_oracle:.2e} (<=1e-10), "
        f"runtime {elapsed:.1f}s (<10s)",
    )


def test_criterion_2_eigen_sensitivities():
    rng = np.random.default_rng(2002)
    t0 = time.perf_counter()
    worst_fwd = 0.0
    worst_dot = 0.0
    h = 1e-6
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 6))
        a = rng.uniform(-5.0, 5.0, (n, n))
        e = eigen(a)
        gaps = np.abs(e.values[None, :] - e.values[:, None])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() <= 1e-2:
            continue
        da = rng.uniform(-1.0, 1.0, (n, n))
        fwd = eigen_forward(e, da)

        base = e.values

        def match(vals):
            out = np.empty_like(base)
            used = np.zeros(vals.size, dtype=bool)
            for i, b in enumerate(base):
                dist = np.where(used, np.inf, np.abs(vals - b))
                j = int(np.argmin(dist))
                out[i] = vals[j]
                used[j] = True
            return out

        fd = (
            match(eigen(a + h * da, with_vectors=False).values)
            - match(eigen(a - h * da, with_vectors=False).values)
        ) / (2.0 * h)
        scale = max(float(np.max(np.abs(fd))), 1.0)
        worst_fwd = max(worst_fwd, float(np.max(np.abs(fwd.dvalues - fd))) / scale)

        gbar = np.diag(rng.normal(size=n) + 1j * rng.normal(size=n))
        abar = eigen_reverse(e, gbar, np.zeros((n, n)))
        lhs = float(np.sum(abar * da))
        rhs = float(np.sum(gbar * fwd.dD).real)
        worst_dot = max(worst_dot, abs(lhs - rhs) / max(abs(rhs), 1.0))
        checked += 1
    elapsed = time.perf_counter() - t0
    passed = worst_fwd <= 1e-5 and worst_dot <= 1e-8 and elapsed < 30.0
    _verdict(
        2, passed,
        f"forward-vs-FD {worst_fwd:.2e} (<=1e-5), dot identity {worst_dot:.2e} "
        f"(<=1e-8), runtime {elapsed:.1f}s (<30s)",
    )


def test_criterion_3_solver_order_and_sensitivity():
    t0 = time.perf_counter()
    system = LinearOscillator(25.0, 0.05, 1.0)
    alpha = 0.025
    omega = math.sqrt(25.0 - alpha * alpha)
    exact = math.exp(-alpha * 10.0) * (
        math.cos(omega * 10.0) + alpha / omega * math.sin(omega * 10.0)
    )
    hs = np.array([0.1, 0.05, 0.025])
    errs = []
    for h in hs:
        sol = ground_truth_solve(
            system, np.array([1.0, 0.0]), (0.0, 10.0), np.array([10.0]),
            SolverConfig(fixed_step=float(h)),
        )
        errs.append(abs(sol.states[0, 0] - exact))
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])

    net = glorot_init(2024, ((2, 8, "tanh"), (8, 1, "identity")))
    theta = flatten_params(net)
    ts = np.arange(11) * 0.2
    x0 = np.array([1.0, 0.0])
    sol = solve(HybridRHS(net), x0, (0.0, 2.0), ts, with_sensitivities=True)
    fd = np.empty_like(sol.sensitivities)
    h = 1e-5
    for p in range(theta.size):
        tp = theta.copy()
        tp[p] += h
        tm = theta.copy()
        tm[p] -= h
        sp = solve(HybridRHS(with_params(net, tp)), x0, (0.0, 2.0), ts)
        sm = solve(HybridRHS(with_params(net, tm)), x0, (0.0, 2.0), ts)
        fd[:, :, p] = (sp.states - sm.states) / (2.0 * h)
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(sol.sensitivities))), 1.0)
    grad_err = float(np.max(np.abs(sol.sensitivities - fd))) / scale
    elapsed = time.perf_counter() - t0
    passed = slope >= 4.5 and grad_err <= 1e-4 and elapsed < 60.0
    _verdict(
        3, passed,
        f"order slope {slope:.2f} (>=4.5), gradient-vs-FD {grad_err:.2e} "
        f"(<=1e-4), runtime {elapsed:.1f}s (<60s)",
    )


def test_criterion_4_gradcheck_subcommand(capsys):
    t0 = time.perf_counter()
    code = cli_main(["gradcheck"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    passed = code == 0 and out.count("PASS") == 3 and elapsed < 120.0
    _verdict(
        4, passed,
        f"gradcheck exit {code} with {out.count('PASS')}/3 suites green, "
        f"runtime {elapsed:.1f}s (<2min)",
    )


def test_criterion_5_shared_jacobian_economy(oscillator_sweep):
    config, summaries = oscillator_sweep
    # counter: exactly one sensitivity-carrying solve per training step
    ts = np.arange(101) * 0.1
    ref = ground_truth_solve(
        LinearOscillator(25.0, 0.05, 1.0), np.array([1.0, 0.0]), (0.0, 10.0), ts,
        SolverConfig(abs_tol=1e-10, rel_tol=1e-10),
    )
    data = ReferenceData(times=ts, x1=ref.states[:, 0])
    problem = TrainingProblem(
        data=data, x0=np.array([1.0, 0.0]), t_span=(0.0, 10.0), save_at=ts
    )
    all6 = LossSpec(
        active=("SOL", "STB", "OSC", "FRQ", "DMP", "STF"),
        freq_target=0.795765, damping_target=0.005, stiffness_target=1.0,
    )
    reset_sensitivity_solve_count()
    train(problem, all6, GradientStrategy.parse("sequential"), steps=8, seed=3)
    solves_six = sensitivity_solve_count()
    reset_sensitivity_solve_count()
    train(problem, LossSpec(active=("SOL",)), GradientStrategy.parse("sequential"),
          steps=8, seed=3)
    solves_one = sensitivity_solve_count()
    counter_ok = solves_six == 8 and solves_one == 8

    # marginal wall-clock of six active losses vs one, on a converged network
    # (same parameters for both sides; the trainer's telemetry eigen pass is
    # mirrored for the single-loss side)
    trained = [s for s in summaries if s.configuration == "SOL+FRQ+DMP" and s.seed == 1]
    net = load_params(Path(trained[0].run_dir) / "params.bin")
    rhs = HybridRHS(net)

    def one_step(spec, telemetry):
        t0 = time.perf_counter()
        sol = solve(rhs, problem.x0, problem.t_span, ts, with_sensitivities=True)
        loss_vector_and_jacobian(rhs, sol, spec, data=data)
        if telemetry:
            eigen_trajectory(rhs, sol, with_tangents=False)
        return time.perf_counter() - t0

    sol1 = LossSpec(active=("SOL",))
    one_step(all6, False)  # warm caches
    one_step(sol1, True)
    # interleaved min-of-N: robust against transient machine load
    times_one, times_six = [], []
    for _ in range(9):
        times_one.append(one_step(sol1, telemetry=True))
        times_six.append(one_step(all6, telemetry=False))
    t_one = min(times_one)
    t_six = min(times_six)
    marginal = (t_six - t_one) / t_one
    passed = counter_ok and marginal < 0.25
    _verdict(
        5, passed,
        f"sensitivity solves per step: {solves_six / 8:.0f} (6 losses) / "
        f"{solves_one / 8:.0f} (1 loss); marginal step cost of 6 vs 1: "
        f"{100 * marginal:.1f}% (<25%)",
    )


def test_criterion_6_oscillator_reproduction(oscillator_sweep):
    config, summaries = oscillator_sweep
    sol_only = _final_losses(summaries, "SOL")
    informed = _final_losses(summaries, "SOL+FRQ+DMP")
    stuck = all(v > 0.15 for v in sol_only.values())
    converged = sum(v < 0.05 for v in informed.values())
    passed = stuck and converged >= 2
    _verdict(
        6, passed,
        f"SOL-only final l_SOL {sorted(round(v, 3) for v in sol_only.values())} "
        f"(all >0.15), SOL+FRQ+DMP {sorted(round(v, 4) for v in informed.values())} "
        f"(<0.05 for {converged}/3 seeds, need >=2)",
    )


def test_criterion_7_stability_enforcement(oscillator_sweep):
    config, summaries = oscillator_sweep
    worst = -math.inf
    for s in summaries:
        if "STB" not in s.configuration:
            continue
        with open(Path(s.run_dir) / "training_log.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        lam = [float(r["lambda_w_max"]) for r in rows if int(r["step"]) > 500]
        worst = max(worst, max(lam))
    passed = worst <= 1e-2
    _verdict(
        7, passed,
        f"max Re(lambda_w) after step 500 across STB runs: {worst:.3e} (<=1e-2)",
    )


def test_criterion_8_nyquist_reproduction(nyquist_sweep):
    config, summaries = nyquist_sweep
    sol_only = _validation_maes(summaries, "SOL")
    informed = _validation_maes(summaries, "SOL+FRQ+DMP+STB+OSC")
    wins = sum(
        informed[seed] * 3.0 <= sol_only[seed] for seed in config.seeds
    )
    passed = wins >= 2
    _verdict(
        8, passed,
        f"dense-grid MAE SOL {sorted(round(v, 4) for v in sol_only.values())} vs "
        f"SOL+FRQ+DMP+STB+OSC {sorted(round(v, 4) for v in informed.values())}; "
        f">=3x better for {wins}/3 seeds (need >=2)",
    )


def test_criterion_9_van_der_pol(vanderpol_sweep, caplog):
    config, summaries = vanderpol_sweep
    sol_only = _validation_maes(summaries, "SOL")
    informed = _validation_maes(summaries, "SOL+FRQ+DMP+OSC")
    wins = sum(informed[seed] < sol_only[seed] for seed in config.seeds)
    no_crash = all(not s.aborted for s in summaries) and all(
        s.steps == config.steps for s in summaries
    )

    # degeneracy-skip probe: a zero network has the double eigenvalue {0, 0}
    # at every instant (the Van der Pol origin produces the same situation)
    ts = np.arange(16) / 3.0
    data = generate_data(replace(config, horizon=5.0))
    rhs = HybridRHS(zero_network())
    sol = solve(rhs, np.array([1.0, 0.0]), (0.0, 5.0), ts, with_sensitivities=True)
    spec = LossSpec(active=("SOL", "STB", "OSC"))
    with caplog.at_level(logging.WARNING, logger="eigenode.losses"):
        ev = loss_vector_and_jacobian(rhs, sol, spec, data=data)
    skip_exercised = ev.degenerate_instants == ts.size and any(
        "degenerate" in rec.message for rec in caplog.records
    )
    passed = wins >= 2 and no_crash and skip_exercised
    _verdict(
        9, passed,
        f"dense-grid MAE SOL {sorted(round(v, 3) for v in sol_only.values())} vs "
        f"SOL+FRQ+DMP+OSC {sorted(round(v, 3) for v in informed.values())}; better "
        f"for {wins}/3 seeds (need >=2); no crashes: {no_crash}; "
        f"degeneracy skip logged: {skip_exercised}",
    )


def test_criterion_10_determinism(tmp_path):
    config = ExperimentConfig.from_toml(CONFIG_DIR / "oscillator.toml")
    ts = np.arange(101) * 0.1
    system = LinearOscillator(25.0, 0.05, 1.0)
    ref = ground_truth_solve(
        system, np.array([1.0, 0.0]), (0.0, 10.0), ts,
        SolverConfig(abs_tol=1e-10, rel_tol=1e-10),
    )
    problem = TrainingProblem(
        data=ReferenceData(times=ts, x1=ref.states[:, 0]),
        x0=np.array([1.0, 0.0]), t_span=(0.0, 10.0), save_at=ts,
    )
    f_hat, d_hat, _ = resolve_targets(config)
    spec = LossSpec(active=("SOL", "FRQ", "DMP"), freq_target=f_hat, damping_target=d_hat)
    paths = []
    for rep in range(2):
        log_path = tmp_path / f"training_log_{rep}.csv"
        train(problem, spec, GradientStrategy.parse("sequential"), steps=60, seed=1,
              log_path=log_path, timing_path=tmp_path / f"timings_{rep}.csv")
        paths.append(log_path)
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    _verdict(10, identical, f"repeated seeded run training_log.csv bitwise identical: {identical}")
