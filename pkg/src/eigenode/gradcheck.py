"""Finite-difference oracle suites behind the `gradcheck` CLI subcommand.

Three independent checks, each comparing an analytic derivative path
against central finite differences:

  eigen-forward    eigenvalue tangents of random matrices
  solver-sens      d(state)/d(theta) of a full adaptive solve
  loss-jacobian    every active loss row of loss_vector_and_jacobian,
                   on a generic network and on one crafted to produce a
                   split-real, partly unstable spectrum (so the STB, OSC
                   and STF rows carry signal too)

Relative errors are measured against max(|fd|, |analytic|, 1e-8) so rows
that are identically zero on both sides pass cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import eigen
from .eigen_grad import eigen_forward
from .linalg import solve as lin_solve
from .losses import LossSpec, ReferenceData, loss_vector_and_jacobian
from .network import DenseLayer, DenseNetwork, HybridRHS, flatten_params, glorot_init, with_params
from .solver import LinearOscillator, SolverConfig, ground_truth_solve, solve

__all__ = ["CheckResult", "run_gradcheck"]

TOL_EIGEN = 1e-5
TOL_SOLVER = 1e-4
TOL_LOSS = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {self.name}: {status} "
            f"(max rel err {self.max_rel_err:.3e}, tol {self.tolerance:.0e})"
        )


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(analytic))), 1e-8)
    return float(np.max(np.abs(analytic - fd))) / scale


def _match_nearest(base: np.ndarray, vals: np.ndarray) -> np.ndarray:
    out = np.empty_like(base)
    used = np.zeros(vals.size, dtype=bool)
    for i, b in enumerate(base):
        dist = np.where(used, np.inf, np.abs(vals - b))
        j = int(np.argmin(dist))
        out[i] = vals[j]
        used[j] = True
    return out


def _check_eigen_forward(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    done = 0
    while done < 8:
        a = rng.uniform(-5.0, 5.0, (4, 4))
        e = eigen(a)
        gaps = np.abs(e.values[None, :] - e.values[:, None])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 1e-2:
            continue
        da = rng.uniform(-1.0, 1.0, (4, 4))
        analytic = eigen_forward(e, da).dvalues
        vp = _match_nearest(e.values, eigen(a + h * da, with_vectors=False).values)
        vm = _match_nearest(e.values, eigen(a - h * da, with_vectors=False).values)
        fd = (vp - vm) / (2.0 * h)
        worst = max(worst, _rel_err(analytic.view(np.float64), fd.view(np.float64)))
        done += 1
    return CheckResult("eigen-forward", worst, TOL_EIGEN)


def _check_solver_sensitivities(seed: int) -> CheckResult:
    net = glorot_init(seed, ((2, 8, "tanh"), (8, 1, "identity")))
    theta = flatten_params(net)
    x0 = np.array([1.0, 0.0])
    ts = np.arange(11) * 0.2
    sol = solve(HybridRHS(net), x0, (0.0, 2.0), ts, with_sensitivities=True)
    h = 1e-5
    fd = np.empty_like(sol.sensitivities)
    for p in range(theta.size):
        tp = theta.copy()
        tp[p] += h
        tm = theta.copy()
        tm[p] -= h
        sp = solve(HybridRHS(with_params(net, tp)), x0, (0.0, 2.0), ts)
        sm = solve(HybridRHS(with_params(net, tm)), x0, (0.0, 2.0), ts)
        fd[:, :, p] = (sp.states - sm.states) / (2.0 * h)
    return CheckResult("solver-sens", _rel_err(sol.sensitivities, fd), TOL_SOLVER)


def _split_spectrum_network(seed: int) -> DenseNetwork:
    """Tanh network whose jacobian row is ~(0.5, 0.3) near the origin.

    That system matrix has split real eigenvalues (one unstable), so the
    STB/OSC/STF rows are exercised away from their zero sets.
    """
    net = glorot_init(seed, ((2, 8, "tanh"), (8, 1, "identity")))
    w1 = net.layers[0].weight  # (8, 2); biases are zero, so tanh'(z(0)) = 1
    target = np.array([[0.5], [0.3]])
    gram = w1.T @ w1
    w2 = (w1 @ lin_solve(gram, target)).real.T  # least-norm row with w2 @ w1 = target^T
    layers = (
        net.layers[0],
        DenseLayer(weight=w2, bias=net.layers[1].bias.copy(), activation="identity"),
    )
    return DenseNetwork(layers=layers)


def _check_loss_jacobian(seed: int) -> CheckResult:
    ts = np.arange(11) * 0.2
    ref = ground_truth_solve(
        LinearOscillator(25.0, 0.05, 1.0), np.array([1.0, 0.0]), (0.0, 2.0), ts,
        SolverConfig(abs_tol=1e-10, rel_tol=1e-10),
    )
    data = ReferenceData(times=ts, x1=ref.states[:, 0])
    spec = LossSpec(
        active=("SOL", "STB", "OSC", "FRQ", "DMP", "STF"),
        freq_target=0.8,
        damping_target=0.01,
        stiffness_target=2.0,
    )
    x0 = np.array([1.0, 0.0])
    h = 1e-6
    worst = 0.0
    nets = [
        glorot_init(seed, ((2, 6, "tanh"), (6, 1, "identity"))),
        _split_spectrum_network(seed + 1),
    ]
    for net in nets:
        theta = flatten_params(net)
        rhs = HybridRHS(net)
        sol = solve(rhs, x0, (0.0, 2.0), ts, with_sensitivities=True)
        ev = loss_vector_and_jacobian(rhs, sol, spec, data)
        fd = np.empty_like(ev.jacobian)
        for p in range(theta.size):
            tp = theta.copy()
            tp[p] += h
            tm = theta.copy()
            tm[p] -= h
            rp = HybridRHS(with_params(net, tp))
            rm = HybridRHS(with_params(net, tm))
            evp = loss_vector_and_jacobian(
                rp, solve(rp, x0, (0.0, 2.0), ts, with_sensitivities=True), spec, data
            )
            evm = loss_vector_and_jacobian(
                rm, solve(rm, x0, (0.0, 2.0), ts, with_sensitivities=True), spec, data
            )
            fd[:, p] = (evp.values - evm.values) / (2.0 * h)
        for i in range(len(ev.names)):
            worst = max(worst, _rel_err(ev.jacobian[i], fd[i]))
    return CheckResult("loss-jacobian", worst, TOL_LOSS)


def run_gradcheck(seed: int = 2024) -> list[CheckResult]:
    """All finite-difference oracle suites; deterministic for a given seed."""
    return [
        _check_eigen_forward(seed),
        _check_solver_sensitivities(seed),
        _check_loss_jacobian(seed),
    ]
