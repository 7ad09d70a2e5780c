"""Adam training of the hybrid NeuralODE with multi-gradient strategies.

Every training step performs exactly one sensitivity-carrying solve, turns
it into the active loss vector plus jacobian, applies the per-loss scale
factors, and feeds the optimizer according to the chosen strategy:

  extend_loss_sum   one Adam step on the gradient of the scaled loss sum
  merge_gradients   one Adam step on combined rows (sum/average/switch)
  sequential        one Adam step per scaled row, in the fixed order
                    SOL, STB, OSC, FRQ, DMP, STF

Solver failures (step-size underflow / step budget) do not kill a run: the
step is logged as failed with parameters and optimizer moments untouched,
and training continues; 50 consecutive failures abort with a diagnostic.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import (
    LossSpec,
    PairSet,
    ReferenceData,
    eigen_trajectory,
    loss_vector_and_jacobian,
)
from .network import DenseNetwork, HybridRHS, DEFAULT_LAYER_SPEC, flatten_params, glorot_init, save_params, with_params
from .solver import SolvabilityError, SolverConfig, StepBudgetError, solve

__all__ = [
    "AdamState",
    "GradientStrategy",
    "TrainingProblem",
    "TrainingRecord",
    "TrainingLog",
    "TrainResult",
    "TrainingAbortedError",
    "adam_step",
    "train",
]

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 50


class TrainingAbortedError(RuntimeError):
    """Too many consecutive solver failures; carries the partial log."""

    def __init__(self, message: str, partial_log: "TrainingLog"):
        super().__init__(message)
        self.partial_log = partial_log


@dataclass
class AdamState:
    """Adam optimizer state (defaults per the published parameterization)."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float = 1e-3) -> "AdamState":
        return cls(
            first_moment=np.zeros(n_params),
            second_moment=np.zeros(n_params),
            learning_rate=learning_rate,
        )


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector.

    A non-finite gradient rejects the step: parameters and moments are left
    untouched and a warning is logged.
    """
    if params.shape != gradient.shape:
        raise ValueError("parameter/gradient shapes differ")
    if not np.all(np.isfinite(gradient)):
        log.warning("non-finite gradient: optimizer step rejected")
        return params
    state.step += 1
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * gradient
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * gradient * gradient
    m_hat = state.first_moment / (1.0 - state.beta1**state.step)
    v_hat = state.second_moment / (1.0 - state.beta2**state.step)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass(frozen=True)
class GradientStrategy:
    """How the per-loss gradient rows reach the optimizer.

    ``merge_gradients`` combines rows first: ``sum``, ``average``, or
    ``switch`` (the row with the largest 2-norm after scaling, ties broken
    by the fixed loss order).
    """

    mode: str  # extend_loss_sum | merge_gradients | sequential
    merge: str = "sum"  # sum | average | switch

    def __post_init__(self):
        if self.mode not in ("extend_loss_sum", "merge_gradients", "sequential"):
            raise ValueError(f"unknown strategy mode {self.mode!r}")
        if self.merge not in ("sum", "average", "switch"):
            raise ValueError(f"unknown merge rule {self.merge!r}")

    @classmethod
    def parse(cls, text: str) -> "GradientStrategy":
        key = text.strip().lower()
        if key in ("extend_loss_sum", "sequential"):
            return cls(mode=key)
        if key.startswith("merge_"):
            return cls(mode="merge_gradients", merge=key[len("merge_") :])
        raise ValueError(f"unknown gradient strategy {text!r}")

    def label(self) -> str:
        if self.mode == "merge_gradients":
            return f"merge_{self.merge}"
        return self.mode


@dataclass(frozen=True)
class TrainingProblem:
    """Everything a training run needs besides the loss spec and strategy."""

    data: ReferenceData
    x0: np.ndarray
    t_span: tuple[float, float]
    save_at: np.ndarray
    solver: SolverConfig = SolverConfig()
    pairs: PairSet | None = None
    layer_spec: tuple = DEFAULT_LAYER_SPEC

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        object.__setattr__(self, "save_at", np.asarray(self.save_at, dtype=np.float64))


@dataclass
class TrainingRecord:
    """One completed (or failed) training step."""

    step: int
    losses: dict[str, float]
    lambda_w_max: float
    accepted_steps: int
    rejected_steps: int
    millis: float
    failed: bool
    degenerate_instants: int


@dataclass
class TrainingLog:
    loss_names: tuple[str, ...]
    records: list[TrainingRecord] = field(default_factory=list)

    CSV_FIXED = ("lambda_w_max", "accepted_steps", "rejected_steps", "failed")

    def header(self) -> list[str]:
        return ["step", *(f"loss_{n.lower()}" for n in self.loss_names), *self.CSV_FIXED]

    def row(self, rec: TrainingRecord) -> list[str]:
        cells = [str(rec.step)]
        cells += [repr(rec.losses.get(n, math.nan)) for n in self.loss_names]
        cells += [
            repr(rec.lambda_w_max),
            str(rec.accepted_steps),
            str(rec.rejected_steps),
            str(int(rec.failed)),
        ]
        return cells


@dataclass
class TrainResult:
    network: DenseNetwork
    log: TrainingLog
    aborted: bool = False


def _combine_rows(scaled_rows: np.ndarray, strategy: GradientStrategy) -> list[np.ndarray]:
    if strategy.mode == "sequential":
        return [scaled_rows[i] for i in range(scaled_rows.shape[0])]
    if strategy.mode == "extend_loss_sum" or strategy.merge == "sum":
        return [scaled_rows.sum(axis=0)]
    if strategy.merge == "average":
        return [scaled_rows.mean(axis=0)]
    norms = np.linalg.norm(scaled_rows, axis=1)
    return [scaled_rows[int(np.argmax(norms))]]


def train(
    problem: TrainingProblem,
    spec: LossSpec,
    strategy: GradientStrategy,
    steps: int,
    seed: int = 0,
    network: DenseNetwork | None = None,
    learning_rate: float = 1e-3,
    log_path: str | Path | None = None,
    timing_path: str | Path | None = None,
    checkpoint_every: int = 0,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Run ``steps`` training steps and return the network plus telemetry.

    (seed, spec, strategy, steps) fully determine the result; ``network``
    overrides the seeded Glorot initialization when given. ``log_path``
    streams the deterministic telemetry columns as CSV while training;
    wall-clock millis go to ``timing_path`` (they are not reproducible
    across runs and would break bitwise log comparisons).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    net = network if network is not None else glorot_init(seed, problem.layer_spec)
    theta = flatten_params(net)
    adam = AdamState.fresh(theta.size, learning_rate=learning_rate)
    active = spec.ordered_active()
    scalings = np.array([spec.scaling(name) for name in active])
    training_log = TrainingLog(loss_names=active)

    log_file = open(log_path, "w", newline="") if log_path else None
    log_writer = csv.writer(log_file) if log_file else None
    if log_writer:
        log_writer.writerow(training_log.header())
    timing_file = open(timing_path, "w", newline="") if timing_path else None
    timing_writer = csv.writer(timing_file) if timing_file else None
    if timing_writer:
        timing_writer.writerow(["step", "millis"])

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    consecutive_failures = 0
    aborted = False
    try:
        for step_no in range(1, steps + 1):
            t_start = time.perf_counter()
            rhs = HybridRHS(with_params(net, theta), state_dim=problem.x0.size)
            try:
                solution = solve(
                    rhs,
                    problem.x0,
                    problem.t_span,
                    problem.save_at,
                    problem.solver,
                    with_sensitivities=True,
                )
            except (SolvabilityError, StepBudgetError) as exc:
                lam_w = getattr(exc, "max_re_lambda", None)
                rec = TrainingRecord(
                    step=step_no,
                    losses={},
                    lambda_w_max=math.nan if lam_w is None else float(lam_w),
                    accepted_steps=0,
                    rejected_steps=0,
                    millis=(time.perf_counter() - t_start) * 1e3,
                    failed=True,
                    degenerate_instants=0,
                )
                training_log.records.append(rec)
                if log_writer:
                    log_writer.writerow(training_log.row(rec))
                if timing_writer:
                    timing_writer.writerow([str(rec.step), repr(rec.millis)])
                consecutive_failures += 1
                log.warning("step %d: solver failure (%s); parameters kept", step_no, exc)
                if consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
                    aborted = True
                    raise TrainingAbortedError(
                        f"{consecutive_failures} consecutive solver failures at "
                        f"step {step_no}: {exc}",
                        training_log,
                    )
                continue
            consecutive_failures = 0

            evaluation = loss_vector_and_jacobian(
                rhs, solution, spec, data=problem.data, pairs=problem.pairs
            )
            if evaluation.trajectory is not None:
                lambda_w = float(np.max(evaluation.trajectory.values.real))
            else:
                telemetry = eigen_trajectory(rhs, solution, with_tangents=False,
                                             stride=spec.eigen_stride)
                lambda_w = float(np.max(telemetry.values.real))

            rows = evaluation.jacobian.copy()
            bad_rows = ~np.all(np.isfinite(rows), axis=1)
            if np.any(bad_rows):
                log.warning(
                    "step %d: zeroing non-finite gradient rows %s",
                    step_no,
                    [evaluation.names[i] for i in np.nonzero(bad_rows)[0]],
                )
                rows[bad_rows] = 0.0
            scaled = rows * scalings[:, None]
            for gradient in _combine_rows(scaled, strategy):
                theta = adam_step(adam, theta, gradient)

            rec = TrainingRecord(
                step=step_no,
                losses={n: float(v) for n, v in zip(evaluation.names, evaluation.values)},
                lambda_w_max=lambda_w,
                accepted_steps=solution.accepted_steps,
                rejected_steps=solution.rejected_steps,
                millis=(time.perf_counter() - t_start) * 1e3,
                failed=False,
                degenerate_instants=evaluation.degenerate_instants,
            )
            training_log.records.append(rec)
            if log_writer:
                log_writer.writerow(training_log.row(rec))
            if timing_writer:
                timing_writer.writerow([str(rec.step), repr(rec.millis)])
            if checkpoint_every and checkpoint_dir and step_no % checkpoint_every == 0:
                checkpoint_dir.mkdir(parents=True, exist_ok=True)
                save_params(
                    with_params(net, theta), checkpoint_dir / f"params_step{step_no}.bin"
                )
    finally:
        if log_file:
            log_file.close()
        if timing_file:
            timing_file.close()

    return TrainResult(network=with_params(net, theta), log=training_log, aborted=aborted)
