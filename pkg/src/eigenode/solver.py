"""Adaptive Tsit5 integration with discrete forward sensitivities.

The stepper is the 7-stage explicit Runge-Kutta 5(4) pair of Tsitouras
(FSAL, with the free 4th-order interpolant for dense output), driven by a
PI step-size controller on the embedded error estimate (safety 0.9,
exponents 0.7/5 and 0.4/5).

Parameter sensitivities d(state)/d(theta) are propagated *through the
discrete method*: every stage tangent is

    dk_i = (df/dx)(g_i) . (S_n + h sum_j a_ij dk_j) + (df/dtheta)(g_i)

with the step sizes frozen to the primal's accepted sequence, so the
result is the exact derivative of the realized discrete map. The step-size
controller itself is not differentiated.

Right-hand sides are autonomous callables ``f(x)``; sensitivity solves
additionally require a ``stage_eval(x) -> (f, df/dx, df/dtheta)`` method
(see :class:`eigenode.network.HybridRHS`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eigen import eigen

__all__ = [
    "SolverConfig",
    "OdeSolution",
    "SolvabilityError",
    "StepBudgetError",
    "LinearOscillator",
    "VanDerPol",
    "solve",
    "ground_truth_solve",
    "sensitivity_solve_count",
    "reset_sensitivity_solve_count",
]

# --- Tsit5 tableau ---------------------------------------------------------

TSIT5_C = np.array(
    [0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0]
)
TSIT5_A = np.zeros((7, 7))
TSIT5_A[1, 0] = 0.161
TSIT5_A[2, :2] = (-0.008480655492356989, 0.335480655492357)
TSIT5_A[3, :3] = (2.8971530571054935, -6.359448489975075, 4.3622954328695815)
TSIT5_A[4, :4] = (
    5.325864828439257,
    -11.748883564062828,
    7.4955393428898365,
    -0.09249506636175525,
)
TSIT5_A[5, :5] = (
    5.86145544294642,
    -12.92096931784711,
    8.159367898576159,
    -0.071584973281401,
    -0.028269050394068383,
)
TSIT5_A[6, :6] = (
    0.09646076681806523,
    0.01,
    0.4798896504144996,
    1.379008574103742,
    -3.290069515436081,
    2.324710524099774,
)
# 5th-order weights (FSAL: identical to the last stage row, b7 = 0).
TSIT5_B = TSIT5_A[6].copy()
# Error weights b - bhat of the embedded 4th-order solution.
TSIT5_E = np.array(
    [
        -0.00178001105222577714,
        -0.0008164344596567469,
        0.007880878010261995,
        -0.1447110071732629,
        0.5823571654525552,
        -0.45808210592918697,
        0.015151515151515152,
    ]
)
# Free interpolant: w_i(theta) = sum_m TSIT5_INTERP[i, m] * theta**(m+1).
TSIT5_INTERP = np.array(
    [
        [1.0, -2.763706197274826, 2.9132554618219126, -1.0530884977290216],
        [0.0, 0.1317, -0.2234, 0.1017],
        [0.0, 3.9302962368947516, -5.941033872131505, 2.490627285651252793],
        [0.0, -12.411077166933676, 30.33818863028232, -16.548102889244902],
        [0.0, 37.50931341651104, -88.1789048947664, 47.37952196281928],
        [0.0, -27.896526289197286, 65.09189467479366, -34.87065786149661],
        [0.0, 1.5, -4.0, 2.5],
    ]
)

SAFETY = 0.9
PI_ALPHA = 0.7 / 5.0
PI_BETA = 0.4 / 5.0
FAC_MIN = 0.2
FAC_MAX = 5.0


def interpolation_weights(theta: float) -> np.ndarray:
    """Stage weights of the dense output at fraction theta of a step."""
    powers = np.array([theta, theta**2, theta**3, theta**4])
    return TSIT5_INTERP @ powers


class SolvabilityError(RuntimeError):
    """Step size underflowed the configured minimum.

    ``time`` is where integration stalled; ``max_re_lambda`` is the largest
    real part of the system-matrix spectrum there (None if unavailable).
    """

    def __init__(self, time: float, max_re_lambda: float | None):
        detail = "" if max_re_lambda is None else f", max Re(lambda) ~ {max_re_lambda:.4g}"
        super().__init__(f"step size underflow at t={time:.6g}{detail}")
        self.time = time
        self.max_re_lambda = max_re_lambda


class StepBudgetError(RuntimeError):
    """The step budget (max_steps) was exhausted before reaching t1."""


@dataclass(frozen=True)
class SolverConfig:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    min_step: float = 1e-8
    max_step: float = math.inf
    max_steps: int = 1_000_000
    fixed_step: float | None = None  # disables error control when set
    first_step: float | None = None

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if not (0.0 < self.min_step < self.max_step):
            raise ValueError("need 0 < min_step < max_step")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass
class OdeSolution:
    """States (and optionally d(state)/d(theta)) at the requested save points."""

    times: np.ndarray  # (K,)
    states: np.ndarray  # (K, d)
    sensitivities: np.ndarray | None  # (K, d, P)
    accepted_steps: int
    rejected_steps: int


@dataclass(frozen=True)
class LinearOscillator:
    """Spring-damper oscillator: x = (position, velocity)."""

    c: float  # N/m
    d: float = 0.0  # N*s/m
    m: float = 1.0  # kg

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[1], (-self.c * x[0] - self.d * x[1]) / self.m])

    def state_jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.array([[0.0, 1.0], [-self.c / self.m, -self.d / self.m]])


@dataclass(frozen=True)
class VanDerPol:
    """Van der Pol oscillator: x = (nu, dnu/dt)."""

    mu: float = 2.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[1], self.mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])

    def state_jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.array(
            [
                [0.0, 1.0],
                [-2.0 * self.mu * x[0] * x[1] - 1.0, self.mu * (1.0 - x[0] * x[0])],
            ]
        )


_SENSITIVITY_SOLVES = 0


def sensitivity_solve_count() -> int:
    """Number of sensitivity-carrying solves since the last reset."""
    return _SENSITIVITY_SOLVES


def reset_sensitivity_solve_count() -> None:
    global _SENSITIVITY_SOLVES
    _SENSITIVITY_SOLVES = 0


def _max_re_lambda(rhs, y: np.ndarray) -> float | None:
    jac = getattr(rhs, "state_jacobian", None)
    if jac is None:
        return None
    try:
        return float(np.max(eigen(jac(y), with_vectors=False).values.real))
    except Exception:
        return None


def _error_norm(err_vec: np.ndarray, y0: np.ndarray, y1: np.ndarray,
                cfg: SolverConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err_vec / scale) ** 2)))


def _initial_step(rhs, y0: np.ndarray, f0: np.ndarray, t_total: float,
                  cfg: SolverConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = rhs(y1)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, cfg.max_step, t_total)


def solve(rhs, x0, t_span, save_at, cfg: SolverConfig | None = None,
          with_sensitivities: bool = False) -> OdeSolution:
    """Integrate the right-hand side over t_span, sampling at save_at.

    When ``with_sensitivities`` is set, d(state)/d(theta) is propagated
    alongside the states through every accepted step (and through the
    dense-output interpolation), starting from zero at t0.
    """
    cfg = cfg or SolverConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must satisfy t0 < t1")
    y = np.asarray(x0, dtype=np.float64).copy()
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite initial state")
    d = y.size
    save_at = np.asarray(save_at, dtype=np.float64)
    if save_at.size and (np.any(np.diff(save_at) <= 0.0)):
        raise ValueError("save_at must be strictly increasing")
    t_tol = 1e-12 * max(1.0, abs(t1))
    if save_at.size and (save_at[0] < t0 - t_tol or save_at[-1] > t1 + t_tol):
        raise ValueError("save_at must lie within t_span")

    n_save = save_at.size
    out_states = np.empty((n_save, d))
    sens_shape = None
    if with_sensitivities:
        if not hasattr(rhs, "stage_eval"):
            raise TypeError("sensitivity solves need an rhs with stage_eval()")
        global _SENSITIVITY_SOLVES
        _SENSITIVITY_SOLVES += 1
        n_params = rhs.parameter_count
        sens_shape = (n_save, d, n_params)
        out_sens = np.empty(sens_shape)
        s_flat = np.zeros(d * n_params)
        ks = np.empty((7, d * n_params))
    else:
        out_sens = None

    save_idx = 0
    while save_idx < n_save and save_at[save_idx] <= t0 + t_tol:
        out_states[save_idx] = y
        if with_sensitivities:
            out_sens[save_idx] = 0.0
        save_idx += 1

    k = np.empty((7, d))
    if with_sensitivities:
        f0, a0, b0 = rhs.stage_eval(y)
        k[0] = f0
        ks[0] = (a0 @ s_flat.reshape(d, n_params) + b0).ravel()
    else:
        f0 = rhs(y)
        k[0] = f0

    if cfg.fixed_step is not None:
        h = min(cfg.fixed_step, t1 - t0)
    elif cfg.first_step is not None:
        h = min(cfg.first_step, cfg.max_step, t1 - t0)
    else:
        h = _initial_step(rhs, y, f0, t1 - t0, cfg)

    t = t0
    accepted = 0
    rejected = 0
    err_prev = 1e-4
    last_rejected = False
    while t < t1 - t_tol:
        if accepted + rejected >= cfg.max_steps:
            raise StepBudgetError(
                f"exceeded {cfg.max_steps} steps at t={t:.6g} (of {t1:.6g})"
            )
        if cfg.fixed_step is None and h < cfg.min_step:
            raise SolvabilityError(t, _max_re_lambda(rhs, y))
        h_step = min(h, t1 - t)
        is_last = h_step >= (t1 - t) - t_tol

        bad = False
        for i in range(1, 7):
            yi = y + h_step * (TSIT5_A[i, :i] @ k[:i])
            if not np.all(np.isfinite(yi)):
                bad = True
                break
            if with_sensitivities:
                si = (s_flat + h_step * (TSIT5_A[i, :i] @ ks[:i])).reshape(d, n_params)
                fi, ai, bi = rhs.stage_eval(yi)
                k[i] = fi
                ks[i] = (ai @ si + bi).ravel()
            else:
                k[i] = rhs(yi)
        if not bad:
            y_new = yi  # stage 7 state: c7 = 1 and a7 = b
            err_vec = h_step * (TSIT5_E @ k)
            err = _error_norm(err_vec, y, y_new, cfg)
            if not math.isfinite(err):
                bad = True

        if cfg.fixed_step is not None:
            if bad:
                raise SolvabilityError(t, _max_re_lambda(rhs, y))
            accept = True
        else:
            accept = (not bad) and err <= 1.0

        if accept:
            if with_sensitivities:
                s_new = s_flat + h_step * (TSIT5_B @ ks)
            t_new = t1 if is_last else t + h_step
            while save_idx < n_save and save_at[save_idx] <= t_new + t_tol:
                ts = save_at[save_idx]
                if abs(ts - t_new) <= t_tol:
                    out_states[save_idx] = y_new
                    if with_sensitivities:
                        out_sens[save_idx] = s_new.reshape(d, n_params)
                else:
                    w = interpolation_weights((ts - t) / h_step)
                    out_states[save_idx] = y + h_step * (w @ k)
                    if with_sensitivities:
                        out_sens[save_idx] = (s_flat + h_step * (w @ ks)).reshape(
                            d, n_params
                        )
                save_idx += 1
            t = t_new
            y = y_new
            k[0] = k[6]
            if with_sensitivities:
                s_flat = s_new
                ks[0] = ks[6]
            accepted += 1
            if cfg.fixed_step is None:
                fac = SAFETY * err ** -PI_ALPHA * err_prev**PI_BETA if err > 1e-16 else FAC_MAX
                fac = min(FAC_MAX, max(FAC_MIN, fac))
                if last_rejected:
                    fac = min(fac, 1.0)
                err_prev = max(err, 1e-4)
                h = min(h_step * fac, cfg.max_step)
            last_rejected = False
        else:
            rejected += 1
            last_rejected = True
            fac = 0.1 if bad else min(1.0, max(0.1, SAFETY * err**-0.2))
            h = h_step * fac
            if h < cfg.min_step:
                raise SolvabilityError(t, _max_re_lambda(rhs, y))

    return OdeSolution(
        times=save_at.copy(),
        states=out_states,
        sensitivities=out_sens,
        accepted_steps=accepted,
        rejected_steps=rejected,
    )


def ground_truth_solve(system, x0, t_span, save_at,
                       cfg: SolverConfig | None = None) -> OdeSolution:
    """Reference solve of a symbolic system (no sensitivities)."""
    return solve(system, x0, t_span, save_at, cfg, with_sensitivities=False)
