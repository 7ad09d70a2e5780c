"""Property losses on the spectrum of the system matrix.

Six losses are available, evaluated over the save-point grid of an ODE
solution and aggregated as the mean over instants:

  SOL  mean absolute error of x1 against reference samples
  STB  positive real parts of eigenvalues (stability)
  OSC  real-part mismatch inside declared eigenvalue pairs (oscillation)
  FRQ  |Im|/2pi of pair members against a target frequency in Hz
  DMP  -Re/|lambda| of pair members against a target damping
  STF  max|Re|/min|Re| spectrum spread against a target stiffness ratio

Eigenvalues are tracked between instants by greedy nearest-neighbour
assignment in the complex plane so that pair identities survive ordering
changes of the raw solver output.

:func:`loss_vector_and_jacobian` evaluates all active losses *and* their
parameter gradients from one shared sensitivity-carrying solution: the
expensive d(state)/d(theta) block is computed once by the solver and every
loss row chains through it. Instants with degenerate spectra keep their
loss values (they only need eigenvalues) but contribute zero gradient; a
warning is logged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .eigen import EigenResult, eigen, to_interleaved
from .network import HybridRHS
from .solver import OdeSolution

__all__ = [
    "LOSS_ORDER",
    "DEFAULT_SCALINGS",
    "AlignmentError",
    "PairSet",
    "LossSpec",
    "ReferenceData",
    "EigenTrajectory",
    "LossEvaluation",
    "build_pairs",
    "track_eigenvalues",
    "eigen_trajectory",
    "loss_sol",
    "loss_stb",
    "loss_osc",
    "loss_frq",
    "loss_dmp",
    "loss_stf",
    "loss_vector_and_jacobian",
]

log = logging.getLogger(__name__)

LOSS_ORDER = ("SOL", "STB", "OSC", "FRQ", "DMP", "STF")

# Gradient scale factors matching the magnitude of the solution gradient;
# SOL and DMP carry no extra scaling.
DEFAULT_SCALINGS: Mapping[str, float] = {
    "SOL": 1.0,
    "STB": 1e3,
    "OSC": 1e1,
    "FRQ": 1e1,
    "DMP": 1.0,
    "STF": 1e-1,
}

_STIFFNESS_FLOOR = 1e-6
_DAMPING_FLOOR = 1e-12


class AlignmentError(ValueError):
    """Reference timestamps are not a subset of the solution save points."""


@dataclass(frozen=True)
class PairSet:
    """Index pairs into the tracked eigenvalue list."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for a, b in self.pairs:
            if a == b:
                raise ValueError(f"pair ({a}, {b}) is not distinct")
            if a in seen or b in seen:
                raise ValueError("pair indices must be unique across pairs")
            seen.update((a, b))

    @classmethod
    def conjugate_default(cls, n_values: int) -> "PairSet":
        """The single pair (0, 1) used by all 2-state systems."""
        if n_values < 2:
            return cls(pairs=())
        return cls(pairs=((0, 1),))


def build_pairs(values, count: int) -> PairSet:
    """Greedily pair eigenvalues by real-part proximity.

    For systems wider than two states only the *number* of expected pairs
    needs to be known; candidates closest in real part are paired first.
    """
    vals = np.asarray(values, dtype=np.complex128).ravel()
    free = list(range(vals.size))
    pairs: list[tuple[int, int]] = []
    while len(pairs) < count:
        if len(free) < 2:
            raise ValueError(f"cannot build {count} pairs from {vals.size} eigenvalues")
        best = None
        for ii in range(len(free)):
            for jj in range(ii + 1, len(free)):
                gap = abs(vals[free[ii]].real - vals[free[jj]].real)
                if best is None or gap < best[0]:
                    best = (gap, free[ii], free[jj])
        pairs.append((best[1], best[2]))
        free.remove(best[1])
        free.remove(best[2])
    return PairSet(pairs=tuple(pairs))


@dataclass(frozen=True)
class LossSpec:
    """Which losses are active, their targets, scalings, and error metric.

    ``pairwise_frq_dmp`` switches FRQ/DMP to comparing the two members of
    each pair against each other instead of against targets (the literal
    per-pair form; identically zero for true conjugate pairs).
    ``stiffness_corridor`` replaces the STF point target with a [lo, hi]
    band; deviations are measured from the nearest corridor edge.
    """

    active: tuple[str, ...]
    freq_target: float | None = None  # Hz
    damping_target: float | None = None  # dimensionless, in [-1, 1]
    stiffness_target: float | None = None  # ratio >= 1
    stiffness_corridor: tuple[float, float] | None = None
    scalings: Mapping[str, float] = field(default_factory=dict)
    error_metric: str = "absolute"  # or "squared"
    pairwise_frq_dmp: bool = False
    eigen_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(self.active))
        unknown = set(self.active) - set(LOSS_ORDER)
        if unknown:
            raise ValueError(f"unknown losses: {sorted(unknown)}")
        if len(set(self.active)) != len(self.active):
            raise ValueError("duplicate loss names")
        if self.error_metric not in ("absolute", "squared"):
            raise ValueError(f"unknown error metric {self.error_metric!r}")
        if self.eigen_stride < 1:
            raise ValueError("eigen_stride must be >= 1")
        if "FRQ" in self.active and not self.pairwise_frq_dmp:
            if self.freq_target is None or self.freq_target < 0.0:
                raise ValueError("FRQ needs a non-negative freq_target")
        if "DMP" in self.active and not self.pairwise_frq_dmp:
            if self.damping_target is None or not -1.0 <= self.damping_target <= 1.0:
                raise ValueError("DMP needs a damping_target in [-1, 1]")
        if "STF" in self.active:
            if self.stiffness_corridor is not None:
                lo, hi = self.stiffness_corridor
                if not 1.0 <= lo <= hi:
                    raise ValueError("stiffness corridor must satisfy 1 <= lo <= hi")
            elif self.stiffness_target is None or self.stiffness_target < 1.0:
                raise ValueError("STF needs stiffness_target >= 1 or a corridor")
        for name, value in self.scalings.items():
            if name not in LOSS_ORDER:
                raise ValueError(f"scaling for unknown loss {name!r}")
            if value <= 0.0:
                raise ValueError("scalings must be positive")

    def ordered_active(self) -> tuple[str, ...]:
        return tuple(name for name in LOSS_ORDER if name in self.active)

    def scaling(self, name: str) -> float:
        return float(self.scalings.get(name, DEFAULT_SCALINGS[name]))


@dataclass(frozen=True)
class ReferenceData:
    """Sampled reference trajectory (ground truth for x1, optionally x2)."""

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=np.float64))
        if self.times.shape != self.x1.shape:
            raise ValueError("times and x1 must have matching shapes")
        if self.x2 is not None:
            object.__setattr__(self, "x2", np.asarray(self.x2, dtype=np.float64))


@dataclass
class EigenTrajectory:
    """Tracked spectrum along a solution.

    ``values[k, i]`` follows one eigenvalue identity across instants (the
    first instant uses the solver's lexicographic base order, later ones
    are matched by tracking, not re-sorted). ``value_tangents`` holds
    d(lambda)/d(theta) per instant when the trajectory was built with
    tangents; degenerate instants carry zero tangents.
    """

    times: np.ndarray
    values: np.ndarray  # (K, n) complex
    degenerate: np.ndarray  # (K,) bool
    permutations: np.ndarray  # (K, n) raw -> tracked column map
    vectors: np.ndarray | None = None  # (K, n, n) complex
    matrices: np.ndarray | None = None  # (K, n, n) real
    value_tangents: np.ndarray | None = None  # (K, n, P) complex

    @property
    def n_instants(self) -> int:
        return self.values.shape[0]

    @property
    def n_values(self) -> int:
        return self.values.shape[1]

    def interleaved_values(self) -> np.ndarray:
        """(K, 2n) float view [re1, im1, re2, im2, ...] per instant."""
        return np.stack([to_interleaved(row) for row in self.values])

    def value_tangents_interleaved(self) -> np.ndarray:
        """(K, 2n, P) float: interleaved (re, im) rows of d(lambda)/d(theta)."""
        if self.value_tangents is None:
            raise ValueError("trajectory was built without tangents")
        K, n, P = self.value_tangents.shape
        out = np.empty((K, 2 * n, P))
        out[:, 0::2, :] = self.value_tangents.real
        out[:, 1::2, :] = self.value_tangents.imag
        return out


def _greedy_assignment(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """perm[slot] = index into cur, chosen greedily by smallest distance.

    Ties resolve to the lower (slot, candidate) index via the stable sort.
    """
    n = prev.size
    dist = np.abs(cur[None, :] - prev[:, None])
    order = np.argsort(dist, axis=None, kind="stable")
    perm = np.full(n, -1, dtype=np.intp)
    used = np.zeros(n, dtype=bool)
    assigned = 0
    for flat in order:
        slot, j = divmod(int(flat), n)
        if perm[slot] >= 0 or used[j]:
            continue
        perm[slot] = j
        used[j] = True
        assigned += 1
        if assigned == n:
            break
    return perm


def track_eigenvalues(times, raw: Sequence[EigenResult],
                      matrices: np.ndarray | None = None) -> EigenTrajectory:
    """Chain per-instant eigen results into an identity-consistent trajectory."""
    if len(raw) == 0:
        raise ValueError("need at least one instant")
    times = np.asarray(times, dtype=np.float64)
    if times.size != len(raw):
        raise ValueError("one eigen result per time instant required")
    K = len(raw)
    n = raw[0].values.size
    with_vectors = raw[0].vectors is not None
    values = np.empty((K, n), dtype=np.complex128)
    vectors = np.empty((K, n, n), dtype=np.complex128) if with_vectors else None
    perms = np.empty((K, n), dtype=np.intp)
    degenerate = np.empty(K, dtype=bool)

    perms[0] = np.arange(n)
    values[0] = raw[0].values
    if with_vectors:
        vectors[0] = raw[0].vectors
    degenerate[0] = raw[0].degenerate
    for k in range(1, K):
        perm = _greedy_assignment(values[k - 1], raw[k].values)
        perms[k] = perm
        values[k] = raw[k].values[perm]
        if with_vectors:
            vectors[k] = raw[k].vectors[:, perm]
        degenerate[k] = raw[k].degenerate
    return EigenTrajectory(
        times=times,
        values=values,
        degenerate=degenerate,
        permutations=perms,
        vectors=vectors,
        matrices=matrices,
    )


def _batched_inverse_2x2(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverses of (K, 2, 2) matrices plus a near-singular mask."""
    det = u[:, 0, 0] * u[:, 1, 1] - u[:, 0, 1] * u[:, 1, 0]
    bad = np.abs(det) < 1e-12
    safe = np.where(bad, 1.0, det)
    inv = np.empty_like(u)
    inv[:, 0, 0] = u[:, 1, 1]
    inv[:, 0, 1] = -u[:, 0, 1]
    inv[:, 1, 0] = -u[:, 1, 0]
    inv[:, 1, 1] = u[:, 0, 0]
    inv /= safe[:, None, None]
    return inv, bad


def eigen_trajectory(rhs: HybridRHS, solution: OdeSolution, *,
                     with_tangents: bool = False, stride: int = 1) -> EigenTrajectory:
    """Spectrum of the system matrix along a solution, tracked over time.

    With ``with_tangents`` the per-instant eigenvalue parameter tangents
    d(lambda)/d(theta) are attached, chaining the diagonal sensitivity rule
    through the combined (through-state + direct) parameter dependence of
    the system matrix. Requires a sensitivity-carrying solution.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    times = solution.times[::stride]
    states = solution.states[::stride]
    x_cols = np.ascontiguousarray(states.T)
    mats = rhs.state_jacobian_batch(x_cols)
    K = times.size
    raw = [eigen(mats[k], with_vectors=with_tangents) for k in range(K)]
    traj = track_eigenvalues(times, raw, matrices=mats)
    if not with_tangents:
        return traj

    if solution.sensitivities is None:
        raise ValueError("tangents need a sensitivity-carrying solution")
    sens = solution.sensitivities[::stride]
    n = traj.n_values
    u = traj.vectors
    if n == 2:
        u_inv, singular = _batched_inverse_2x2(u)
    else:
        from .linalg import SingularMatrixError, solve as lin_solve

        u_inv = np.empty_like(u)
        singular = np.zeros(K, dtype=bool)
        eye = np.eye(n, dtype=np.complex128)
        for k in range(K):
            try:
                u_inv[k] = lin_solve(u[k], eye)
            except SingularMatrixError:
                u_inv[k] = 0.0
                singular[k] = True

    skip = traj.degenerate | singular
    rows = rhs.jacobian_param_rows()
    d_rows = rhs.jacobian_tangents_batch(x_cols, sens)  # (K, n_rows, n, P)
    u_inv_rows = u_inv[:, :, rows]  # (K, n, n_rows)
    tangents = np.einsum(
        "kir,krqp,kqi->kip", u_inv_rows, d_rows.astype(np.complex128), u,
        optimize=True,
    )
    if np.any(skip):
        tangents[skip] = 0.0
    traj.degenerate = skip
    traj.value_tangents = tangents
    return traj


# ---------------------------------------------------------------------------
# loss kernels: each returns (value, d/dRe, d/dIm) over (instant, eigenvalue)
# ---------------------------------------------------------------------------


def _metric_terms(dev: np.ndarray, metric: str) -> tuple[np.ndarray, np.ndarray]:
    """epsilon(dev) and epsilon'(dev); the MAE subgradient at 0 is 0."""
    if metric == "squared":
        return dev * dev, 2.0 * dev
    return np.abs(dev), np.sign(dev)


def _stb_terms(traj: EigenTrajectory, metric: str):
    re = traj.values.real
    pos = np.maximum(re, 0.0)
    eps, deps = _metric_terms(pos, metric)
    K = traj.n_instants
    value = float(eps.sum() / K)
    dre = np.where(re > 0.0, deps, 0.0) / K
    return value, dre, np.zeros_like(dre)


def _osc_terms(traj: EigenTrajectory, pairs: PairSet, metric: str):
    K = traj.n_instants
    dre = np.zeros((K, traj.n_values))
    value = 0.0
    for a, b in pairs.pairs:
        dev = traj.values[:, a].real - traj.values[:, b].real
        eps, deps = _metric_terms(dev, metric)
        value += eps.sum() / K
        dre[:, a] += deps / K
        dre[:, b] -= deps / K
    return float(value), dre, np.zeros_like(dre)


def _frequency(values: np.ndarray):
    f = np.abs(values.imag) / (2.0 * np.pi)
    df_dim = np.sign(values.imag) / (2.0 * np.pi)
    return f, df_dim


def _damping(values: np.ndarray):
    re, im = values.real, values.imag
    mag = np.abs(values)
    ok = mag >= _DAMPING_FLOOR
    safe = np.where(ok, mag, 1.0)
    delta = np.where(ok, -re / safe, 0.0)
    mag3 = safe**3
    dd_re = np.where(ok, -(im * im) / mag3, 0.0)
    dd_im = np.where(ok, re * im / mag3, 0.0)
    return delta, dd_re, dd_im


def _pair_quantity_terms(traj, pairs, metric, target, quantity, pairwise):
    """Shared FRQ/DMP kernel over a per-eigenvalue quantity q(lambda)."""
    K = traj.n_instants
    dre = np.zeros((K, traj.n_values))
    dim = np.zeros((K, traj.n_values))
    value = 0.0
    for a, b in pairs.pairs:
        qa, qa_re, qa_im = quantity(traj.values[:, a])
        qb, qb_re, qb_im = quantity(traj.values[:, b])
        if pairwise:
            eps, deps = _metric_terms(qa - qb, metric)
            value += eps.sum() / K
            dre[:, a] += deps * qa_re / K
            dim[:, a] += deps * qa_im / K
            dre[:, b] -= deps * qb_re / K
            dim[:, b] -= deps * qb_im / K
        else:
            eps_a, deps_a = _metric_terms(qa - target, metric)
            eps_b, deps_b = _metric_terms(qb - target, metric)
            value += 0.5 * (eps_a + eps_b).sum() / K
            dre[:, a] += 0.5 * deps_a * qa_re / K
            dim[:, a] += 0.5 * deps_a * qa_im / K
            dre[:, b] += 0.5 * deps_b * qb_re / K
            dim[:, b] += 0.5 * deps_b * qb_im / K
    return float(value), dre, dim


def _frq_quantity(vals):
    f, df_dim = _frequency(vals)
    return f, np.zeros_like(f), df_dim


def _dmp_quantity(vals):
    return _damping(vals)


def _stf_terms(traj: EigenTrajectory, metric: str, target: float | None,
               corridor: tuple[float, float] | None):
    K, n = traj.values.shape
    re = traj.values.real
    re_abs = np.abs(re)
    i_max = np.argmax(re_abs, axis=1)
    i_min = np.argmin(re_abs, axis=1)
    rows = np.arange(K)
    mx = re_abs[rows, i_max]
    mn = re_abs[rows, i_min]

    ratio = np.ones(K)
    d_mx = np.zeros(K)
    d_mn = np.zeros(K)
    live = mx >= _STIFFNESS_FLOOR  # all-near-zero spectra pin the ratio to 1
    denom = np.maximum(mn, _STIFFNESS_FLOOR)
    ratio[live] = mx[live] / denom[live]
    d_mx[live] = 1.0 / denom[live]
    mn_live = live & (mn >= _STIFFNESS_FLOOR)
    d_mn[mn_live] = -mx[mn_live] / denom[mn_live] ** 2

    if corridor is not None:
        lo, hi = corridor
        dev = np.where(ratio > hi, ratio - hi, np.where(ratio < lo, ratio - lo, 0.0))
    else:
        dev = ratio - target
    eps, deps = _metric_terms(dev, metric)
    value = float(eps.sum() / K)

    dre = np.zeros((K, n))
    sign_max = np.sign(re[rows, i_max])
    sign_min = np.sign(re[rows, i_min])
    np.add.at(dre, (rows, i_max), deps * d_mx * sign_max / K)
    np.add.at(dre, (rows, i_min), deps * d_mn * sign_min / K)
    return value, dre, np.zeros_like(dre)


def _sol_terms(solution: OdeSolution, data: ReferenceData, metric: str):
    idx = _align_times(solution.times, data.times)
    resid = solution.states[idx, 0] - data.x1
    eps, deps = _metric_terms(resid, metric)
    value = float(eps.mean())
    weights = deps / resid.size
    return value, idx, weights


def _align_times(save_at: np.ndarray, data_times: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(save_at, data_times)
    pos = np.clip(pos, 0, save_at.size - 1)
    left = np.clip(pos - 1, 0, save_at.size - 1)
    pick = np.where(
        np.abs(save_at[left] - data_times) < np.abs(save_at[pos] - data_times),
        left,
        pos,
    )
    if not np.allclose(save_at[pick], data_times, rtol=0.0, atol=1e-9):
        raise AlignmentError("data timestamps are not among the solution save points")
    return pick


# public, value-only surfaces ------------------------------------------------


def loss_sol(solution: OdeSolution, data: ReferenceData,
             metric: str = "absolute") -> float:
    """Mean absolute (or squared) error of x1 against the reference samples."""
    value, _, _ = _sol_terms(solution, data, metric)
    return value


def loss_stb(traj: EigenTrajectory, metric: str = "absolute") -> float:
    """Instability loss: only eigenvalues with positive real part contribute."""
    return _stb_terms(traj, metric)[0]


def loss_osc(traj: EigenTrajectory, pairs: PairSet, metric: str = "absolute") -> float:
    """Real-part mismatch inside each declared eigenvalue pair."""
    return _osc_terms(traj, pairs, metric)[0]


def loss_frq(traj: EigenTrajectory, pairs: PairSet, f_target: float,
             metric: str = "absolute", pairwise: bool = False) -> float:
    """Frequency deviation |Im|/2pi of pair members from f_target (Hz)."""
    if f_target < 0.0:
        raise ValueError("f_target must be non-negative")
    return _pair_quantity_terms(traj, pairs, metric, f_target, _frq_quantity, pairwise)[0]


def loss_dmp(traj: EigenTrajectory, pairs: PairSet, d_target: float,
             metric: str = "absolute", pairwise: bool = False) -> float:
    """Damping deviation -Re/|lambda| of pair members from d_target."""
    if not -1.0 <= d_target <= 1.0:
        raise ValueError("d_target must lie in [-1, 1]")
    return _pair_quantity_terms(traj, pairs, metric, d_target, _dmp_quantity, pairwise)[0]


def loss_stf(traj: EigenTrajectory, sigma_target: float | None = None,
             metric: str = "absolute",
             corridor: tuple[float, float] | None = None) -> float:
    """Stiffness-ratio deviation max|Re|/min|Re| from the target (or corridor).

    The denominator is floored at 1e-6 and instants whose real parts are all
    below the floor contribute a ratio of exactly 1, so the loss stays
    defined for border-stable and unstable spectra.
    """
    if corridor is None and (sigma_target is None or sigma_target < 1.0):
        raise ValueError("sigma_target must be >= 1 (or give a corridor)")
    return _stf_terms(traj, metric, sigma_target, corridor)[0]


@dataclass
class LossEvaluation:
    """Active loss values and their parameter jacobian (one row per loss)."""

    names: tuple[str, ...]
    values: np.ndarray  # (L,)
    jacobian: np.ndarray  # (L, P)
    trajectory: EigenTrajectory | None
    degenerate_instants: int

    def row(self, name: str) -> np.ndarray:
        return self.jacobian[self.names.index(name)]

    def value(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


def loss_vector_and_jacobian(
    rhs: HybridRHS,
    solution: OdeSolution,
    spec: LossSpec,
    data: ReferenceData | None = None,
    pairs: PairSet | None = None,
) -> LossEvaluation:
    """Evaluate every active loss and its gradient over the parameters.

    The solution must carry sensitivities; they are the single shared
    d(state)/d(theta) factor. Eigen losses additionally chain through the
    eigenvalue tangents of one tracked trajectory (built here once,
    regardless of how many eigen losses are active).
    """
    if solution.sensitivities is None:
        raise ValueError("loss jacobian needs a sensitivity-carrying solution")
    active = spec.ordered_active()
    if not active:
        raise ValueError("no active losses")
    if "SOL" in active and data is None:
        raise ValueError("SOL is active but no reference data was given")

    eigen_active = [name for name in active if name != "SOL"]
    traj = None
    degenerate_instants = 0
    if eigen_active:
        traj = eigen_trajectory(
            rhs, solution, with_tangents=True, stride=spec.eigen_stride
        )
        degenerate_instants = int(np.count_nonzero(traj.degenerate))
        if degenerate_instants:
            log.warning(
                "%d of %d instants have degenerate spectra; their gradient "
                "contributions are skipped (loss values kept)",
                degenerate_instants,
                traj.n_instants,
            )
        if pairs is None:
            pairs = PairSet.conjugate_default(traj.n_values)

    metric = spec.error_metric
    n_params = solution.sensitivities.shape[2]
    values = np.zeros(len(active))
    jac = np.zeros((len(active), n_params))
    for row_i, name in enumerate(active):
        if name == "SOL":
            value, idx, weights = _sol_terms(solution, data, metric)
            values[row_i] = value
            jac[row_i] = weights @ solution.sensitivities[idx, 0, :]
            continue
        if name == "STB":
            value, dre, dim = _stb_terms(traj, metric)
        elif name == "OSC":
            value, dre, dim = _osc_terms(traj, pairs, metric)
        elif name == "FRQ":
            value, dre, dim = _pair_quantity_terms(
                traj, pairs, metric, spec.freq_target, _frq_quantity,
                spec.pairwise_frq_dmp,
            )
        elif name == "DMP":
            value, dre, dim = _pair_quantity_terms(
                traj, pairs, metric, spec.damping_target, _dmp_quantity,
                spec.pairwise_frq_dmp,
            )
        else:  # STF
            value, dre, dim = _stf_terms(
                traj, metric, spec.stiffness_target, spec.stiffness_corridor
            )
        values[row_i] = value
        jac[row_i] = np.einsum("ki,kip->p", dre, traj.value_tangents.real) + np.einsum(
            "ki,kip->p", dim, traj.value_tangents.imag
        )
    return LossEvaluation(
        names=active,
        values=values,
        jacobian=jac,
        trajectory=traj,
        degenerate_instants=degenerate_instants,
    )
