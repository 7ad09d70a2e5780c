"""Eigenvalues and eigenvectors of dense real square matrices.

The driver reduces the input to upper Hessenberg form and runs shifted QR
iteration with deflation. Trailing 1x1 blocks yield real eigenvalues,
trailing 2x2 blocks are resolved in closed form (giving exact conjugate
pairs for real input); larger active blocks are shrunk with Francis
implicit double-shift sweeps. Eigenvectors are recovered afterwards by
inverse iteration on (A - lambda*I).

Everything is deterministic: eigenvalues are returned sorted
lexicographically by (real, imag) and eigenvectors follow a fixed phase
convention, so repeated calls on the same matrix are bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import SingularMatrixError, as_real_matrix, solve

__all__ = [
    "EigenResult",
    "ConvergenceError",
    "eigen",
    "eigen2x2_closed_form",
    "to_interleaved",
    "from_interleaved",
    "DEGENERACY_GAP",
]

# Two eigenvalues closer than this are reported as degenerate; the
# eigenvector-sensitivity formulas are undefined there.
DEGENERACY_GAP = 1e-8

_ULP = float(np.finfo(np.float64).eps)


class ConvergenceError(RuntimeError):
    """QR iteration exhausted its sweep budget.

    Carries the best-so-far eigenvalue estimates in ``values``.
    """

    def __init__(self, message: str, values: np.ndarray):
        super().__init__(message)
        self.values = values


@dataclass(frozen=True)
class EigenResult:
    """Full spectrum of a real matrix.

    values:    (n,) complex128, sorted lexicographically by (re, im).
    vectors:   (n, n) complex128 with unit-norm eigenvectors in columns, or
               None when the caller asked for values only. The first
               component of largest magnitude of each column is real and
               non-negative.
    iterations: number of Francis sweeps spent.
    degenerate: True when some eigenvalue pair is closer than
               DEGENERACY_GAP.
    """

    values: np.ndarray
    vectors: np.ndarray | None
    iterations: int
    degenerate: bool


def to_interleaved(values) -> np.ndarray:
    """Flatten complex eigenvalues to [re1, im1, re2, im2, ...]."""
    vals = np.asarray(values, dtype=np.complex128).ravel()
    out = np.empty(2 * vals.size, dtype=np.float64)
    out[0::2] = vals.real
    out[1::2] = vals.imag
    return out


def from_interleaved(flat) -> np.ndarray:
    """Inverse of :func:`to_interleaved`."""
    arr = np.asarray(flat, dtype=np.float64).ravel()
    if arr.size % 2 != 0:
        raise ValueError("interleaved vector must have even length")
    return arr[0::2] + 1j * arr[1::2]


def _eig2x2_values(p: float, q: float, r: float, s: float) -> tuple[complex, complex]:
    """Eigenvalues of [[p, q], [r, s]] from the characteristic polynomial."""
    mid = 0.5 * (p + s)
    det = p * s - q * r
    disc = mid * mid - det
    if disc >= 0.0:
        sq = math.sqrt(disc)
        # Take the root away from cancellation first, recover the other
        # from the product when possible.
        lam1 = mid + sq if mid >= 0.0 else mid - sq
        lam2 = det / lam1 if lam1 != 0.0 else mid - math.copysign(sq, mid)
        return complex(lam1), complex(lam2)
    sq = math.sqrt(-disc)
    return complex(mid, sq), complex(mid, -sq)


def _householder(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Reflector (v, beta) sending x to a multiple of e1; beta=0 if trivial."""
    scale = np.max(np.abs(x))
    if scale == 0.0:
        return x, 0.0
    xs = x / scale
    nrm = math.sqrt(float(np.dot(xs, xs)))
    alpha = -nrm if xs[0] >= 0.0 else nrm
    v = xs.copy()
    v[0] -= alpha
    vsq = float(np.dot(v, v))
    if vsq == 0.0:
        return v, 0.0
    return v, 2.0 / vsq


def _hessenberg(a: np.ndarray) -> np.ndarray:
    h = a.copy()
    n = h.shape[0]
    for k in range(n - 2):
        v, beta = _householder(h[k + 1 :, k].copy())
        if beta == 0.0:
            continue
        # Similarity transform P.H.P with P = I - beta v v^T on rows/cols k+1..
        h[k + 1 :, k:] -= beta * np.outer(v, v @ h[k + 1 :, k:])
        h[:, k + 1 :] -= beta * np.outer(h[:, k + 1 :] @ v, v)
        h[k + 2 :, k] = 0.0
    return h


def _francis_sweep(h: np.ndarray, lo: int, hi: int, s: float, t: float) -> None:
    """One implicit double-shift bulge chase on the active block [lo..hi]."""
    x = h[lo, lo] * h[lo, lo] + h[lo, lo + 1] * h[lo + 1, lo] - s * h[lo, lo] + t
    y = h[lo + 1, lo] * (h[lo, lo] + h[lo + 1, lo + 1] - s)
    z = h[lo + 1, lo] * h[lo + 2, lo + 1]
    for k in range(lo, hi - 1):
        v, beta = _householder(np.array([x, y, z]))
        if beta != 0.0:
            rows = h[k : k + 3, lo : hi + 1]
            rows -= beta * np.outer(v, v @ rows)
            cols = h[lo : hi + 1, k : k + 3]
            cols -= beta * np.outer(cols @ v, v)
        x = h[k + 1, k]
        y = h[k + 2, k]
        z = h[k + 3, k] if k + 3 <= hi else 0.0
    v, beta = _householder(np.array([x, y]))
    if beta != 0.0:
        rows = h[hi - 1 : hi + 1, lo : hi + 1]
        rows -= beta * np.outer(v, v @ rows)
        cols = h[lo : hi + 1, hi - 1 : hi + 1]
        cols -= beta * np.outer(cols @ v, v)
    # The chase restores Hessenberg structure; drop the numerical dust that
    # the reflectors leave below the subdiagonal.
    for i in range(lo + 2, hi + 1):
        h[i, lo : i - 1] = 0.0


def _block_estimates(h: np.ndarray, hi: int) -> list[complex]:
    """Eigenvalue estimates of the not-yet-deflated part h[:hi+1, :hi+1]."""
    est: list[complex] = []
    i = 0
    while i <= hi:
        if i < hi and h[i + 1, i] != 0.0:
            est.extend(_eig2x2_values(h[i, i], h[i, i + 1], h[i + 1, i], h[i + 1, i + 1]))
            i += 2
        else:
            est.append(complex(h[i, i]))
            i += 1
    return est


def _schur_eigenvalues(a: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, int]:
    n = a.shape[0]
    if n == 1:
        return np.array([complex(a[0, 0])]), 0
    h = _hessenberg(a)
    norm_f = float(np.linalg.norm(a))
    values: list[complex] = []
    hi = n - 1
    sweeps = 0
    stalled = 0
    while hi >= 0:
        if hi == 0:
            values.append(complex(h[0, 0]))
            break
        # Walk up from hi to find the start of the active block, zeroing
        # negligible subdiagonal entries on the way.
        lo = hi
        while lo > 0:
            sub = abs(h[lo, lo - 1])
            local = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            threshold = _ULP * (local if local > 0.0 else norm_f)
            if sub <= threshold:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            values.append(complex(h[hi, hi]))
            hi -= 1
            stalled = 0
            continue
        if lo == hi - 1:
            values.extend(_eig2x2_values(h[lo, lo], h[lo, hi], h[hi, lo], h[hi, hi]))
            hi -= 2
            stalled = 0
            continue
        if sweeps >= max_sweeps:
            best = np.array(values + _block_estimates(h, hi), dtype=np.complex128)
            raise ConvergenceError(
                f"QR iteration did not converge within {max_sweeps} sweeps", best
            )
        if stalled > 0 and stalled % 10 == 0:
            # Exceptional shift to break a cycling iteration.
            ex = h[hi, hi] + 0.75 * abs(h[hi, hi - 1])
            s, t = 2.0 * ex, ex * ex
        else:
            s = h[hi - 1, hi - 1] + h[hi, hi]
            t = h[hi - 1, hi - 1] * h[hi, hi] - h[hi - 1, hi] * h[hi, hi - 1]
        _francis_sweep(h, lo, hi, s, t)
        sweeps += 1
        stalled += 1
    return np.array(values, dtype=np.complex128), sweeps


def _sort_values(values: np.ndarray) -> np.ndarray:
    order = np.lexsort((values.imag, values.real))
    return order


def _min_gap(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return math.inf
    diff = np.abs(values[None, :] - values[:, None])
    diff[np.diag_indices(n)] = math.inf
    return float(diff.min())


def normalize_eigenvector(v: np.ndarray) -> np.ndarray:
    """Unit 2-norm; first component of largest magnitude real and >= 0."""
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise ValueError("zero eigenvector")
    v = v / nrm
    j = int(np.argmax(np.abs(v)))
    mag = abs(v[j])
    v = v * (mag / v[j])
    v[j] = mag  # exact: zero imaginary part by construction
    return v


def _solve_shifted(a_c: np.ndarray, lam: complex, b: np.ndarray, eps: float) -> np.ndarray:
    n = a_c.shape[0]
    m = a_c - (lam + eps) * np.eye(n, dtype=np.complex128)
    return solve(m, b.reshape(n, 1)).ravel()


def _deflate(v: np.ndarray, against: list[np.ndarray]) -> np.ndarray:
    for q in against:
        v = v - (np.conj(q) @ v) * q
    return v


def _inverse_iteration(a_c: np.ndarray, lam: complex, tol: float, norm_f: float,
                       against: list[np.ndarray]) -> np.ndarray:
    n = a_c.shape[0]
    start = (1.0 / (1.5 + np.arange(n))).astype(np.complex128)
    if against:
        # Repeated eigenvalue: stay orthogonal to the vectors already found
        # in this cluster so a diagonalizable cluster yields a full basis.
        start = _deflate(start, against)
        if np.linalg.norm(start) < 1e-8:
            start = np.zeros(n, dtype=np.complex128)
            start[len(against) % n] = 1.0
            start = _deflate(start, against)
    start /= np.linalg.norm(start)
    scale = max(norm_f, 1.0)
    best = None
    best_res = math.inf
    for eps_rel in (1e-13, 1e-10, 1e-7):
        eps = eps_rel * scale
        v = start
        try:
            for _ in range(3):
                w = _solve_shifted(a_c, lam, v, eps)
                if against:
                    w = _deflate(w, against)
                nrm = float(np.linalg.norm(w))
                if nrm == 0.0 or not math.isfinite(nrm):
                    break
                v = w / nrm
                res = float(np.linalg.norm(a_c @ v - lam * v))
                if res <= tol * max(norm_f, 1e-300):
                    return v
                if res < best_res:
                    best_res = res
                    best = v
        except SingularMatrixError:
            continue
    if best is None:
        raise SingularMatrixError(f"inverse iteration failed for lambda={lam}")
    return best


def _eigenvectors(a: np.ndarray, values: np.ndarray, tol: float) -> np.ndarray:
    n = a.shape[0]
    a_c = a.astype(np.complex128)
    norm_f = float(np.linalg.norm(a))
    vectors = np.zeros((n, n), dtype=np.complex128)
    done = np.zeros(n, dtype=bool)
    for i in range(n):
        if done[i]:
            continue
        lam = values[i]
        cluster = [
            vectors[:, j]
            for j in range(n)
            if done[j] and abs(values[j] - lam) < DEGENERACY_GAP
        ]
        v = normalize_eigenvector(_inverse_iteration(a_c, lam, tol, norm_f, cluster))
        vectors[:, i] = v
        done[i] = True
        if lam.imag != 0.0:
            # Real input: the conjugate partner's vector is the conjugate.
            conj = np.conj(lam)
            for j in range(n):
                if not done[j] and values[j] == conj:
                    vectors[:, j] = normalize_eigenvector(np.conj(v))
                    done[j] = True
                    break
    return vectors


def eigen(a, tol: float = 1e-9, max_iterations: int | None = None,
          with_vectors: bool = True) -> EigenResult:
    """All eigenvalues (and, by default, eigenvectors) of a real matrix.

    ``max_iterations`` bounds the number of Francis sweeps (default 30·n);
    exceeding it raises :class:`ConvergenceError` carrying the best
    estimates. ``tol`` is the residual target ``|A v - lambda v| <=
    tol*|A|_F`` used when refining eigenvectors.

    ``with_vectors=False`` is a fast path for telemetry that only needs the
    spectrum; the result then has ``vectors=None``.
    """
    a = as_real_matrix(a, "a")
    n = a.shape[0]
    if n == 0 or a.shape[1] != n:
        raise ValueError(f"matrix must be square and non-empty, got {a.shape}")
    if max_iterations is None:
        max_iterations = 30 * n
    values, sweeps = _schur_eigenvalues(a, max_iterations)
    order = _sort_values(values)
    values = values[order]
    vectors = _eigenvectors(a, values, tol) if with_vectors else None
    return EigenResult(
        values=values,
        vectors=vectors,
        iterations=sweeps,
        degenerate=_min_gap(values) < DEGENERACY_GAP,
    )


def eigen2x2_closed_form(a) -> EigenResult:
    """Closed-form 2x2 spectrum; independent oracle for :func:`eigen`.

    Eigenvalues come from the quadratic formula, eigenvectors from the
    null-space rows of (A - lambda*I), with the same ordering and
    normalization conventions as :func:`eigen`. Repeated roots return the
    duplicated value; for a defective matrix both columns hold the single
    eigendirection and the result is flagged degenerate.
    """
    a = as_real_matrix(a, "a")
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got {a.shape}")
    p, q = float(a[0, 0]), float(a[0, 1])
    r, s = float(a[1, 0]), float(a[1, 1])
    lam = np.array(_eig2x2_values(p, q, r, s), dtype=np.complex128)
    lam = lam[_sort_values(lam)]

    vectors = np.zeros((2, 2), dtype=np.complex128)
    for i, l in enumerate(lam):
        # Null space of [[p-l, q], [r, s-l]]: each row supplies a candidate.
        cand1 = np.array([q, l - p], dtype=np.complex128)
        cand2 = np.array([l - s, r], dtype=np.complex128)
        cand = cand1 if np.abs(cand1).sum() >= np.abs(cand2).sum() else cand2
        if np.abs(cand).sum() == 0.0:
            # Scaled identity: every direction is an eigenvector.
            cand = np.eye(2, dtype=np.complex128)[:, i]
        vectors[:, i] = normalize_eigenvector(cand)
    return EigenResult(
        values=lam,
        vectors=vectors,
        iterations=0,
        degenerate=_min_gap(lam) < DEGENERACY_GAP,
    )
