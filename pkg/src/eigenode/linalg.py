"""Dense real/complex matrix helpers shared by the eigen and solver stacks.

Matrices are plain 2-D numpy arrays (row-major); complex values use
``complex128``. Shapes are validated at every call boundary so dimension
mistakes fail fast with a :class:`DimensionError` instead of propagating
broadcasting accidents. All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "as_real_matrix",
    "as_complex_matrix",
    "matmul",
    "hadamard",
    "solve",
]

# Pivot magnitudes below this fraction of max|a| are treated as singular.
SINGULARITY_RTOL = 1e-14


class DimensionError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class SingularMatrixError(ArithmeticError):
    """A pivot fell below the singularity threshold during elimination."""


def as_real_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, requiring finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_complex_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D complex128 array."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product a·b with explicit shape validation."""
    a = as_complex_matrix(a, "a")
    b = as_complex_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"inner dimensions differ: {a.shape} x {b.shape}"
        )
    return a @ b


def hadamard(a, b) -> np.ndarray:
    """Element-wise product a∘b; shapes must match exactly.

    Assembled from real/imaginary parts so the result is exactly symmetric
    in its arguments (vectorized complex multiplication may use FMA, which
    rounds a*b and b*a differently).
    """
    a = as_complex_matrix(a, "a")
    b = as_complex_matrix(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    re = a.real * b.real - a.imag * b.imag
    im = a.real * b.imag + a.imag * b.real
    out = np.empty(a.shape, dtype=np.complex128)
    out.real = re
    out.imag = im
    return out


def solve(a, b) -> np.ndarray:
    """Solve a·X = b by LU elimination with partial pivoting.

    ``a`` must be square and ``b`` must have matching row count. A pivot with
    magnitude below ``SINGULARITY_RTOL * max|a|`` raises
    :class:`SingularMatrixError`.
    """
    a = as_complex_matrix(a, "a")
    b = as_complex_matrix(b, "b")
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionError(f"a must be square, got {a.shape}")
    if b.shape[0] != n:
        raise DimensionError(f"b has {b.shape[0]} rows, expected {n}")
    if n == 0:
        return b.copy()

    scale = np.max(np.abs(a))
    if scale == 0.0:
        raise SingularMatrixError("zero matrix")
    threshold = SINGULARITY_RTOL * scale

    lu = a.copy()
    x = b.copy()
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) < threshold:
            raise SingularMatrixError(
                f"pivot {abs(lu[p, k]):.3e} below {threshold:.3e} at column {k}"
            )
        if p != k:
            lu[[k, p], :] = lu[[p, k], :]
            x[[k, p], :] = x[[p, k], :]
        if k + 1 < n:
            mult = lu[k + 1 :, k] / lu[k, k]
            lu[k + 1 :, k:] -= mult[:, None] * lu[k, k:]
            x[k + 1 :, :] -= mult[:, None] * x[k, :]
    for k in range(n - 1, -1, -1):
        x[k, :] -= lu[k, k + 1 :] @ x[k + 1 :, :]
        x[k, :] /= lu[k, k]
    return x
