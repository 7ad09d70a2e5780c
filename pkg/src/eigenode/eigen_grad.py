"""Analytic sensitivities through the eigen-decomposition.

Differentiating through the QR iteration itself would be both slow and
numerically fragile, so tangents and adjoints are evaluated in closed form
from the decomposition (D, U) of the primal matrix:

  forward:  dD = I o (U^-1 . dA . U),   dU = U . (F o (U^-1 . dA . U))
  reverse:  Abar = U^-T . (Dbar + F o (U^T . Ubar)) . U^T

with F[i, j] = 1/(lambda_j - lambda_i) off the diagonal and zero on it.
The formulas are undefined for repeated eigenvalues; such inputs are
flagged/rejected rather than silently clamped. The primal matrix is real,
so reverse mode projects the complex adjoint onto its real part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import DEGENERACY_GAP, EigenResult, to_interleaved
from .linalg import as_complex_matrix, hadamard, matmul, solve

__all__ = [
    "DegeneracyError",
    "FMatrix",
    "EigenForwardSensitivity",
    "f_matrix",
    "eigen_forward",
    "eigen_reverse",
    "eigenvalue_gradient_matrices",
]


class DegeneracyError(ArithmeticError):
    """Eigenvalue gap too small for the sensitivity formulas."""


@dataclass(frozen=True)
class FMatrix:
    """Reciprocal eigenvalue gaps, zero diagonal.

    ``degenerate`` marks that at least one off-diagonal gap fell below the
    floor and was zeroed out.
    """

    f: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class EigenForwardSensitivity:
    """Forward-mode tangents of the decomposition.

    ``dD`` is exactly diagonal (off-diagonal entries are exact zeros);
    its diagonal holds the eigenvalue tangents.
    """

    dD: np.ndarray
    dU: np.ndarray

    @property
    def dvalues(self) -> np.ndarray:
        return np.diagonal(self.dD).copy()

    def dvalues_interleaved(self) -> np.ndarray:
        """Eigenvalue tangents as [re1, im1, re2, im2, ...]."""
        return to_interleaved(self.dvalues)


def f_matrix(values, degeneracy_floor: float = DEGENERACY_GAP) -> FMatrix:
    """F[i, j] = 1/(lambda_j - lambda_i) for i != j, 0 elsewhere.

    Gaps smaller than ``degeneracy_floor`` produce a zero entry and set the
    degenerate flag instead of overflowing.
    """
    if degeneracy_floor <= 0.0:
        raise ValueError("degeneracy_floor must be positive")
    lam = np.asarray(values, dtype=np.complex128).ravel()
    gap = lam[None, :] - lam[:, None]  # gap[i, j] = lambda_j - lambda_i
    small = np.abs(gap) < degeneracy_floor
    f = np.zeros_like(gap)
    ok = ~small
    f[ok] = 1.0 / gap[ok]
    n = lam.size
    off = ~np.eye(n, dtype=bool)
    return FMatrix(f=f, degenerate=bool(np.any(small & off)))


def _require_vectors(eig: EigenResult) -> np.ndarray:
    if eig.vectors is None:
        raise ValueError("EigenResult was computed without eigenvectors")
    return eig.vectors


def eigen_forward(eig: EigenResult, dA) -> EigenForwardSensitivity:
    """Tangents (dD, dU) of the decomposition along a primal tangent dA."""
    if eig.degenerate:
        raise DegeneracyError(
            "repeated eigenvalues: eigenvector sensitivities are undefined"
        )
    u = _require_vectors(eig)
    dA = as_complex_matrix(dA, "dA")
    n = u.shape[0]
    if dA.shape != (n, n):
        raise ValueError(f"dA must be {n}x{n}, got {dA.shape}")
    core = solve(u, matmul(dA, u))
    dD = np.zeros_like(core)
    np.fill_diagonal(dD, np.diagonal(core))
    fm = f_matrix(eig.values)
    dU = matmul(u, hadamard(fm.f, core))
    return EigenForwardSensitivity(dD=dD, dU=dU)


def eigen_reverse(eig: EigenResult, dD_bar, dU_bar) -> np.ndarray:
    """Adjoint of the primal matrix from cotangents of (D, U).

    Returns the real part of the complex adjoint: the primal matrix is
    real, so that projection is the correct cotangent. When ``dU_bar`` is
    identically zero the gap-reciprocal term is dropped, which keeps
    eigenvalue-only adjoints well defined even for degenerate spectra.
    """
    u = _require_vectors(eig)
    dD_bar = as_complex_matrix(dD_bar, "dD_bar")
    dU_bar = as_complex_matrix(dU_bar, "dU_bar")
    n = u.shape[0]
    if dD_bar.shape != (n, n) or dU_bar.shape != (n, n):
        raise ValueError("cotangent shapes must match the decomposition")
    ut = u.T.copy()
    if np.any(dU_bar != 0.0):
        if eig.degenerate:
            raise DegeneracyError(
                "repeated eigenvalues: eigenvector cotangent needs the gap matrix"
            )
        fm = f_matrix(eig.values)
        inner = dD_bar + hadamard(fm.f, matmul(ut, dU_bar))
    else:
        inner = dD_bar
    abar = matmul(solve(ut, inner), ut)
    return np.real(abar)


def eigenvalue_gradient_matrices(eig: EigenResult) -> np.ndarray:
    """G[i] with G[i][p, q] = d(lambda_i)/d(A[p, q]).

    This is the eigenvalue (diagonal) part of the forward rule rearranged:
    d(lambda_i) = (U^-1 . dA . U)[i, i] = sum_pq U^-1[i, p] dA[p, q] U[q, i],
    so G[i] is the outer product of row i of U^-1 with column i of U.
    Eigenvectors may be non-degenerate even when eigenvalues cluster, but U
    becomes numerically singular for defective inputs; callers handle the
    resulting SingularMatrixError.
    """
    u = _require_vectors(eig)
    n = u.shape[0]
    u_inv = solve(u, np.eye(n, dtype=np.complex128))
    # G[i, p, q] = u_inv[i, p] * u[q, i]
    return u_inv[:, :, None] * u.T[:, None, :]
