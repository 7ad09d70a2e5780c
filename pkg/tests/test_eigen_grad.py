import numpy as np
import pytest

from eigenode.eigen import eigen
from eigenode.eigen_grad import (
    DegeneracyError,
    eigen_forward,
    eigen_reverse,
    eigenvalue_gradient_matrices,
    f_matrix,
)


def random_nondegenerate(rng, n=4, min_gap=1e-2):
    while True:
        a = rng.uniform(-5.0, 5.0, (n, n))
        e = eigen(a)
        gaps = np.abs(e.values[None, :] - e.values[:, None])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() > min_gap:
            return a, e


def fd_value_tangents(a, da, h=1e-6):
    base = eigen(a, with_vectors=False).values

    def match(vals):
        out = np.empty_like(base)
        used = np.zeros(vals.size, dtype=bool)
        for i, b in enumerate(base):
            dist = np.where(used, np.inf, np.abs(vals - b))
            j = int(np.argmin(dist))
            out[i] = vals[j]
            used[j] = True
        return out

    vp = match(eigen(a + h * da, with_vectors=False).values)
    vm = match(eigen(a - h * da, with_vectors=False).values)
    return (vp - vm) / (2.0 * h)


class TestFMatrix:
    def test_simple_gaps(self):
        fm = f_matrix([1.0, 3.0])
        assert np.allclose(fm.f, [[0.0, 0.5], [-0.5, 0.0]])
        assert not fm.degenerate

    def test_repeated_eigenvalue_flags_degenerate(self):
        fm = f_matrix([2.0, 2.0])
        assert np.array_equal(fm.f, np.zeros((2, 2)))
        assert fm.degenerate

    def test_conjugate_pair_gap(self):
        lam = np.array([-0.025 + 4.9999375j, -0.025 - 4.9999375j])
        fm = f_matrix(lam)
        # 1 / (lambda_2 - lambda_1) = 1 / (-9.999875i) = +0.1000013i
        assert fm.f[0, 1] == pytest.approx(1j * 0.1000013, abs=1e-7)
        assert fm.f[1, 0] == pytest.approx(-1j * 0.1000013, abs=1e-7)

    def test_zero_diagonal_and_antisymmetry(self):
        rng = np.random.default_rng(0)
        lam = rng.normal(size=5) + 1j * rng.normal(size=5)
        fm = f_matrix(lam)
        assert np.all(np.diagonal(fm.f) == 0.0)
        assert np.allclose(fm.f, -fm.f.T)

    def test_floor_validation(self):
        with pytest.raises(ValueError):
            f_matrix([1.0, 2.0], degeneracy_floor=0.0)


class TestForward:
    def test_diagonal_case_masks_tangent(self):
        e = eigen(np.diag([1.0, 3.0]))
        da = np.array([[0.5, 2.0], [3.0, -0.25]])
        fwd = eigen_forward(e, da)
        assert np.allclose(fwd.dvalues, [0.5, -0.25], atol=1e-9)
        assert np.count_nonzero(fwd.dD - np.diag(np.diagonal(fwd.dD))) == 0

    def test_zero_tangent(self):
        rng = np.random.default_rng(1)
        a, e = random_nondegenerate(rng)
        fwd = eigen_forward(e, np.zeros((4, 4)))
        assert np.array_equal(fwd.dD, np.zeros((4, 4), dtype=complex))
        assert np.array_equal(fwd.dU, np.zeros((4, 4), dtype=complex))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        a, e = random_nondegenerate(rng)
        da = rng.uniform(-1.0, 1.0, (4, 4))
        fd = fd_value_tangents(a, da)
        fwd = eigen_forward(e, da)
        scale = max(np.max(np.abs(fd)), 1.0)
        assert np.max(np.abs(fwd.dvalues - fd)) <= 1e-5 * scale

    def test_degenerate_input_rejected(self):
        e = eigen(np.array([[0.0, 1.0], [-1.0, 2.0]]))
        with pytest.raises(DegeneracyError):
            eigen_forward(e, np.eye(2))

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, e = random_nondegenerate(rng)
        da1 = rng.uniform(-1, 1, (4, 4))
        da2 = rng.uniform(-1, 1, (4, 4))
        combo = eigen_forward(e, 2.0 * da1 - 0.5 * da2)
        parts = 2.0 * eigen_forward(e, da1).dD - 0.5 * eigen_forward(e, da2).dD
        assert np.max(np.abs(combo.dD - parts)) <= 1e-12 * max(np.max(np.abs(parts)), 1.0)

    def test_conjugate_symmetry_of_tangents(self):
        rng = np.random.default_rng(4)
        e = eigen(np.array([[0.0, 1.0], [-25.0, -0.05]]))
        da = rng.uniform(-1, 1, (2, 2))
        dv = eigen_forward(e, da).dvalues
        assert abs(dv[0] - np.conj(dv[1])) <= 1e-10

    def test_interleaved_tangents(self):
        e = eigen(np.diag([1.0, 3.0]))
        fwd = eigen_forward(e, np.array([[0.5, 0.0], [0.0, -0.25]]))
        flat = fwd.dvalues_interleaved()
        assert flat.shape == (4,)
        assert np.allclose(flat, [0.5, 0.0, -0.25, 0.0], atol=1e-9)


class TestReverse:
    def test_identity_eigenvectors(self):
        e = eigen(np.diag([1.0, 3.0]))
        dbar = np.diag([2.0, -1.5]).astype(complex)
        abar = eigen_reverse(e, dbar, np.zeros((2, 2)))
        assert np.allclose(abar, np.diag([2.0, -1.5]), atol=1e-9)

    def test_zero_cotangents(self):
        rng = np.random.default_rng(5)
        _, e = random_nondegenerate(rng)
        abar = eigen_reverse(e, np.zeros((4, 4)), np.zeros((4, 4)))
        assert np.array_equal(abar, np.zeros((4, 4)))

    def test_forward_reverse_dot_identity(self):
        rng = np.random.default_rng(6)
        _, e = random_nondegenerate(rng)
        da = rng.uniform(-1.0, 1.0, (4, 4))
        gbar = np.diag(rng.normal(size=4) + 1j * rng.normal(size=4))
        abar = eigen_reverse(e, gbar, np.zeros((4, 4)))
        lhs = float(np.sum(abar * da))
        rhs = np.sum(gbar * eigen_forward(e, da).dD).real
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)

    def test_degenerate_allowed_without_vector_cotangent(self):
        e = eigen(np.array([[2.0, 0.0], [0.0, 2.0]]))
        abar = eigen_reverse(e, np.diag([1.0, 1.0]).astype(complex), np.zeros((2, 2)))
        assert np.allclose(abar, np.eye(2), atol=1e-9)

    def test_degenerate_rejected_with_vector_cotangent(self):
        e = eigen(np.array([[2.0, 0.0], [0.0, 2.0]]))
        with pytest.raises(DegeneracyError):
            eigen_reverse(e, np.zeros((2, 2)), np.ones((2, 2)))

    def test_full_reverse_with_vector_cotangent_vs_forward(self):
        rng = np.random.default_rng(7)
        _, e = random_nondegenerate(rng)
        da = rng.uniform(-1.0, 1.0, (4, 4))
        dbar = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        ubar = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        dbar = np.diag(np.diagonal(dbar))
        abar = eigen_reverse(e, dbar, ubar)
        fwd = eigen_forward(e, da)
        lhs = float(np.sum(abar * da))
        rhs = (np.sum(dbar * fwd.dD) + np.sum(ubar * fwd.dU)).real
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)


def test_gradient_matrices_match_forward():
    rng = np.random.default_rng(8)
    _, e = random_nondegenerate(rng)
    g = eigenvalue_gradient_matrices(e)
    da = rng.uniform(-1.0, 1.0, (4, 4))
    via_g = np.einsum("ipq,pq->i", g, da.astype(complex))
    assert np.max(np.abs(via_g - eigen_forward(e, da).dvalues)) <= 1e-12
