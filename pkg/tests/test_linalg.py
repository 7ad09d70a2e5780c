import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eigenode.linalg import (
    DimensionError,
    SingularMatrixError,
    hadamard,
    matmul,
    solve,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


def complex_matrices(rows, cols):
    shape = (rows, cols)
    return st.tuples(
        arrays(np.float64, shape, elements=finite),
        arrays(np.float64, shape, elements=finite),
    ).map(lambda ab: ab[0] + 1j * ab[1])


def test_matmul_identity():
    m = np.array([[1.0 + 2j, 3.0], [4.0, 5.0 - 1j]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_row_swap():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(swap, m), m[::-1])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    expected = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), expected, rtol=1e-14, atol=0.0)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@given(complex_matrices(2, 3), complex_matrices(3, 2), complex_matrices(2, 2))
@settings(max_examples=40, deadline=None)
def test_matmul_associative(a, b, c):
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    scale = max(np.max(np.abs(left)), 1.0)
    assert np.max(np.abs(left - right)) <= 1e-12 * scale


def test_hadamard_identity_mask():
    m = np.array([[1.0 + 1j, 2.0], [3.0, 4.0 - 2j]])
    out = hadamard(np.eye(2), m)
    assert out[0, 1] == 0 and out[1, 0] == 0
    assert out[0, 0] == m[0, 0] and out[1, 1] == m[1, 1]


def test_hadamard_zeros():
    m = np.arange(4.0).reshape(2, 2)
    assert np.array_equal(hadamard(np.zeros((2, 2)), m), np.zeros((2, 2)))


def test_hadamard_shape_mismatch():
    with pytest.raises(DimensionError):
        hadamard(np.ones((2, 2)), np.ones((2, 3)))


@given(complex_matrices(3, 3), complex_matrices(3, 3))
@settings(max_examples=40, deadline=None)
def test_hadamard_commutes_exactly(a, b):
    assert np.array_equal(hadamard(a, b), hadamard(b, a))


def test_solve_identity():
    b = np.array([[1.0 + 2j], [3.0]])
    assert np.allclose(solve(np.eye(2), b), b, rtol=0.0, atol=0.0)


def test_solve_diagonal():
    out = solve(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]]))
    assert np.allclose(out, [[1.0], [2.0]], rtol=1e-15)


def test_solve_residual_random():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
    x = solve(a, b)
    residual = np.max(np.abs(a @ x - b))
    assert residual <= 1e-10 * max(np.max(np.abs(b)), 1.0)


def test_solve_singular_raises():
    singular = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        solve(singular, np.eye(2))
    with pytest.raises(SingularMatrixError):
        solve(np.zeros((2, 2)), np.eye(2))


def test_solve_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        solve(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        solve(np.eye(2), np.ones((3, 1)))


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=40, deadline=None)
def test_solve_roundtrip_well_conditioned(n, seed):
    rng = np.random.default_rng(seed)
    # diagonally dominant => condition number far below 1e6
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    a += np.eye(n) * (2.0 * n)
    x = rng.normal(size=(n, 1)) + 1j * rng.normal(size=(n, 1))
    recovered = solve(a, a @ x)
    assert np.max(np.abs(recovered - x)) <= 1e-10 * max(np.max(np.abs(x)), 1.0)
