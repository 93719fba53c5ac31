"""
线性算子测试
"""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from backend.app.errors import DimensionMismatchError, InvalidParameterError
from backend.app.services.operators import (
    DenseOperator,
    KroneckerOperator,
    build_first_diff,
    build_gaussian_blur,
    build_grid_difference,
    build_heat,
    build_second_diff,
    identity,
)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


def test_second_diff_first_row():
    L = build_second_diff(6).materialize()
    np.testing.assert_array_equal(L[0], [-2, 1, 0, 0, 0, 1])
    np.testing.assert_array_equal(L, L.T)


def test_differences_annihilate_constants():
    ones = np.ones(9)
    assert np.allclose(build_second_diff(9).apply(ones), 0.0)
    assert np.allclose(build_first_diff(9).apply(ones), 0.0)


def test_first_diff_is_antisymmetric():
    P = build_first_diff(7).materialize()
    np.testing.assert_allclose(P.T, -P)


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, 8, elements=finite), y=arrays(np.float64, 8, elements=finite))
def test_difference_adjoint_identity(x, y):
    for op in (build_second_diff(8), build_first_diff(8)):
        lhs = float(op.apply(x) @ y)
        rhs = float(x @ op.adjoint(y))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-6)


def test_small_difference_rejected():
    with pytest.raises(InvalidParameterError):
        build_second_diff(2)
    with pytest.raises(InvalidParameterError):
        build_first_diff(2)


def test_grid_difference_acts_along_axis():
    shape = (4, 5)
    u = np.arange(20, dtype=float).reshape(shape, order="F")
    d0 = build_grid_difference(shape, "second", axis=0).apply(u.reshape(-1, order="F"))
    expected = np.roll(u, 1, axis=0) - 2 * u + np.roll(u, -1, axis=0)
    np.testing.assert_allclose(d0, expected.reshape(-1, order="F"))


def test_dense_operator_rejects_wide_matrix():
    with pytest.raises(InvalidParameterError):
        DenseOperator(np.ones((2, 3)))


def test_dimension_mismatch():
    op = identity(4)
    with pytest.raises(DimensionMismatchError):
        op.apply(np.ones(5))
    with pytest.raises(DimensionMismatchError):
        op.adjoint(np.ones(3))


def test_kronecker_matches_dense(rng):
    k1 = DenseOperator(rng.standard_normal((5, 3)))
    k2 = DenseOperator(rng.standard_normal((6, 4)))
    op = KroneckerOperator(k1, k2)
    dense = np.kron(k2.matrix, k1.matrix)
    x = rng.standard_normal(12)
    y = rng.standard_normal(30)
    np.testing.assert_allclose(op.apply(x), dense @ x, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(op.adjoint(y), dense.T @ y, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(op.gram(), dense.T @ dense, rtol=1e-12, atol=1e-12)
    assert op.grid_shape == (3, 4)


def test_gaussian_blur_structure():
    A = build_gaussian_blur(60, 5.0).matrix
    np.testing.assert_allclose(A, A.T)
    assert A[0, 21] == 0.0
    assert A[30, 30] == pytest.approx(A[10, 10])
    # 远离边界时每行质量为 1
    assert A[30].sum() == pytest.approx(1.0, rel=1e-12)
    assert A[0].sum() < 1.0


def test_heat_is_lower_triangular():
    op, u_true = build_heat(100)
    assert np.allclose(np.triu(op.matrix, 1), 0.0)
    assert np.all(u_true[50:] == 0.0)
    assert u_true.max() > 0


def test_to_csv_writes_full_matrix(tmp_path):
    op = build_gaussian_blur(10, 1.0)
    op.to_csv(tmp_path / "a.csv")
    frame = pd.read_csv(tmp_path / "a.csv", header=None, float_precision="round_trip")
    assert frame.shape == (10, 10)
    np.testing.assert_array_equal(frame.to_numpy(), op.matrix)
