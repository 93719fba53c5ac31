"""
测试问题生成与问题目录读写测试
"""

import numpy as np
import pytest

from backend.app.errors import DegenerateProblemError, InvalidParameterError
from backend.app.models.config import Constraint
from backend.app.services.operators import KroneckerOperator
from backend.app.services.testproblems import (
    T2_SIZE,
    T3_SIZE,
    add_noise,
    make_nmr2d,
    make_problem,
    make_t1,
    make_t2,
    make_t3,
    t3_signal,
)


@pytest.mark.parametrize("factory,size", [(make_t1, 100), (make_t2, T2_SIZE), (make_t3, T3_SIZE)])
def test_sizes_and_noise_identity(factory, size):
    problem = factory(0.01, 3)
    assert problem.size == size
    noise = np.linalg.norm(problem.b - problem.y_clean) / np.linalg.norm(problem.y_clean)
    assert noise == pytest.approx(0.01, rel=1e-12)
    assert problem.noise_norm == pytest.approx(np.linalg.norm(problem.b - problem.y_clean), rel=1e-12)


def test_generation_is_deterministic():
    a = make_t2(0.05, 11)
    b = make_t2(0.05, 11)
    np.testing.assert_array_equal(a.b, b.b)
    c = make_t2(0.05, 12)
    assert not np.array_equal(a.b, c.b)


def test_zero_noise_returns_clean_data():
    problem = make_t1(0.0, 0)
    np.testing.assert_array_equal(problem.b, problem.y_clean)


def test_add_noise_validation():
    with pytest.raises(InvalidParameterError):
        add_noise(np.ones(3), -0.1, 0)
    with pytest.raises(DegenerateProblemError):
        add_noise(np.zeros(3), 0.1, 0)


def test_problem_arrays_are_read_only():
    problem = make_t1(0.01, 0)
    with pytest.raises(ValueError):
        problem.b[0] = 1.0


def test_t3_contains_linear_ramp():
    u = t3_signal()
    second = np.abs(np.diff(u[340:441], 2))
    assert np.all(second < 1e-12)
    assert u[440] == pytest.approx(0.8)
    assert u[441:].max() == 0.0
    assert np.all(u >= 0)


def test_nmr2d_structure():
    problem = make_nmr2d(n1=8, n2=10, m1=16, m2=20, delta=0.01, seed=1)
    assert isinstance(problem.operator, KroneckerOperator)
    assert problem.grid_shape == (8, 10)
    assert problem.operator.shape == (320, 80)
    assert problem.constraint == Constraint.NONNEGATIVE
    assert np.all(problem.u_true >= 0)


def test_make_problem_dispatch():
    problem = make_problem("t1", 0.01, 0, Constraint.NONNEGATIVE)
    assert problem.name == "t1"
    assert problem.constraint == Constraint.NONNEGATIVE
    nmr = make_problem("nmr2d", 0.01, 0, n1=6, n2=6, m1=12, m2=12)
    assert nmr.size == 36
    with pytest.raises(ValueError):
        make_problem("t9", 0.01, 0)


def test_relative_error_of_truth_is_zero():
    problem = make_t1(0.01, 0)
    assert problem.relative_error(problem.u_true) == 0.0
    assert problem.residual_norm(problem.u_true) == pytest.approx(problem.noise_norm, rel=1e-12)
