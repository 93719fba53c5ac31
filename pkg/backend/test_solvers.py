"""
子问题求解器测试
"""

import numpy as np
import pytest

from backend.app.errors import DimensionMismatchError, FactorizationError, InvalidParameterError, NonFiniteObjectiveError
from backend.app.models.config import Constraint
from backend.app.models.lambda_vector import LambdaVector
from backend.app.services import solvers
from backend.app.services.operators import build_second_diff, identity
from backend.app.services.penalties import build_penalty_1d
from backend.app.services.solvers import (
    SubproblemSpec,
    smooth_gradient,
    solve_fista,
    solve_newton_projection,
    solve_subproblem,
    solve_unconstrained,
    subproblem_objective,
)

N = 12


def _positive_data():
    return 5.0 + np.sin(np.linspace(0.0, 3.0, N))


def _spec(b, lam_value, constraint=Constraint.UNCONSTRAINED, l1=False, l1_weight=0.0, operator=None, **kwargs):
    penalty = build_penalty_1d(N, 1e-6, l1=l1)
    values = np.full(N, lam_value)
    if l1:
        values = np.append(values, l1_weight)
    return SubproblemSpec(operator or identity(N), b, LambdaVector(values), penalty, constraint, **kwargs)


def test_vanishing_penalty_returns_data():
    b = _positive_data()
    result = solve_unconstrained(_spec(b, 1e-15))
    np.testing.assert_allclose(result.u, b, rtol=1e-6)


def test_uniform_lambda_matches_plain_tikhonov(small_problem):
    c = 1e-2
    penalty = build_penalty_1d(N, 1e-6)
    spec = SubproblemSpec(small_problem.operator, small_problem.b, LambdaVector.uniform(N, c), penalty)
    result = solve_unconstrained(spec)

    A = small_problem.operator.materialize()
    L = build_second_diff(N).materialize()
    reference = np.linalg.solve(A.T @ A + 2.0 * c * L.T @ L, A.T @ small_problem.b)
    np.testing.assert_allclose(result.u, reference, rtol=1e-10, atol=1e-10 * np.linalg.norm(reference))


def test_unconstrained_first_order_condition(small_problem, rng):
    penalty = build_penalty_1d(N, 1e-6)
    lam = LambdaVector(rng.uniform(1e-3, 1e-1, N))
    spec = SubproblemSpec(small_problem.operator, small_problem.b, lam, penalty)
    result = solve_unconstrained(spec)
    scale = np.linalg.norm(small_problem.operator.adjoint(small_problem.b))
    assert np.linalg.norm(smooth_gradient(spec, result.u)) <= 1e-10 * scale
    assert result.kkt_residual <= 1e-10


def test_newton_matches_direct_when_constraint_inactive():
    b = _positive_data()
    direct = solve_unconstrained(_spec(b, 0.1))
    assert direct.u.min() > 0
    newton = solve_newton_projection(_spec(b, 0.1, Constraint.NONNEGATIVE))
    assert newton.converged
    np.testing.assert_allclose(newton.u, direct.u, rtol=1e-8)


def test_newton_clamps_negative_entries():
    b = np.sin(np.linspace(0.0, 2.0 * np.pi, N)) * 3.0
    unconstrained = solve_unconstrained(_spec(b, 1e-3))
    assert unconstrained.u.min() < 0

    spec = _spec(b, 1e-3, Constraint.NONNEGATIVE)
    result = solve_newton_projection(spec)
    assert result.u.min() >= 0
    projected = np.maximum(unconstrained.u, 0.0)
    assert result.objective <= subproblem_objective(spec, projected) + 1e-12

    g = smooth_gradient(spec, result.u)
    tol = 1e-6 * np.linalg.norm(b)
    positive = result.u > 1e-12 * np.linalg.norm(b)
    assert np.all(np.abs(g[positive]) <= tol)
    assert np.all(g[~positive] >= -tol)


def test_newton_max_iter_is_not_an_exception():
    b = np.sin(np.linspace(0.0, 2.0 * np.pi, N)) * 3.0
    result = solve_newton_projection(_spec(b, 1e-3, Constraint.NONNEGATIVE), tol=1e-30, max_iter=1)
    assert not result.converged
    assert result.u.min() >= 0


def test_fista_without_l1_weight_matches_newton():
    b = _positive_data()
    newton = solve_newton_projection(_spec(b, 0.1, Constraint.NONNEGATIVE))
    fista = solve_fista(_spec(b, 0.1, Constraint.NONNEGATIVE, l1=True, l1_weight=0.0), tol=1e-14, max_iter=20000)
    np.testing.assert_allclose(fista.u, newton.u, rtol=1e-5)


def test_fista_dominant_l1_gives_zero():
    b = _positive_data()
    result = solve_fista(_spec(b, 0.1, Constraint.NONNEGATIVE, l1=True, l1_weight=1e12))
    np.testing.assert_array_equal(result.u, np.zeros(N))


def test_fista_objective_nonincreasing():
    b = np.sin(np.linspace(0.0, 2.0 * np.pi, N)) * 3.0 + 1.0
    result = solve_fista(_spec(b, 0.05, Constraint.NONNEGATIVE, l1=True, l1_weight=0.5))
    history = np.array(result.objective_history)
    assert np.all(np.diff(history) <= 0)
    assert result.u.min() >= 0


def test_fista_non_finite_objective():
    warm = np.tile([1.0, -1.0], N // 2)
    spec = _spec(_positive_data(), 1e307, Constraint.NONNEGATIVE, l1=True, l1_weight=1.0, warm_start=warm)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteObjectiveError):
        solve_fista(spec)


def test_objective_matches_recomputation(small_problem_factory):
    problem = small_problem_factory(constraint=Constraint.NONNEGATIVE)
    for l1 in (False, True):
        penalty = build_penalty_1d(N, 1e-6, l1=l1)
        spec = SubproblemSpec(problem.operator, problem.b, LambdaVector.uniform(penalty.p, 1e-2), penalty,
                              Constraint.NONNEGATIVE)
        result = solve_subproblem(spec)
        assert result.solver == ("fista" if l1 else "newton_projection")
        assert result.objective == pytest.approx(subproblem_objective(spec, result.u), rel=1e-12)


def test_dispatch_unconstrained(small_problem):
    penalty = build_penalty_1d(N, 1e-6)
    spec = SubproblemSpec(small_problem.operator, small_problem.b, LambdaVector.uniform(N, 1e-2), penalty)
    assert solve_subproblem(spec).solver == "direct"
    with pytest.raises(InvalidParameterError):
        solve_newton_projection(spec)


def test_smooth_gradient_matches_finite_differences(small_problem, rng):
    penalty = build_penalty_1d(N, 1e-6)
    spec = SubproblemSpec(small_problem.operator, small_problem.b, LambdaVector(rng.uniform(0.1, 1.0, N)), penalty)
    h = 1e-6
    for _ in range(5):
        u = rng.standard_normal(N)
        grad = smooth_gradient(spec, u)
        fd = np.array([
            (subproblem_objective(spec, u + h * e) - subproblem_objective(spec, u - h * e)) / (2 * h)
            for e in np.eye(N)
        ])
        np.testing.assert_allclose(fd, grad, rtol=1e-5, atol=1e-5 * np.linalg.norm(grad))


def test_factorization_failure_reports_pivot():
    with pytest.raises(FactorizationError) as info:
        solvers._factorize(np.diag([1.0, -1.0]), "测试矩阵")
    assert info.value.smallest_pivot == pytest.approx(-1.0)


def test_spec_validation():
    penalty = build_penalty_1d(N, 1e-6)
    values = np.full(N, 0.1)
    values[3] = 0.0
    with pytest.raises(InvalidParameterError):
        SubproblemSpec(identity(N), np.ones(N), LambdaVector(values), penalty)
    with pytest.raises(DimensionMismatchError):
        SubproblemSpec(identity(N), np.ones(N), LambdaVector.uniform(N + 1, 0.1), penalty)
    with pytest.raises(DimensionMismatchError):
        SubproblemSpec(identity(N), np.ones(N - 1), LambdaVector.uniform(N, 0.1), penalty)
