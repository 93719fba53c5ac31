"""
外层 MM 迭代测试
"""

import numpy as np
import pytest

from backend.app.errors import DegenerateProblemError, FactorizationError, InvalidParameterError, SolverFailure
from backend.app.models.config import Constraint, MMConfig, NumeratorConvention
from backend.app.models.lambda_vector import LambdaVector
from backend.app.services import mm
from backend.app.services.mm import (
    balancing_update,
    check_stopping,
    generalized_update,
    initial_lambda,
    run_balancing,
    run_gupenmm,
    run_upenmm,
    surrogate_exponent,
    surrogate_scaled_log,
    ups_update,
)
from backend.app.services.operators import build_second_diff
from backend.app.services.penalties import build_penalty_1d, build_penalty_2d, eval_psi_tilde, penalty_vector
from backend.app.services.testproblems import make_nmr2d, make_t2

SLACK = 1e-10


def _assert_descent(trace):
    surrogate = np.array(trace.column("surrogate"))
    assert np.all(np.diff(surrogate) <= SLACK)
    nxt = np.array(trace.column("surrogate_next"))
    assert np.all(nxt <= surrogate + SLACK)


def test_surrogate_scaled_log_identity():
    assert surrogate_scaled_log(np.e, LambdaVector([1.0])) == pytest.approx(2.0)
    assert surrogate_scaled_log(np.e, LambdaVector([1.0]), exponent=1.5) == pytest.approx(1.5)


def test_surrogate_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        surrogate_scaled_log(0.0, LambdaVector([1.0]))
    with pytest.raises(InvalidParameterError):
        surrogate_scaled_log(1.0, LambdaVector([1.0, 0.0]))


def test_surrogate_large_p_is_finite():
    lam = LambdaVector(np.full(6400, 1e-4))
    assert np.isfinite(surrogate_scaled_log(1e3, lam))


def test_surrogate_exponent():
    assert surrogate_exponent(10, 10.0, NumeratorConvention.HALF_SQUARED_NORM) == 2.0
    assert surrogate_exponent(10, 10.0, NumeratorConvention.SQUARED_NORM) == 1.5


def test_check_stopping():
    lam = LambdaVector([1.0, 2.0, 3.0])
    assert check_stopping(lam, lam, 1e-12)
    assert not check_stopping(LambdaVector(2 * lam.values), lam, 1e-2)
    with pytest.raises(InvalidParameterError):
        check_stopping(LambdaVector([1.0]), lam, 1e-2)


def test_initial_lambda_matches_direct_formula(t1_problem, t1_penalty):
    lam = initial_lambda(t1_problem, t1_penalty)
    A = t1_problem.operator.materialize()
    b = np.asarray(t1_problem.b)
    L = build_second_diff(100).materialize()
    r2 = np.sum((A @ b - b) ** 2)
    expected = 0.5 * r2 / (100 * ((L @ b) ** 2 + 1e-6))
    np.testing.assert_allclose(lam.values, expected, rtol=1e-12)
    assert lam.is_positive

    squared = initial_lambda(t1_problem, t1_penalty, config=MMConfig(numerator_convention="squared_norm"))
    np.testing.assert_allclose(squared.values, 2.0 * expected, rtol=1e-12)


def test_initial_point_for_rectangular_operator_meets_noise_level():
    problem = make_nmr2d(n1=8, n2=8, m1=16, m2=24, delta=0.01, seed=0)
    u0 = mm._initial_point(problem)
    assert u0.shape == (64,)
    assert u0.min() >= 0

    free = problem.with_constraint(Constraint.UNCONSTRAINED)
    assert free.residual_norm(mm._initial_point(free)) <= 1.25 * problem.delta * np.linalg.norm(problem.b)

    penalty = build_penalty_2d((8, 8), 1e-6, l1=True)
    lam = initial_lambda(problem, penalty)
    assert lam.p == 65
    assert np.isfinite(lam.values).all() and lam.is_positive


def test_generalized_initial_lambda_is_smaller(t1_problem, t1_penalty):
    plain = initial_lambda(t1_problem, t1_penalty)
    general = initial_lambda(t1_problem, t1_penalty, generalized=True)
    assert np.all(general.values <= plain.values)


def test_zero_initial_residual_is_degenerate(identity_problem):
    with pytest.raises(DegenerateProblemError):
        initial_lambda(identity_problem, build_penalty_1d(identity_problem.size))


def test_ups_update_uniformity(t1_problem, t1_penalty, rng):
    u = rng.standard_normal(100)
    lam = ups_update(u, t1_problem, t1_penalty)
    psi = penalty_vector(t1_penalty, u)
    r2 = mm.residual_squared(t1_problem, u)
    np.testing.assert_allclose(lam.values * psi, 0.5 * r2 / 100, rtol=1e-12)
    assert float(lam.values @ psi) == pytest.approx(0.5 * r2, rel=1e-12)

    squared = ups_update(u, t1_problem, t1_penalty, MMConfig(numerator_convention="squared_norm"))
    assert float(squared.values @ psi) == pytest.approx(r2, rel=1e-12)


def test_balancing_update_scaling(t1_problem, t1_penalty, rng):
    u = rng.standard_normal(100)
    ups = ups_update(u, t1_problem, t1_penalty)
    np.testing.assert_array_equal(balancing_update(u, t1_problem, t1_penalty, 100.0).values, ups.values)
    np.testing.assert_allclose(balancing_update(u, t1_problem, t1_penalty, 200.0).values, 0.5 * ups.values,
                               rtol=1e-15)
    with pytest.raises(InvalidParameterError):
        balancing_update(u, t1_problem, t1_penalty, 0.0)


@pytest.mark.parametrize("mode, local_denominator, l1_denominator", [
    ("literal", 30, 1),
    ("scaled_l1", 30, 31),
    ("uniform", 31, 31),
])
def test_generalized_update_denominators(mode, local_denominator, l1_denominator, rng):
    problem = make_nmr2d(n1=5, n2=6, m1=10, m2=12, delta=0.01, seed=0)
    penalty = build_penalty_2d((5, 6), 1e-6, l1=True)
    u = np.abs(rng.standard_normal(30))
    r2 = mm.residual_squared(problem, u)
    tilde = eval_psi_tilde(penalty, u)

    lam = generalized_update(u, problem, penalty,
                             MMConfig(tilde_denominator=mode, numerator_convention="squared_norm"))
    np.testing.assert_allclose(lam.values[:30], r2 / (local_denominator * tilde), rtol=1e-12)
    assert lam.values[30] == pytest.approx(r2 / (l1_denominator * (np.abs(u).sum() + 1e-6)), rel=1e-12)


def test_generalized_update_defaults_match_ups_l1_entry(rng):
    problem = make_nmr2d(n1=5, n2=6, m1=10, m2=12, delta=0.01, seed=0)
    penalty = build_penalty_2d((5, 6), 1e-6, l1=True)
    u = np.abs(rng.standard_normal(30))
    tilde = generalized_update(u, problem, penalty, MMConfig(use_generalized=True))
    hat = ups_update(u, problem, penalty)
    assert tilde.values[30] == pytest.approx(hat.values[30], rel=1e-12)


def test_upenmm_descent_and_trace(t1_problem, t1_penalty):
    result = run_upenmm(t1_problem, t1_penalty, MMConfig(tol_lambda=1e-2, k_max=200))
    assert result.stop_reason == "tolerance"
    assert len(result.trace) == result.outer_iterations
    assert result.total_inner_iterations == result.outer_iterations
    _assert_descent(result.trace)
    assert result.lam.is_positive
    assert result.trace.noise_norm == pytest.approx(t1_problem.noise_norm)


def test_gupenmm_with_identity_tilde_matches_upenmm(t1_problem, t1_penalty):
    config = MMConfig(tol_lambda=1e-2, k_max=50)
    plain = run_upenmm(t1_problem, t1_penalty, config)
    general = run_gupenmm(t1_problem, t1_penalty.with_tilde_mode("identity"),
                          config.model_copy(update={"use_generalized": True}))
    assert len(plain.trace) == len(general.trace)
    np.testing.assert_allclose(general.trace.column("relative_error"), plain.trace.column("relative_error"),
                               rtol=1e-12)
    np.testing.assert_allclose(general.trace.column("surrogate"), plain.trace.column("surrogate"), rtol=1e-12)
    np.testing.assert_allclose(general.u, plain.u, rtol=1e-12, atol=1e-14)


def test_gupenmm_descent_and_backtracking():
    problem = make_t2(0.01, 0, Constraint.NONNEGATIVE)
    penalty = build_penalty_1d(problem.size, 1e-6)
    result = run_gupenmm(problem, penalty, MMConfig(use_generalized=True, tol_lambda=1e-2, k_max=100))
    _assert_descent(result.trace)
    backtracks = result.trace.column("backtracks")
    assert all(j <= 60 for j in backtracks)
    assert result.u.min() >= 0


def test_gupenmm_requires_flag(t1_problem, t1_penalty):
    with pytest.raises(InvalidParameterError):
        run_gupenmm(t1_problem, t1_penalty, MMConfig(use_generalized=False))


def test_balancing_requires_gamma(t1_problem, t1_penalty):
    with pytest.raises(InvalidParameterError):
        run_balancing(t1_problem, t1_penalty, MMConfig())
    result = run_balancing(t1_problem, t1_penalty, MMConfig(gamma=12.5, k_max=5))
    assert 1 <= result.outer_iterations <= 5


def test_snapshots_recorded(t1_problem, t1_penalty):
    result = run_upenmm(t1_problem, t1_penalty, MMConfig(k_max=3, tol_lambda=1e-12, snapshot_stride=1))
    snapshots = [r.lambda_snapshot for r in result.trace.records]
    assert all(s is not None and len(s) == 100 for s in snapshots)
    assert "lambda_snapshot" not in result.trace.to_frame().columns


def test_inner_failure_carries_iteration(t1_problem, t1_penalty, monkeypatch):
    def broken(spec, settings=None):
        raise FactorizationError("模拟失败", -1.0)

    monkeypatch.setattr(mm, "solve_subproblem", broken)
    with pytest.raises(SolverFailure) as info:
        run_upenmm(t1_problem, t1_penalty)
    assert info.value.iteration == 0


def test_nmr2d_with_l1_descends():
    problem = make_nmr2d(n1=6, n2=6, m1=12, m2=12, delta=0.01, seed=0)
    penalty = build_penalty_2d((6, 6), 1e-6, l1=True)
    result = run_gupenmm(problem, penalty, MMConfig(use_generalized=True, k_max=5))
    assert result.lam.p == 37
    assert result.u.min() >= 0
    _assert_descent(result.trace)

