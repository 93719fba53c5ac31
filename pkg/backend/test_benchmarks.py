"""
基准问题上的整体行为测试

参数化覆盖：代理函数下降、残差与噪声水平一致、GUPenMM 回溯次数；
标记为 acceptance 的用例做 10 种子的中位数区间与排序复现
"""

from functools import lru_cache

import numpy as np
import pytest

from backend.app.models.config import Constraint, MMConfig
from backend.app.services.mm import run_gupenmm, run_upenmm
from backend.app.services.penalties import build_penalty_1d, build_penalty_2d
from backend.app.services.testproblems import make_nmr2d, make_problem
from backend.app.services.tikhonov import tikhonov_sweep

SLACK = 1e-10
SEEDS = range(10)
PROBLEMS = ["t1", "t2", "t3"]
CONSTRAINTS = [Constraint.UNCONSTRAINED, Constraint.NONNEGATIVE]


def _tol(delta: float) -> float:
    return 1e-2 if delta < 0.05 else 1e-5


@lru_cache(maxsize=None)
def _problem(name: str, delta: float, seed: int, constraint: Constraint):
    return make_problem(name, delta, seed, constraint)


@lru_cache(maxsize=None)
def _run(name: str, algorithm: str, delta: float, seed: int, constraint: Constraint, k_max: int = 500):
    problem = _problem(name, delta, seed, constraint)
    penalty = build_penalty_1d(problem.size, 1e-6)
    if algorithm == "gupenmm":
        return run_gupenmm(problem, penalty, MMConfig(use_generalized=True, tol_lambda=_tol(delta), k_max=k_max))
    return run_upenmm(problem, penalty, MMConfig(tol_lambda=_tol(delta), k_max=k_max))


def _error(name, algorithm, delta, seed, constraint) -> float:
    problem = _problem(name, delta, seed, constraint)
    return problem.relative_error(_run(name, algorithm, delta, seed, constraint).u)


@pytest.mark.parametrize("algorithm", ["upenmm", "gupenmm"])
@pytest.mark.parametrize("constraint", CONSTRAINTS)
@pytest.mark.parametrize("delta", [0.01, 0.1])
@pytest.mark.parametrize("name", PROBLEMS)
def test_surrogate_is_nonincreasing(name, delta, constraint, algorithm):
    result = _run(name, algorithm, delta, 0, constraint, k_max=40)
    surrogate = np.array(result.trace.column("surrogate"))
    assert np.all(np.diff(surrogate) <= SLACK)
    assert np.all(np.array(result.trace.column("surrogate_next")) <= surrogate + SLACK)


@pytest.mark.parametrize("delta", [0.01, 0.1])
@pytest.mark.parametrize("name", ["t2", "t3"])
def test_gupenmm_needs_few_backtracks(name, delta):
    result = _run(name, "gupenmm", delta, 0, Constraint.NONNEGATIVE, k_max=40)
    backtracks = np.array(result.trace.column("backtracks"))
    assert not any(result.trace.column("fallback"))
    assert np.median(backtracks) <= 2
    assert backtracks.max() <= 10


@pytest.mark.acceptance
@pytest.mark.parametrize("algorithm", ["upenmm", "gupenmm"])
@pytest.mark.parametrize("constraint", CONSTRAINTS)
@pytest.mark.parametrize("name", PROBLEMS)
def test_low_noise_residual_matches_noise_level(name, constraint, algorithm):
    problem = _problem(name, 0.01, 0, constraint)
    result = _run(name, algorithm, 0.01, 0, constraint)
    assert result.stop_reason == "tolerance"
    assert abs(problem.residual_norm(result.u) / problem.noise_norm - 1.0) <= 0.25


@pytest.mark.acceptance
@pytest.mark.parametrize("algorithm", ["upenmm", "gupenmm"])
@pytest.mark.parametrize("name", PROBLEMS)
def test_high_noise_residual_matches_noise_level(name, algorithm):
    problem = _problem(name, 0.1, 0, Constraint.NONNEGATIVE)
    result = _run(name, algorithm, 0.1, 0, Constraint.NONNEGATIVE)
    assert abs(problem.residual_norm(result.u) / problem.noise_norm - 1.0) <= 0.25


@pytest.mark.acceptance
@pytest.mark.parametrize("name, algorithm, constraint, reference", [
    ("t1", "upenmm", Constraint.UNCONSTRAINED, 1.13e-1),
    ("t1", "gupenmm", Constraint.UNCONSTRAINED, 7.14e-2),
    ("t2", "gupenmm", Constraint.NONNEGATIVE, 2.76e-2),
    ("t3", "gupenmm", Constraint.NONNEGATIVE, 6.13e-2),
])
def test_low_noise_median_error_band(name, algorithm, constraint, reference):
    median = float(np.median([_error(name, algorithm, 0.01, seed, constraint) for seed in SEEDS]))
    assert 0.4 * reference <= median <= 1.6 * reference


@pytest.mark.acceptance
@pytest.mark.parametrize("constraint", CONSTRAINTS)
@pytest.mark.parametrize("name", PROBLEMS)
def test_gupenmm_beats_upenmm_on_most_seeds(name, constraint):
    wins = sum(
        _error(name, "gupenmm", 0.01, seed, constraint) < _error(name, "upenmm", 0.01, seed, constraint)
        for seed in SEEDS
    )
    assert wins >= 8


@pytest.mark.acceptance
@pytest.mark.parametrize("name", ["t1", "t3"])
def test_high_noise_gupenmm_beats_tikhonov(name):
    wins = 0
    for seed in SEEDS:
        problem = _problem(name, 0.1, seed, Constraint.NONNEGATIVE)
        sweep = tikhonov_sweep(problem, build_penalty_1d(problem.size, 1e-6))
        wins += _error(name, "gupenmm", 0.1, seed, Constraint.NONNEGATIVE) < sweep.optimal_error
    assert wins >= 8


@pytest.mark.acceptance
def test_nmr2d_gupenmm_is_cheaper_and_no_worse():
    problem = make_nmr2d(n1=16, n2=16, m1=32, m2=64, delta=0.01, seed=0)
    penalty = build_penalty_2d((16, 16), 1e-6, l1=True)
    plain = run_upenmm(problem, penalty, MMConfig(tol_lambda=1e-2))
    general = run_gupenmm(problem, penalty, MMConfig(use_generalized=True, tol_lambda=1e-2))
    assert general.total_inner_iterations * 2 < plain.total_inner_iterations
    assert problem.relative_error(general.u) <= problem.relative_error(plain.u)
    assert problem.relative_error(general.u) <= 0.3
