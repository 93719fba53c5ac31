"""
单参数 Tikhonov 基准（所有 λ_i 相同）
在对数网格上扫描 λ，按相对误差取最优参数
"""

import logging
from typing import Iterable, Optional

import numpy as np

from ..errors import InvalidParameterError
from ..models.config import Constraint, SolverSettings
from ..models.lambda_vector import LambdaVector
from ..models.results import TikhonovSweepResult
from .penalties import PenaltyModel
from .solvers import SolveResult, SubproblemSpec, solve_newton_projection, solve_unconstrained
from .testproblems import InverseProblem

logger = logging.getLogger(__name__)


def default_grid() -> np.ndarray:
    """[1e-8, 1e2] 上 100 个对数等距点"""
    return np.logspace(-8, 2, 100)


def tikhonov_solve(problem: InverseProblem, penalty: PenaltyModel, lam: float,
                   constraint: Optional[Constraint] = None, warm_start: Optional[np.ndarray] = None,
                   gram: Optional[np.ndarray] = None,
                   settings: Optional[SolverSettings] = None) -> SolveResult:
    """min ½‖Au−b‖² + λ Σ_i ψ_i(u)，非负约束时用 Newton 投影法"""
    if penalty.l1_enabled:
        raise InvalidParameterError("Tikhonov 基准不支持 L1 惩罚")
    if not lam > 0:
        raise InvalidParameterError(f"λ 必须为正: {lam}")
    constraint = Constraint(constraint or problem.constraint)
    spec = SubproblemSpec(problem.operator, problem.b, LambdaVector.uniform(penalty.p, lam), penalty,
                          constraint, warm_start=warm_start, gram=gram)
    if constraint == Constraint.NONNEGATIVE:
        return solve_newton_projection(spec, settings=settings)
    return solve_unconstrained(spec, settings)


def tikhonov_sweep(problem: InverseProblem, penalty: PenaltyModel, grid: Optional[Iterable[float]] = None,
                   constraint: Optional[Constraint] = None,
                   settings: Optional[SolverSettings] = None) -> TikhonovSweepResult:
    """
    网格扫描 Tikhonov 参数

    Returns:
        TikhonovSweepResult: 网格、各点相对误差、最优 λ 与对应解
    """
    lambdas = default_grid() if grid is None else np.asarray(list(grid), dtype=float)
    constraint = Constraint(constraint or problem.constraint)
    gram = problem.operator.gram()

    errors = []
    best_u = None
    best_error = np.inf
    warm = None
    for lam in lambdas:
        result = tikhonov_solve(problem, penalty, float(lam), constraint, warm_start=warm, gram=gram,
                                settings=settings)
        if constraint == Constraint.NONNEGATIVE:
            warm = result.u
        err = problem.relative_error(result.u)
        errors.append(err)
        if err < best_error:
            best_error, best_u = err, result.u

    index = int(np.argmin(errors))
    logger.info(f"Tikhonov 扫描完成: 最优 λ={lambdas[index]:.4e}, 相对误差={errors[index]:.4e}")
    return TikhonovSweepResult(
        constraint=constraint.value,
        lambdas=[float(v) for v in lambdas],
        relative_errors=[float(e) for e in errors],
        optimal_lambda=float(lambdas[index]),
        optimal_error=float(errors[index]),
        optimal_solution=[float(v) for v in best_u],
    )
