"""
外层 MM 迭代
UPenMM：交替求解子问题与均匀惩罚更新 λ_i = φ(u)/(pψ_i(u))，φ = ½‖Au−b‖²
GUPenMM：先试探最大值滤波参数 λ̃，代理函数不下降时沿 ε^j λ̃ + (1−ε^j) λ̂ 回溯
代理函数在对数域比较，p 很大时也不会溢出
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import svd

from ..errors import DegenerateProblemError, InvalidParameterError, SolverFailure, UpenError
from ..models.config import Constraint, MMConfig, NumeratorConvention, TildeDenominator
from ..models.lambda_vector import LambdaVector
from ..models.results import ConvergenceTrace, IterationRecord
from .operators import KroneckerOperator, LinearOperator
from .penalties import PenaltyModel, eval_psi_tilde, penalty_vector
from .solvers import SubproblemSpec, solve_subproblem, subproblem_objective
from .testproblems import InverseProblem

logger = logging.getLogger(__name__)

DAMPING_GRID_SIZE = 57


@dataclass
class MMResult:
    u: np.ndarray
    lam: LambdaVector
    trace: ConvergenceTrace
    stop_reason: str

    @property
    def outer_iterations(self) -> int:
        return len(self.trace)

    @property
    def total_inner_iterations(self) -> int:
        return self.trace.total_inner_iterations


def residual_squared(problem: InverseProblem, u: np.ndarray) -> float:
    r = problem.operator.apply(u) - problem.b
    return float(r @ r)


def _numerator(r2: float, convention: NumeratorConvention) -> float:
    if NumeratorConvention(convention) == NumeratorConvention.HALF_SQUARED_NORM:
        return 0.5 * r2
    return r2


def surrogate_exponent(p: int, gamma: float, convention: NumeratorConvention) -> float:
    """
    对数代理函数中 ln f 的系数 e = 1 + γ_eff/p

    γ_eff = γ（½‖Au−b‖² 分子）或 γ/2（‖Au−b‖² 分子），使 λ 更新恰为代理函数的极小点；
    γ = p 且取 ½ 分子时 e = 2
    """
    gamma_eff = gamma if NumeratorConvention(convention) == NumeratorConvention.HALF_SQUARED_NORM else 0.5 * gamma
    return 1.0 + gamma_eff / p


def surrogate_scaled_log(f: float, lam: LambdaVector, exponent: float = 2.0) -> float:
    """
    缩放对数代理值 e·ln f − (1/p)Σ ln λ_i

    Args:
        f: φ(u) + λᵀψ(u)，必须为正
        lam: 严格为正的 λ
        exponent: ln f 的系数，缺省 2

    Returns:
        float: 有限的缩放对数值
    """
    if not f > 0 or not np.isfinite(f):
        raise InvalidParameterError(f"代理函数要求 f > 0，实际 {f}")
    if not lam.is_positive:
        raise InvalidParameterError("代理函数要求 λ 严格为正")
    return float(exponent * np.log(f) - lam.log_prod() / lam.p)


def check_stopping(lambda_new: LambdaVector, lambda_old: LambdaVector, tol_lambda: float) -> bool:
    """‖λ_new − λ_old‖ ≤ ‖λ_old‖·Tol_λ"""
    if lambda_new.p != lambda_old.p:
        raise InvalidParameterError(f"λ 维度不一致: {lambda_new.p} vs {lambda_old.p}")
    return bool(np.linalg.norm(lambda_new.values - lambda_old.values) <= lambda_old.norm() * tol_lambda)


def balancing_update(u: np.ndarray, problem: InverseProblem, penalty: PenaltyModel, gamma: float,
                     convention: NumeratorConvention = NumeratorConvention.HALF_SQUARED_NORM) -> LambdaVector:
    """平衡原则 λ_i = φ(u)/(γψ_i(u))，φ 按分子约定取 ½‖Au−b‖² 或 ‖Au−b‖²"""
    if not gamma > 0:
        raise InvalidParameterError(f"gamma 必须为正: {gamma}")
    num = _numerator(residual_squared(problem, u), convention)
    return LambdaVector(num / (gamma * penalty_vector(penalty, u)))


def ups_update(u: np.ndarray, problem: InverseProblem, penalty: PenaltyModel,
               config: Optional[MMConfig] = None) -> LambdaVector:
    """均匀惩罚更新 λ̂_i = φ(u)/(pψ_i(u))"""
    config = config or MMConfig()
    return balancing_update(u, problem, penalty, penalty.p, config.numerator_convention)


def _l1_scale(penalty: PenaltyModel, mode: TildeDenominator) -> int:
    return 1 if mode == TildeDenominator.LITERAL else penalty.p


def generalized_update(u: np.ndarray, problem: InverseProblem, penalty: PenaltyModel,
                       config: Optional[MMConfig] = None) -> LambdaVector:
    """
    最大值滤波参数 λ̃

    局部项 λ̃_i = φ/(Nψ̃_i)（uniform 时分母为 pψ̃_i）；
    L1 项 λ̃_{N+1} = φ/(c·(‖u‖₁+ε))，literal 时 c = 1，scaled_l1 与 uniform 时 c = p
    """
    config = config or MMConfig()
    mode = TildeDenominator(config.tilde_denominator)
    num = _numerator(residual_squared(problem, u), config.numerator_convention)
    psi_tilde = eval_psi_tilde(penalty, u)
    denominator = penalty.p if mode == TildeDenominator.UNIFORM else penalty.n
    values = num / (denominator * psi_tilde)
    if penalty.l1_enabled:
        l1 = float(np.abs(u).sum()) + penalty.eps_psi
        values = np.append(values, num / (_l1_scale(penalty, mode) * l1))
    return LambdaVector(values)


def _singular_system(op: LinearOperator, b: np.ndarray):
    """
    返回 (s, c, restore, tail2)：奇异值、数据在左奇异向量上的系数、
    系数到 u 的映射、b 在值域之外的能量
    """
    if isinstance(op, KroneckerOperator):
        u1, s1, v1t = svd(op.k1.matrix, full_matrices=False)
        u2, s2, v2t = svd(op.k2.matrix, full_matrices=False)
        coeff = u1.T @ b.reshape((op.k1.rows, op.k2.rows), order="F") @ u2
        s = np.outer(s1, s2)

        def restore(x):
            return (v1t.T @ x @ v2t).reshape(-1, order="F")
    else:
        left, s, vt = svd(op.materialize(), full_matrices=False)
        coeff = left.T @ b

        def restore(x):
            return vt.T @ x
    tail2 = max(float(b @ b) - float(np.sum(coeff ** 2)), 0.0)
    return s, coeff, restore, tail2


def _initial_point(problem: InverseProblem) -> np.ndarray:
    """
    方阵时取 b；否则取阻尼最小二乘解 u_μ = V·diag(s/(s²+μ))·Uᵀb

    μ 取网格上残差不超过 δ‖b‖ 的最大值（δ = 0 时取最小值），非负约束下再投影到可行域
    """
    op = problem.operator
    b = np.asarray(problem.b, dtype=float)
    if op.rows == op.cols:
        return b
    s, coeff, restore, tail2 = _singular_system(op, b)
    s_max = float(np.max(s))
    if s_max == 0 or not np.any(coeff):
        raise DegenerateProblemError("算子或数据在值域上为零，无法构造初始点")

    target = problem.delta * float(np.linalg.norm(b))
    grid = s_max ** 2 * np.logspace(-14, 0, DAMPING_GRID_SIZE)
    mu = grid[0]
    for candidate in grid:
        misfit = np.sqrt(tail2 + float(np.sum((candidate / (s ** 2 + candidate) * coeff) ** 2)))
        if misfit > target:
            break
        mu = candidate
    u0 = restore(s / (s ** 2 + mu) * coeff)
    if problem.constraint == Constraint.NONNEGATIVE:
        u0 = np.maximum(u0, 0.0)
    logger.debug(f"非方阵初始点: μ={mu:.3e}, 残差={np.linalg.norm(op.apply(u0) - b):.4e}, 目标={target:.4e}")
    return u0


def initial_lambda(problem: InverseProblem, penalty: PenaltyModel, generalized: bool = False,
                   config: Optional[MMConfig] = None) -> LambdaVector:
    """
    初始参数 λ_i^(0) = φ(u₀)/(pψ_i(u₀))，u₀ 见 _initial_point；GUPenMM 用 ψ̃ 替代 ψ

    Raises:
        DegenerateProblemError: 初始残差为零
    """
    config = config or MMConfig()
    u0 = _initial_point(problem)
    r2 = residual_squared(problem, u0)
    if r2 == 0:
        raise DegenerateProblemError("初始残差 ‖Au₀−b‖ 为零，问题退化")
    psi = penalty_vector(penalty, u0)
    if generalized:
        psi[: penalty.n] = eval_psi_tilde(penalty, u0)
    return LambdaVector(_numerator(r2, config.numerator_convention) / (penalty.p * psi))


def _drive(problem: InverseProblem, penalty: PenaltyModel, config: MMConfig,
           generalized: bool, gamma: float, label: str) -> MMResult:
    p = penalty.p
    exponent = surrogate_exponent(p, gamma, config.numerator_convention)
    lam = initial_lambda(problem, penalty, generalized, config)
    # 直接法与 Newton 投影共用 AᵀA
    gram = None if penalty.l1_enabled else problem.operator.gram()
    trace = ConvergenceTrace(noise_norm=problem.noise_norm)
    u: Optional[np.ndarray] = None
    stop_reason = "k_max"

    logger.info(f"{label} 开始: 问题={problem.name}, N={penalty.n}, p={p}, 约束={problem.constraint.value}")

    for k in range(config.k_max):
        spec = SubproblemSpec(problem.operator, problem.b, lam, penalty, problem.constraint,
                              warm_start=u, gram=gram)
        try:
            result = solve_subproblem(spec, config.solver)
        except UpenError as exc:
            raise SolverFailure(str(exc), iteration=k) from exc

        if u is not None and result.objective > subproblem_objective(spec, u):
            logger.debug(f"第 {k} 次迭代内层解劣于热启动点，保留热启动点")
            result.u = u
        u = result.u

        r2 = residual_squared(problem, u)
        phi = 0.5 * r2
        psi = penalty_vector(penalty, u)
        s_cur = surrogate_scaled_log(phi + float(lam.values @ psi), lam, exponent)

        record = IterationRecord(
            iteration=k,
            relative_error=problem.relative_error(u),
            residual_norm=float(np.sqrt(r2)),
            surrogate=s_cur,
            surrogate_next=s_cur,
            inner_iterations=result.inner_iterations,
        )

        if r2 < config.zero_residual:
            trace.append(record)
            stop_reason = "zero_residual"
            logger.warning(f"{label} 第 {k} 次迭代残差为零，终止")
            break

        lam_hat = balancing_update(u, problem, penalty, gamma, config.numerator_convention)
        lam_next = lam_hat
        s_next = surrogate_scaled_log(phi + float(lam_hat.values @ psi), lam_hat, exponent)
        backtracks = 0
        fallback = False

        if generalized:
            lam_tilde = generalized_update(u, problem, penalty, config)
            lam_next = lam_tilde
            s_next = surrogate_scaled_log(phi + float(lam_tilde.values @ psi), lam_tilde, exponent)
            while s_next > s_cur + config.descent_slack:
                backtracks += 1
                if backtracks > config.backtrack_cap:
                    lam_next = lam_hat
                    s_next = surrogate_scaled_log(phi + float(lam_hat.values @ psi), lam_hat, exponent)
                    fallback = True
                    logger.warning(f"{label} 第 {k} 次迭代回溯超过 {config.backtrack_cap} 次，回退到 λ̂")
                    break
                lam_next = lam_tilde.combine(lam_hat, config.epsilon_backtrack ** backtracks)
                s_next = surrogate_scaled_log(phi + float(lam_next.values @ psi), lam_next, exponent)

        record.surrogate_next = s_next
        record.backtracks = backtracks
        record.fallback = fallback
        if config.snapshot_stride and k % config.snapshot_stride == 0:
            record.lambda_snapshot = lam_next.to_list()
        trace.append(record)

        logger.debug(
            f"{label} k={k}: 相对误差={record.relative_error:.4e}, 残差={record.residual_norm:.4e}, "
            f"Q={s_cur:.6f}, 内层={result.inner_iterations}, j={backtracks}"
        )

        done = check_stopping(lam_next, lam, config.tol_lambda)
        lam = lam_next
        if done:
            stop_reason = "tolerance"
            break

    logger.info(
        f"{label} 结束: 外层 {len(trace)} 次, 内层 {trace.total_inner_iterations} 次, "
        f"相对误差 {problem.relative_error(u):.4e}, 停止原因 {stop_reason}"
    )
    return MMResult(u=u, lam=lam, trace=trace, stop_reason=stop_reason)


def run_upenmm(problem: InverseProblem, penalty: PenaltyModel, config: Optional[MMConfig] = None) -> MMResult:
    """UPenMM：γ = p 的均匀惩罚系统"""
    config = config or MMConfig()
    return _drive(problem, penalty, config, generalized=False, gamma=float(penalty.p), label="UPenMM")


def run_gupenmm(problem: InverseProblem, penalty: PenaltyModel, config: Optional[MMConfig] = None) -> MMResult:
    """GUPenMM：λ̃ 试探 + 凸组合回溯"""
    config = config or MMConfig(use_generalized=True)
    if not config.use_generalized:
        raise InvalidParameterError("GUPenMM 需要 use_generalized=True")
    return _drive(problem, penalty, config, generalized=True, gamma=float(penalty.p), label="GUPenMM")


def run_balancing(problem: InverseProblem, penalty: PenaltyModel, config: MMConfig) -> MMResult:
    """一般 γ 的平衡原则迭代"""
    if config.gamma is None:
        raise InvalidParameterError("平衡原则迭代必须指定 gamma")
    return _drive(problem, penalty, config, generalized=False, gamma=float(config.gamma), label="BP")
