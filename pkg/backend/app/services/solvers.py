"""
内层子问题求解
固定 λ 求 min_{u∈Ω} ½‖Au−b‖² + Σ λ_i ψ_i(u) (+ λ_{N+1}‖u‖₁)

- 无约束：正规方程的稠密 Cholesky 分解
- 非负约束：Newton 投影法（有效集 + Armijo 投影弧回溯）
- 含 L1 项：FISTA，目标上升时重启动量
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, ldl

from ..errors import (
    DimensionMismatchError,
    FactorizationError,
    InvalidParameterError,
    NonFiniteObjectiveError,
)
from ..models.config import Constraint, SolverSettings
from ..models.lambda_vector import LambdaVector
from .operators import LinearOperator
from .penalties import (
    PenaltyModel,
    apply_penalty_hessian,
    penalty_hessian,
    smooth_penalty_gradient,
    smooth_penalty_value,
)

logger = logging.getLogger(__name__)

_TINY = 1e-300


@dataclass
class SubproblemSpec:
    """固定 λ 的子问题"""
    operator: LinearOperator
    b: np.ndarray
    lam: LambdaVector
    penalty: PenaltyModel
    constraint: Constraint = Constraint.UNCONSTRAINED
    warm_start: Optional[np.ndarray] = None
    gram: Optional[np.ndarray] = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.constraint = Constraint(self.constraint)
        if self.b.size != self.operator.rows:
            raise DimensionMismatchError(self.operator.rows, int(self.b.size), "数据向量")
        if self.operator.cols != self.penalty.n:
            raise DimensionMismatchError(self.penalty.n, self.operator.cols, "惩罚维度")
        if self.lam.p != self.penalty.p:
            raise DimensionMismatchError(self.penalty.p, self.lam.p, "λ向量")
        if np.any(self.weights <= 0):
            raise InvalidParameterError("局部惩罚的 λ 必须全部为正")
        if self.warm_start is not None:
            self.warm_start = np.asarray(self.warm_start, dtype=float)
            if self.warm_start.size != self.penalty.n:
                raise DimensionMismatchError(self.penalty.n, int(self.warm_start.size), "热启动向量")

    @property
    def weights(self) -> np.ndarray:
        """λ_1..λ_N"""
        return self.lam.values[: self.penalty.n]

    @property
    def l1_weight(self) -> float:
        return float(self.lam.values[-1]) if self.penalty.l1_enabled else 0.0

    @property
    def nonnegative(self) -> bool:
        return self.constraint == Constraint.NONNEGATIVE


@dataclass
class SolveResult:
    u: np.ndarray
    inner_iterations: int
    objective: float
    kkt_residual: float
    converged: bool = True
    solver: str = "direct"
    objective_history: List[float] = field(default_factory=list)


def subproblem_objective(spec: SubproblemSpec, u: np.ndarray) -> float:
    """½‖Au−b‖² + Σ_{i≤N} λ_i ψ_i(u) + λ_{N+1}‖u‖₁"""
    r = spec.operator.apply(u) - spec.b
    value = 0.5 * float(r @ r) + smooth_penalty_value(spec.penalty, spec.weights, u)
    if spec.penalty.l1_enabled:
        value += spec.l1_weight * float(np.abs(u).sum())
    return value


def smooth_gradient(spec: SubproblemSpec, u: np.ndarray) -> np.ndarray:
    """光滑部分梯度 Aᵀ(Au−b) + 2Σ L_kᵀ diag(λ) L_k u"""
    r = spec.operator.apply(u) - spec.b
    return spec.operator.adjoint(r) + smooth_penalty_gradient(spec.penalty, spec.weights, u)


def normal_matrix(spec: SubproblemSpec) -> np.ndarray:
    """AᵀA + 2Σ L_kᵀ diag(λ) L_k"""
    gram = spec.gram if spec.gram is not None else spec.operator.gram()
    return gram + penalty_hessian(spec.penalty, spec.weights)


def _factorize(matrix: np.ndarray, what: str):
    if not np.all(np.isfinite(matrix)):
        raise FactorizationError(f"{what}含非有限元素", float("nan"))
    try:
        return cho_factor(matrix, lower=True, check_finite=False)
    except LinAlgError:
        _, d, _ = ldl(matrix, lower=True)
        pivot = float(np.min(np.diag(d)))
        raise FactorizationError(f"{what}数值奇异，Cholesky 分解失败", pivot)


def solve_unconstrained(spec: SubproblemSpec, settings: Optional[SolverSettings] = None) -> SolveResult:
    """
    无约束子问题：(AᵀA + 2Lᵀdiag(λ)L)u = Aᵀb

    Returns:
        SolveResult: kkt_residual 为正规方程相对残差
    """
    if spec.nonnegative:
        raise InvalidParameterError("solve_unconstrained 仅用于无约束问题")
    if spec.penalty.l1_enabled:
        raise InvalidParameterError("含 L1 项的问题需使用 FISTA")

    matrix = normal_matrix(spec)
    rhs = spec.operator.adjoint(spec.b)
    factor = _factorize(matrix, "正规方程矩阵")
    u = cho_solve(factor, rhs, check_finite=False)
    kkt = float(np.linalg.norm(matrix @ u - rhs) / max(np.linalg.norm(rhs), _TINY))
    objective = subproblem_objective(spec, u)
    return SolveResult(u=u, inner_iterations=1, objective=objective, kkt_residual=kkt,
                       converged=True, solver="direct", objective_history=[objective])


def _projected_gradient_norm(u: np.ndarray, g: np.ndarray) -> float:
    return float(np.linalg.norm(u - np.maximum(u - g, 0.0)))


def solve_newton_projection(spec: SubproblemSpec, tol: Optional[float] = None,
                            max_iter: Optional[int] = None,
                            settings: Optional[SolverSettings] = None) -> SolveResult:
    """
    非负约束子问题的 Newton 投影法

    有效集 {i : u_i ≤ ε_a 且 g_i > 0}；自由变量上做 Newton 步，有效变量上做对角缩放梯度步；
    沿投影弧 u(α) = max(u + αd, 0) 做 Armijo 回溯

    Args:
        spec: 子问题（constraint 必须为 nonneg，且不含 L1 项）
        tol: 投影梯度相对容差（相对 ‖Aᵀb‖）
        max_iter: 最大迭代次数，达到后返回 converged=False

    Returns:
        SolveResult
    """
    settings = settings or SolverSettings()
    tol = settings.newton_tol if tol is None else tol
    max_iter = settings.newton_max_iter if max_iter is None else max_iter
    if not spec.nonnegative:
        raise InvalidParameterError("Newton 投影法仅用于非负约束问题")
    if spec.penalty.l1_enabled:
        raise InvalidParameterError("含 L1 项的问题需使用 FISTA")

    hess = normal_matrix(spec)
    c = spec.operator.adjoint(spec.b)
    scale = max(float(np.linalg.norm(c)), _TINY)
    eps_active = settings.active_eps_scale * float(np.linalg.norm(spec.b))
    diag = np.maximum(np.diag(hess), _TINY)

    def quad(v: np.ndarray) -> float:
        return 0.5 * float(v @ (hess @ v)) - float(c @ v)

    u = np.zeros(spec.penalty.n) if spec.warm_start is None else np.maximum(spec.warm_start, 0.0)
    f_u = quad(u)
    history = [f_u]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        g = hess @ u - c
        if _projected_gradient_norm(u, g) <= tol * scale:
            converged = True
            iterations -= 1
            break

        active = (u <= eps_active) & (g > 0)
        free = ~active
        d = np.zeros_like(u)
        d[active] = -g[active] / diag[active]
        if np.any(free):
            reduced = hess[np.ix_(free, free)]
            d[free] = -cho_solve(_factorize(reduced, "约化 Hessian"), g[free], check_finite=False)

        alpha = 1.0
        accepted = False
        while alpha > 1e-20:
            trial = np.maximum(u + alpha * d, 0.0)
            predicted = alpha * float(-g[free] @ d[free]) + float(g[active] @ (u[active] - trial[active]))
            f_trial = quad(trial)
            if f_u - f_trial >= settings.armijo_sigma * predicted:
                accepted = True
                break
            alpha *= settings.armijo_beta

        if not accepted:
            logger.debug(f"Newton 投影法第 {iterations} 步线搜索失败，停止")
            break
        u, f_u = trial, f_trial
        history.append(f_u)
    else:
        g = hess @ u - c
        converged = _projected_gradient_norm(u, g) <= tol * scale

    if not converged:
        logger.debug(f"Newton 投影法未在 {max_iter} 步内收敛")

    g = hess @ u - c
    kkt = _projected_gradient_norm(u, g) / scale
    return SolveResult(u=u, inner_iterations=iterations, objective=subproblem_objective(spec, u),
                       kkt_residual=kkt, converged=converged, solver="newton_projection",
                       objective_history=history)


def estimate_lipschitz(spec: SubproblemSpec, iterations: int = 20, margin: float = 1.05) -> float:
    """幂迭代估计光滑部分 Hessian 的最大特征值"""
    rng = np.random.Generator(np.random.PCG64(0))
    v = rng.standard_normal(spec.penalty.n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = spec.operator.adjoint(spec.operator.apply(v)) + apply_penalty_hessian(spec.penalty, spec.weights, v)
        estimate = float(np.linalg.norm(w))
        if estimate == 0:
            break
        v = w / estimate
    return margin * max(estimate, _TINY)


def solve_fista(spec: SubproblemSpec, tol: Optional[float] = None, max_iter: Optional[int] = None,
                settings: Optional[SolverSettings] = None) -> SolveResult:
    """
    FISTA（加速近端梯度）

    光滑部分 f(u) = ½‖Au−b‖² + Σ_{i≤N} λ_i ψ_i(u)，近端算子为 λ_{N+1}‖·‖₁ 加非负指示函数：
    u ← max(v − tλ_{N+1}, 0)（无约束时为软阈值）。目标上升时重启：从当前点做一步近端梯度，
    必要时步长减半，保证目标序列单调不增
    """
    settings = settings or SolverSettings()
    tol = settings.fista_tol if tol is None else tol
    max_iter = settings.fista_max_iter if max_iter is None else max_iter

    l1 = spec.l1_weight
    nonneg = spec.nonnegative

    def prox(v: np.ndarray, step: float) -> np.ndarray:
        if nonneg:
            return np.maximum(v - step * l1, 0.0)
        return np.sign(v) * np.maximum(np.abs(v) - step * l1, 0.0)

    def objective(v: np.ndarray) -> float:
        value = subproblem_objective(spec, v)
        if not np.isfinite(value):
            raise NonFiniteObjectiveError(f"FISTA 目标函数非有限 ({value})，λ 尺度可能异常")
        return value

    step = 1.0 / estimate_lipschitz(spec, settings.power_iterations, settings.lipschitz_margin)
    x = np.zeros(spec.penalty.n) if spec.warm_start is None else spec.warm_start.copy()
    if nonneg:
        x = np.maximum(x, 0.0)
    f_x = objective(x)
    y = x.copy()
    theta = 1.0
    history = [f_x]
    converged = False
    restarts = 0
    iterations = 0

    for iterations in range(1, max_iter + 1):
        z = prox(y - step * smooth_gradient(spec, y), step)
        f_z = objective(z)
        if f_z > f_x:
            # 重启动量，从 x 做单调的近端梯度步
            restarts += 1
            theta = 1.0
            grad_x = smooth_gradient(spec, x)
            z = prox(x - step * grad_x, step)
            f_z = objective(z)
            halvings = 0
            while f_z > f_x and halvings < 50:
                step *= 0.5
                halvings += 1
                z = prox(x - step * grad_x, step)
                f_z = objective(z)
            if f_z > f_x:
                z, f_z = x, f_x

        theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta ** 2))
        y = z + ((theta - 1.0) / theta_next) * (z - x)
        change = abs(f_x - f_z) / max(abs(f_x), _TINY)
        x, f_x, theta = z, f_z, theta_next
        history.append(f_x)
        if change <= tol:
            converged = True
            break

    if restarts:
        logger.debug(f"FISTA 重启 {restarts} 次")

    grad = smooth_gradient(spec, x)
    mapping = (x - prox(x - step * grad, step)) / step
    scale = max(float(np.linalg.norm(spec.operator.adjoint(spec.b))), _TINY)
    return SolveResult(u=x, inner_iterations=iterations, objective=f_x,
                       kkt_residual=float(np.linalg.norm(mapping)) / scale,
                       converged=converged, solver="fista", objective_history=history)


def solve_subproblem(spec: SubproblemSpec, settings: Optional[SolverSettings] = None) -> SolveResult:
    """按约束和 L1 项分派到对应求解器"""
    settings = settings or SolverSettings()
    if spec.penalty.l1_enabled:
        return solve_fista(spec, settings=settings)
    if spec.nonnegative:
        return solve_newton_projection(spec, settings=settings)
    return solve_unconstrained(spec, settings)
