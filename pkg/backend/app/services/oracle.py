"""
独立校验（oracle）
用与主流程无关的计算路径验证闭式结论：
平衡原则线性系统的 Sherman–Morrison 解、代理函数 Hessian 的显式 Cholesky 因子、
σ/z 递推恒等式、值函数梯度、驻点条件、强制性与对数域防溢出
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import fsolve

from ..errors import OracleMismatchError
from ..models.config import Constraint, MMConfig, NumeratorConvention, SolverSettings
from ..models.lambda_vector import LambdaVector
from ..models.results import OracleCheck
from .mm import balancing_update, surrogate_scaled_log, ups_update
from .operators import DenseOperator
from .penalties import PenaltyModel, build_penalty_1d, penalty_vector
from .solvers import SubproblemSpec, solve_subproblem
from .testproblems import InverseProblem

logger = logging.getLogger(__name__)

BP_TOLERANCE = 1e-10
CHOLESKY_TOLERANCE = 1e-10
IDENTITY_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-4
STATIONARITY_TOLERANCE = 1e-12
SURROGATE_TOLERANCE = 1e-12
DIRECT_PHI_MAX_P = 8


# ---------------------------------------------------------------- 平衡原则系统

def bp_system_matrix(psi: np.ndarray, gamma: float) -> np.ndarray:
    """D − 1ψᵀ，D = diag((γ+p)ψ)"""
    psi = np.asarray(psi, dtype=float)
    p = psi.size
    return np.diag((gamma + p) * psi) - np.outer(np.ones(p), psi)


def _bp_paths(psi: np.ndarray, phi: float, gamma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """三条路径：Sherman–Morrison 一般公式、闭式 φ/(γψ)、稠密直接求解"""
    psi = np.asarray(psi, dtype=float)
    p = psi.size
    d_inv = 1.0 / ((gamma + p) * psi)
    rhs = np.full(p, float(phi))
    w = np.ones(p)
    v = -psi
    # 有效性条件 1 + vᵀD⁻¹w = γ/(p+γ)
    denom = 1.0 + v @ (d_inv * w)
    sherman = d_inv * rhs - (d_inv * w) * (v @ (d_inv * rhs)) / denom
    closed = phi / (gamma * psi)
    dense = np.linalg.solve(bp_system_matrix(psi, gamma), rhs)
    return sherman, closed, dense


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def solve_bp_system(psi, phi: float, gamma: float) -> LambdaVector:
    """
    求解 (D − 1ψᵀ)λ = φ1

    用 Sherman–Morrison 显式逆计算，并与闭式解、稠密直接解比较

    Raises:
        OracleMismatchError: 任意两条路径相对偏差超过 1e-10
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise ValueError("ψ 必须全部为正")
    if not gamma > 0:
        raise ValueError(f"gamma 必须为正: {gamma}")
    sherman, closed, dense = _bp_paths(psi, phi, gamma)
    gap = max(_relative_gap(sherman, closed), _relative_gap(dense, closed))
    if gap > BP_TOLERANCE:
        raise OracleMismatchError(f"平衡原则系统三种解法不一致，相对偏差 {gap:.3e}")
    return LambdaVector(sherman)


# ---------------------------------------------------------------- 代理函数 Hessian

@dataclass
class SurrogateHessianFactor:
    p: int
    psi: np.ndarray
    l_factor: np.ndarray
    sigma: np.ndarray
    z: np.ndarray


def build_surrogate_hessian(psi) -> np.ndarray:
    """H_jl = −ψ_jψ_l（j≠l），H_ll = (2p−1)ψ_l²"""
    psi = np.asarray(psi, dtype=float)
    p = psi.size
    hess = -np.outer(psi, psi)
    np.fill_diagonal(hess, (2 * p - 1) * psi ** 2)
    return hess


def sigma_z_sequences(p: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    σ_k 与 z_k，k = 1..p

    σ_k² = ((2p−1)² − (k−2)(2p−1) − (k−1)) / ((2p−1) − (k−2))
    z_k  = −2p / ((2p−1) − (k−2)) / σ_k
    k = 1, 2 时即 σ_1 = √(2p−1)、z_1 = −1/σ_1 与 σ_2、z_2 的显式式
    """
    if p < 1:
        raise ValueError(f"p 必须为正: {p}")
    q = 2.0 * p - 1.0
    k = np.arange(1, p + 1, dtype=float)
    shifted = q - (k - 2.0)
    sigma = np.sqrt((q ** 2 - (k - 2.0) * q - (k - 1.0)) / shifted)
    sigma[0] = np.sqrt(q)
    z = -2.0 * p / shifted / sigma
    z[0] = -1.0 / sigma[0]
    return sigma, z


def check_recurrence_identities(p: int) -> float:
    """
    σ_i² + Σ_{l<i} z_l² = 2p−1 与 Σ_{l<i} z_l² + z_iσ_i = −1 的最大绝对偏差
    """
    sigma, z = sigma_z_sequences(p)
    prefix = np.concatenate(([0.0], np.cumsum(z ** 2)[:-1]))
    first = np.abs(sigma ** 2 + prefix - (2 * p - 1))
    second = np.abs(prefix + z * sigma + 1.0)
    return float(max(first.max(), second.max()))


def cholesky_surrogate(psi) -> SurrogateHessianFactor:
    """
    显式下三角因子 L，第 i 行为 ψ_i(z_1, …, z_{i−1}, σ_i, 0, …, 0)

    Raises:
        OracleMismatchError: ‖LLᵀ − H‖∞ > 1e-10‖H‖∞ 或对角元非正
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 1 or psi.size < 1 or np.any(psi <= 0):
        raise ValueError("ψ 必须为非空正向量")
    p = psi.size
    sigma, z = sigma_z_sequences(p)
    factor = np.tril(np.tile(z, (p, 1)), k=-1)
    factor[np.diag_indices(p)] = sigma
    factor *= psi[:, None]

    hess = build_surrogate_hessian(psi)
    gap = np.abs(factor @ factor.T - hess).sum(axis=1).max() / np.abs(hess).sum(axis=1).max()
    if gap > CHOLESKY_TOLERANCE:
        raise OracleMismatchError(f"显式 Cholesky 因子不满足 LLᵀ = H，相对偏差 {gap:.3e}")
    if np.any(np.diag(factor) <= 0):
        raise OracleMismatchError("显式 Cholesky 因子存在非正对角元")
    return SurrogateHessianFactor(p=p, psi=psi, l_factor=factor, sigma=sigma, z=z)


# ---------------------------------------------------------------- 值函数

def value_function(problem: InverseProblem, penalty: PenaltyModel, lam: LambdaVector) -> Tuple[float, np.ndarray]:
    """F(λ) = min_u φ(u) + λᵀψ(u)，返回 (F, u_λ)"""
    spec = SubproblemSpec(problem.operator, problem.b, lam, penalty, problem.constraint)
    settings = SolverSettings(newton_tol=1e-12, fista_tol=1e-12)
    result = solve_subproblem(spec, settings)
    value = result.objective
    if penalty.l1_enabled:
        value += penalty.eps_psi * float(lam.values[-1])
    return value, result.u


def log_phi_gamma(value: float, lam: LambdaVector, gamma: float) -> float:
    """ln Φ_γ = (γ+p) ln F − Σ ln λ_i"""
    return float((gamma + lam.p) * np.log(value) - lam.log_prod())


def phi_gamma(value: float, lam: LambdaVector, gamma: float) -> float:
    """Φ_γ = F^{γ+p}/∏λ_i；p > 8 时经对数域计算"""
    if lam.p <= DIRECT_PHI_MAX_P:
        return float(value ** (gamma + lam.p) / np.prod(lam.values))
    return float(np.exp(log_phi_gamma(value, lam, gamma)))


def value_function_gradient_check(problem: InverseProblem, penalty: PenaltyModel, lam: LambdaVector,
                                  h: float = 1e-3, coordinates: int = 5,
                                  rng: Optional[np.random.Generator] = None) -> OracleCheck:
    """
    有限差分验证 ∂F/∂λ_j = ψ_j(u_λ)

    五点中心差分，步长 h_j = h·λ_j；偏差为 |差分 − ψ_j|/ψ_j
    """
    rng = rng or np.random.Generator(np.random.PCG64(0))
    _, u = value_function(problem, penalty, lam)
    psi = penalty_vector(penalty, u)
    picks = rng.choice(lam.p, size=min(coordinates, lam.p), replace=False)

    def shifted(j: int, offset: float) -> float:
        values = lam.values.copy()
        values[j] += offset
        return value_function(problem, penalty, LambdaVector(values))[0]

    deviations = {}
    for j in picks:
        step = h * lam.values[j]
        fd = (-shifted(j, 2 * step) + 8 * shifted(j, step) - 8 * shifted(j, -step) + shifted(j, -2 * step)) \
            / (12.0 * step)
        deviations[int(j)] = abs(fd - psi[j]) / psi[j]

    worst = max(deviations.values())
    failed = [j for j, d in deviations.items() if d > GRADIENT_TOLERANCE]
    return OracleCheck(name="value_gradient", max_deviation=worst, tolerance=GRADIENT_TOLERANCE,
                       passed=not failed, details={"coordinates": sorted(deviations), "failed": failed})


# ---------------------------------------------------------------- 随机实例

def make_oracle_instance(rng: np.random.Generator, n: int = 10, eps_psi: float = 1e-5) -> Tuple[InverseProblem, PenaltyModel]:
    """A = I + 小扰动，b 为白噪声的小规模无约束实例"""
    matrix = np.eye(n) + 0.01 * rng.standard_normal((n, n))
    operator = DenseOperator(matrix)
    u_true = rng.standard_normal(n)
    y = operator.apply(u_true)
    b = rng.standard_normal(n)
    problem = InverseProblem(name="oracle", operator=operator, u_true=u_true, y_clean=y, b=b,
                             delta=float(np.linalg.norm(b - y) / np.linalg.norm(y)), seed=0,
                             constraint=Constraint.UNCONSTRAINED)
    return problem, build_penalty_1d(n, eps_psi=eps_psi)


def _random_lambda(rng: np.random.Generator, p: int) -> LambdaVector:
    return LambdaVector(rng.uniform(0.01, 0.1, size=p))


def concavity_check(problem: InverseProblem, penalty: PenaltyModel, rng: np.random.Generator,
                    pairs: int = 5) -> OracleCheck:
    """F(½λ+½λ′) ≥ ½F(λ)+½F(λ′) − 1e-10"""
    worst = 0.0
    for _ in range(pairs):
        a = _random_lambda(rng, penalty.p)
        b = _random_lambda(rng, penalty.p)
        mid = a.combine(b, 0.5)
        f_mid, _ = value_function(problem, penalty, mid)
        f_a, _ = value_function(problem, penalty, a)
        f_b, _ = value_function(problem, penalty, b)
        worst = max(worst, 0.5 * (f_a + f_b) - f_mid)
    return OracleCheck(name="concavity", max_deviation=max(worst, 0.0), tolerance=1e-10,
                       passed=worst <= 1e-10, trials=pairs)


def stationarity_check(rng: np.random.Generator, trials: int = 20, max_p: int = 6) -> OracleCheck:
    """
    λ* = φ/(pψ) 处代理函数梯度为零

    括号项 2pψ_j − (φ + λᵀψ)/λ_j 相对 2pψ_j 的偏差；p ≤ 6 时连同前因子整体计算
    """
    worst = 0.0
    for _ in range(trials):
        p = int(rng.integers(1, max_p + 1))
        psi = np.exp(rng.uniform(-2, 2, size=p))
        phi = float(rng.uniform(0.1, 10.0))
        lam = phi / (p * psi)
        f = phi + lam @ psi
        bracket = 2 * p * psi - f / lam
        prefactor = f ** (2 * p - 1) / np.prod(lam)
        gradient = prefactor * bracket
        worst = max(worst, float(np.max(np.abs(gradient) / (prefactor * 2 * p * psi))))
    return OracleCheck(name="stationarity", max_deviation=worst, tolerance=STATIONARITY_TOLERANCE,
                       passed=worst <= STATIONARITY_TOLERANCE, trials=trials)


def surrogate_phi_check(rng: np.random.Generator, trials: int = 5) -> OracleCheck:
    """Q(λ,λ) 的缩放对数值等于直接计算的 ln Φ_p / p（p ≤ 5）"""
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 6))
        problem, penalty = make_oracle_instance(rng, n=n)
        lam = _random_lambda(rng, penalty.p)
        value, u = value_function(problem, penalty, lam)
        scaled = surrogate_scaled_log(value, lam)
        direct = np.log(phi_gamma(value, lam, float(lam.p))) / lam.p
        worst = max(worst, abs(scaled - direct) / max(abs(direct), 1.0))
    return OracleCheck(name="surrogate_matches_phi", max_deviation=worst, tolerance=SURROGATE_TOLERANCE,
                       passed=worst <= SURROGATE_TOLERANCE, trials=trials)


def coercivity_check(rng: np.random.Generator, trials: int = 5, factor: float = 1e6) -> OracleCheck:
    """
    强制性抽查（p ≤ 5），单个 λ_i 按 factor 缩放

    λ_i 缩小 factor 倍时 ln Φ_p 必须增大；放大 factor 倍时 Φ_p 不低于下界 ε^{2p}(max λ)^p
    """
    shortfall = 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 6))
        problem, penalty = make_oracle_instance(rng, n=n)
        lam = _random_lambda(rng, penalty.p)
        p = lam.p
        base_value, _ = value_function(problem, penalty, lam)
        base = log_phi_gamma(base_value, lam, float(p))
        i = int(rng.integers(0, p))

        shrunk = lam.values.copy()
        shrunk[i] /= factor
        shrunk = LambdaVector(shrunk)
        value, _ = value_function(problem, penalty, shrunk)
        shortfall = max(shortfall, base - log_phi_gamma(value, shrunk, float(p)))

        grown = lam.values.copy()
        grown[i] *= factor
        grown = LambdaVector(grown)
        value, _ = value_function(problem, penalty, grown)
        bound = 2 * p * np.log(penalty.eps_psi) + p * np.log(grown.values.max())
        shortfall = max(shortfall, bound - log_phi_gamma(value, grown, float(p)))
    shortfall = max(shortfall, 0.0)
    return OracleCheck(name="coercivity", max_deviation=shortfall, tolerance=0.0,
                       passed=shortfall == 0.0, trials=trials, details={"factor": factor})


def gamma_critical_point_check(rng: np.random.Generator, gamma: Optional[float] = None, n: int = 4,
                               warmup: int = 50) -> OracleCheck:
    """
    平衡原则不动点是 Φ_γ 的临界点（p ≤ 4）

    先做若干步不动点迭代 λ ← φ(u_λ)/(γψ(u_λ))，再在 log λ 上用 fsolve 精确求不动点；
    对 ln Φ_γ/p 做中心差分，检查无量纲梯度 λ_j ∂(ln Φ_γ/p)/∂λ_j
    """
    problem, penalty = make_oracle_instance(rng, n=n)
    gamma = float(gamma if gamma is not None else rng.uniform(0.5, 2.0 * penalty.p))

    def update(lam: LambdaVector) -> LambdaVector:
        _, u = value_function(problem, penalty, lam)
        return balancing_update(u, problem, penalty, gamma, NumeratorConvention.HALF_SQUARED_NORM)

    lam = _random_lambda(rng, penalty.p)
    for _ in range(warmup):
        lam = update(lam)

    def residual(log_lam: np.ndarray) -> np.ndarray:
        return log_lam - np.log(update(LambdaVector(np.exp(log_lam))).values)

    solution, info, status, message = fsolve(residual, np.log(lam.values), xtol=1e-13, full_output=True)
    iterations = int(info["nfev"])
    lam = LambdaVector(np.exp(solution))

    worst = 0.0
    for j in range(lam.p):
        step = 1e-6 * lam.values[j]
        plus = lam.values.copy()
        minus = lam.values.copy()
        plus[j] += step
        minus[j] -= step
        f_plus, _ = value_function(problem, penalty, LambdaVector(plus))
        f_minus, _ = value_function(problem, penalty, LambdaVector(minus))
        diff = (log_phi_gamma(f_plus, LambdaVector(plus), gamma)
                - log_phi_gamma(f_minus, LambdaVector(minus), gamma)) / (2.0 * step)
        worst = max(worst, abs(lam.values[j] * diff / lam.p))
    return OracleCheck(name="gamma_critical_point", max_deviation=worst, tolerance=GRADIENT_TOLERANCE,
                       passed=worst <= GRADIENT_TOLERANCE,
                       details={"gamma": gamma, "function_evaluations": iterations, "fsolve_status": int(status)})


def overflow_check(p: int = 6400) -> OracleCheck:
    """p = 6400、λ 跨 [1e-8, 1e4] 时对数域代理值有限，而直接形式 f^{2p} 溢出"""
    lam = LambdaVector(np.logspace(-8, 4, p))
    f = 1e3
    scaled = surrogate_scaled_log(f, lam)
    shifted = surrogate_scaled_log(f * 1.01, LambdaVector(lam.values * 1.01))
    with np.errstate(over="ignore"):
        direct = np.float64(f) ** (2 * p)
    finite = bool(np.isfinite(scaled) and np.isfinite(shifted))
    return OracleCheck(name="overflow", max_deviation=0.0 if finite else float("inf"), tolerance=0.0,
                       passed=finite, details={"p": p, "scaled_log": scaled, "direct_overflows": bool(not np.isfinite(direct))})


def bp_matches_ups_check(rng: np.random.Generator, trials: int = 5) -> OracleCheck:
    """γ = p 时平衡原则系统的解与 ½ 分子约定下的 ups_update 一致"""
    worst = 0.0
    config = MMConfig(numerator_convention=NumeratorConvention.HALF_SQUARED_NORM)
    for _ in range(trials):
        problem, penalty = make_oracle_instance(rng)
        _, u = value_function(problem, penalty, _random_lambda(rng, penalty.p))
        r = problem.operator.apply(u) - problem.b
        lam_bp = solve_bp_system(penalty_vector(penalty, u), 0.5 * float(r @ r), float(penalty.p))
        lam_ups = ups_update(u, problem, penalty, config)
        worst = max(worst, _relative_gap(lam_bp.values, lam_ups.values))
    return OracleCheck(name="bp_matches_ups", max_deviation=worst, tolerance=1e-12,
                       passed=worst <= 1e-12, trials=trials)


# ---------------------------------------------------------------- 汇总

def _guarded(name: str, tolerance: float, func) -> OracleCheck:
    try:
        return func()
    except Exception as exc:
        logger.error(f"校验 {name} 执行失败: {exc}", exc_info=True)
        return OracleCheck(name=name, max_deviation=float("inf"), tolerance=tolerance, passed=False,
                           details={"error": str(exc)})


def run_oracle_suite(seed: int = 0, trials: int = 50, max_p: int = 100) -> List[OracleCheck]:
    """
    运行全部校验

    Args:
        seed: 主随机种子
        trials: 随机试验次数（Sherman–Morrison、Cholesky、递推恒等式）
        max_p: 随机 p 的上限

    Returns:
        List[OracleCheck]
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    checks: List[OracleCheck] = []

    def sherman_morrison() -> OracleCheck:
        worst = 0.0
        for _ in range(trials):
            p = int(rng.integers(1, min(50, max_p) + 1))
            psi = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=p))
            phi = float(rng.uniform(0.1, 10.0))
            gamma = float(rng.uniform(0.5, 2.0 * p))
            sherman, closed, dense = _bp_paths(psi, phi, gamma)
            worst = max(worst, _relative_gap(sherman, closed), _relative_gap(dense, closed))
        return OracleCheck(name="sherman_morrison", max_deviation=worst, tolerance=BP_TOLERANCE,
                           passed=worst <= BP_TOLERANCE, trials=trials)

    def cholesky() -> OracleCheck:
        worst = 0.0
        for _ in range(trials):
            p = int(rng.integers(1, max_p + 1))
            psi = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=p))
            factor = cholesky_surrogate(psi)
            reference = np.linalg.cholesky(build_surrogate_hessian(psi))
            worst = max(worst, float(np.max(np.abs(factor.l_factor - reference)) / np.max(np.abs(reference))))
        return OracleCheck(name="cholesky", max_deviation=worst, tolerance=CHOLESKY_TOLERANCE,
                           passed=worst <= CHOLESKY_TOLERANCE, trials=trials)

    def identities() -> OracleCheck:
        ps = rng.integers(1, max_p + 1, size=trials)
        worst = max(check_recurrence_identities(int(p)) for p in ps)
        return OracleCheck(name="recurrence_identities", max_deviation=worst, tolerance=IDENTITY_TOLERANCE,
                           passed=worst <= IDENTITY_TOLERANCE, trials=trials)

    def sigma_bound() -> OracleCheck:
        worst = 0.0
        for p in range(3, max_p + 1):
            sigma, _ = sigma_z_sequences(p)
            worst = max(worst, float(np.max(np.sqrt(p) - sigma[2:])))
        worst = max(worst, 0.0)
        return OracleCheck(name="sigma_lower_bound", max_deviation=worst, tolerance=1e-12,
                           passed=worst <= 1e-12, trials=max(max_p - 2, 0))

    def gradient() -> OracleCheck:
        instances = max(1, trials // 10)
        worst = 0.0
        for _ in range(instances):
            problem, penalty = make_oracle_instance(rng)
            check = value_function_gradient_check(problem, penalty, _random_lambda(rng, penalty.p), rng=rng)
            worst = max(worst, check.max_deviation)
        return OracleCheck(name="value_gradient", max_deviation=worst, tolerance=GRADIENT_TOLERANCE,
                           passed=worst <= GRADIENT_TOLERANCE, trials=instances)

    def concavity() -> OracleCheck:
        problem, penalty = make_oracle_instance(rng)
        return concavity_check(problem, penalty, rng)

    suite = [
        ("sherman_morrison", BP_TOLERANCE, sherman_morrison),
        ("bp_matches_ups", 1e-12, lambda: bp_matches_ups_check(rng)),
        ("cholesky", CHOLESKY_TOLERANCE, cholesky),
        ("recurrence_identities", IDENTITY_TOLERANCE, identities),
        ("sigma_lower_bound", 1e-12, sigma_bound),
        ("value_gradient", GRADIENT_TOLERANCE, gradient),
        ("concavity", 1e-10, concavity),
        ("stationarity", STATIONARITY_TOLERANCE, lambda: stationarity_check(rng)),
        ("surrogate_matches_phi", SURROGATE_TOLERANCE, lambda: surrogate_phi_check(rng)),
        ("gamma_critical_point", GRADIENT_TOLERANCE, lambda: gamma_critical_point_check(rng)),
        ("coercivity", 0.0, lambda: coercivity_check(rng)),
        ("overflow", 0.0, overflow_check),
    ]
    for name, tolerance, func in suite:
        check = _guarded(name, tolerance, func)
        level = logging.INFO if check.passed else logging.WARNING
        logger.log(level, f"校验 {check.name}: 最大偏差 {check.max_deviation:.3e}, "
                          f"容差 {check.tolerance:.1e}, {'通过' if check.passed else '失败'}")
        checks.append(check)
    return checks
