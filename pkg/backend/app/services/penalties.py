"""
惩罚函数模块
ψ_i(u) = (Lu)_i² + ε，可选全局 L1 项 ψ_{N+1} = ‖u‖₁，
以及最大值滤波推广 ψ̃（一维三点窗口 / 二维 3×3 窗口）
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.ndimage import maximum_filter, maximum_filter1d

from ..errors import DimensionMismatchError, InvalidParameterError
from .operators import DifferenceOperator, build_grid_difference

logger = logging.getLogger(__name__)

TILDE_MODES = ("max_filter", "identity")


@dataclass(frozen=True)
class PenaltyModel:
    """
    惩罚模型

    l_ops: 二阶差分算子（一维一个，二维沿两个方向各一个）
    p_ops: 一阶中心差分算子（仅二维 ψ̃ 使用）
    tilde_mode: "max_filter" 为最大值滤波，"identity" 令 ψ̃ ≡ ψ
    """
    l_ops: Tuple[DifferenceOperator, ...]
    p_ops: Tuple[DifferenceOperator, ...] = ()
    eps_psi: float = 1e-6
    l1_enabled: bool = False
    grid_shape: Tuple[int, ...] = field(default=())
    tilde_mode: str = "max_filter"

    def __post_init__(self):
        if not self.l_ops:
            raise InvalidParameterError("至少需要一个二阶差分算子")
        if not self.eps_psi > 0:
            raise InvalidParameterError(f"eps_psi 必须为正: {self.eps_psi}")
        if self.tilde_mode not in TILDE_MODES:
            raise InvalidParameterError(f"未知 ψ̃ 模式: {self.tilde_mode}")
        if not self.grid_shape:
            object.__setattr__(self, "grid_shape", (self.l_ops[0].size,))

    @property
    def n(self) -> int:
        return self.l_ops[0].size

    @property
    def p(self) -> int:
        """惩罚项个数"""
        return self.n + (1 if self.l1_enabled else 0)

    @property
    def is_2d(self) -> bool:
        return len(self.grid_shape) == 2

    def with_tilde_mode(self, mode: str) -> "PenaltyModel":
        return PenaltyModel(self.l_ops, self.p_ops, self.eps_psi, self.l1_enabled, self.grid_shape, mode)


def build_penalty_1d(n: int, eps_psi: float = 1e-6, l1: bool = False) -> PenaltyModel:
    return PenaltyModel(
        l_ops=(build_grid_difference((n,), "second", 0),),
        eps_psi=eps_psi,
        l1_enabled=l1,
        grid_shape=(n,),
    )


def build_penalty_2d(grid_shape: Tuple[int, int], eps_psi: float = 1e-6, l1: bool = True) -> PenaltyModel:
    """二维网格上的惩罚：两个方向的二阶差分与一阶中心差分"""
    shape = tuple(int(s) for s in grid_shape)
    if len(shape) != 2:
        raise InvalidParameterError(f"二维惩罚需要二维网格，实际 {shape}")
    return PenaltyModel(
        l_ops=tuple(build_grid_difference(shape, "second", axis) for axis in (0, 1)),
        p_ops=tuple(build_grid_difference(shape, "first", axis) for axis in (0, 1)),
        eps_psi=eps_psi,
        l1_enabled=l1,
        grid_shape=shape,
    )


def _check_length(model: PenaltyModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size != model.n:
        raise DimensionMismatchError(model.n, int(u.size), "惩罚函数输入")
    return u


def _squared_magnitude(ops, u: np.ndarray) -> np.ndarray:
    """各方向差分平方之和"""
    out = np.zeros(u.size)
    for op in ops:
        out += op.apply(u) ** 2
    return out


def eval_psi(model: PenaltyModel, u) -> np.ndarray:
    """
    惩罚向量 ψ(u)

    ψ_i = Σ_k (L_k u)_i² + ε，i = 1..N；启用 L1 时追加 ψ_{N+1} = ‖u‖₁（不加下界）
    """
    u = _check_length(model, u)
    psi = _squared_magnitude(model.l_ops, u) + model.eps_psi
    if model.l1_enabled:
        psi = np.append(psi, np.abs(u).sum())
    return psi


def penalty_vector(model: PenaltyModel, u) -> np.ndarray:
    """λ 更新和代理函数使用的 ψ：L1 项加 ε 防止除零"""
    psi = eval_psi(model, u)
    if model.l1_enabled:
        psi[-1] += model.eps_psi
    return psi


def local_psi(model: PenaltyModel, u) -> np.ndarray:
    """不含 L1 项的 ψ_1..ψ_N"""
    return eval_psi(model, u)[: model.n]


def max_filter_1d(values: np.ndarray) -> np.ndarray:
    """周期边界的三点滑动最大值"""
    return maximum_filter1d(np.asarray(values, dtype=float), size=3, mode="wrap")


def eval_psi_tilde_1d(model: PenaltyModel, u) -> np.ndarray:
    """ψ̃_i = max{ψ_{i−1}, ψ_i, ψ_{i+1}}（周期）"""
    psi = local_psi(model, u)
    if model.tilde_mode == "identity":
        return psi
    return max_filter_1d(psi)


def eval_psi_tilde_2d(model: PenaltyModel, u) -> np.ndarray:
    """
    二维最大值滤波 ψ̃

    ψ̃_i = max_{3×3}(Lu)² + max_{3×3}(Pu)² + ε，两个方向的平方先求和再取窗口最大值

    Args:
        model: 二维惩罚模型
        u: 列优先展开的 n1×n2 分布

    Returns:
        np.ndarray: 长度 N 的 ψ̃
    """
    if not model.is_2d:
        raise InvalidParameterError(f"网格形状 {model.grid_shape} 不是二维")
    u = _check_length(model, u)
    if model.tilde_mode == "identity":
        return local_psi(model, u)

    shape = model.grid_shape
    l_mag = _squared_magnitude(model.l_ops, u).reshape(shape, order="F")
    p_mag = _squared_magnitude(model.p_ops, u).reshape(shape, order="F")
    tilde = (
        maximum_filter(l_mag, size=3, mode="wrap")
        + maximum_filter(p_mag, size=3, mode="wrap")
        + model.eps_psi
    )
    return tilde.reshape(-1, order="F")


def eval_psi_tilde(model: PenaltyModel, u) -> np.ndarray:
    if model.is_2d:
        return eval_psi_tilde_2d(model, u)
    return eval_psi_tilde_1d(model, u)


def penalty_hessian(model: PenaltyModel, weights) -> np.ndarray:
    """稠密 2·Σ_k L_kᵀ diag(w) L_k，w 为前 N 个 λ"""
    w = np.asarray(weights, dtype=float)[: model.n]
    hess = np.zeros((model.n, model.n))
    for op in model.l_ops:
        mat = op.materialize()
        hess += mat.T @ (w[:, None] * mat)
    return 2.0 * hess


def apply_penalty_hessian(model: PenaltyModel, weights, v) -> np.ndarray:
    """矩阵无关形式的 2·Σ_k L_kᵀ diag(w) L_k v"""
    w = np.asarray(weights, dtype=float)[: model.n]
    out = np.zeros(model.n)
    for op in model.l_ops:
        out += op.adjoint(w * op.apply(v))
    return 2.0 * out


def smooth_penalty_value(model: PenaltyModel, weights, u) -> float:
    """Σ_{i≤N} w_i ψ_i(u)（含 ε）"""
    w = np.asarray(weights, dtype=float)[: model.n]
    return float(w @ local_psi(model, u))


def smooth_penalty_gradient(model: PenaltyModel, weights, u) -> np.ndarray:
    """∇ Σ_{i≤N} w_i ψ_i(u) = 2·Σ_k L_kᵀ diag(w) L_k u"""
    return apply_penalty_hessian(model, weights, u)
