"""
测试问题生成
一维：T1（heat）、T2、T3（高斯模糊）；二维：IR-CPMG 弛豫反演（K2⊗K1）
生成器是 (尺寸, delta, seed) 的纯函数，重复调用逐位一致
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from ..errors import DegenerateProblemError, InvalidParameterError
from ..models.config import Constraint, ProblemName
from .operators import (
    DenseOperator,
    KroneckerOperator,
    LinearOperator,
    build_gaussian_blur,
    build_heat,
)

logger = logging.getLogger(__name__)

BLUR_SIGMA = 5.0
T2_SIZE = 404
T3_SIZE = 504

# 二维弛豫网格（秒）
TIME_RANGE = (1e-3, 3.0)
RELAXATION_RANGE = (1e-2, 10.0)
# (log10 T1 中心, log10 T2 中心, 幅值, 宽度/十倍程)
NMR_PEAKS = (
    (-1.0, np.log10(0.05), 1.0, 0.15),
    (0.0, np.log10(0.5), 0.6, 0.2),
)


@dataclass(frozen=True)
class InverseProblem:
    """线性反问题 b = A·u* + e"""
    name: str
    operator: LinearOperator
    u_true: np.ndarray
    y_clean: np.ndarray
    b: np.ndarray
    delta: float
    seed: int
    constraint: Constraint = Constraint.UNCONSTRAINED
    grid_shape: Optional[Tuple[int, int]] = None

    @property
    def size(self) -> int:
        return self.operator.cols

    @property
    def noise_norm(self) -> float:
        """δ‖y‖"""
        return float(self.delta * np.linalg.norm(self.y_clean))

    def relative_error(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(u - self.u_true) / np.linalg.norm(self.u_true))

    def residual_norm(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(self.operator.apply(u) - self.b))

    def with_constraint(self, constraint: Constraint) -> "InverseProblem":
        return replace(self, constraint=Constraint(constraint))


def add_noise(y: np.ndarray, delta: float, seed: int) -> np.ndarray:
    """
    加性高斯噪声 b = y + δ·η·‖y‖

    η 由 PCG64(seed) 生成的标准正态向量归一化得到，因此 ‖b−y‖ = δ‖y‖

    Args:
        y: 无噪声数据
        delta: 噪声水平 δ ≥ 0
        seed: 随机种子

    Returns:
        np.ndarray: 含噪数据 b
    """
    if delta < 0:
        raise InvalidParameterError(f"噪声水平不能为负: {delta}")
    y = np.asarray(y, dtype=float)
    y_norm = np.linalg.norm(y)
    if y_norm == 0:
        raise DegenerateProblemError("数据为零向量，噪声尺度无定义")
    if delta == 0:
        return y.copy()

    rng = np.random.Generator(np.random.PCG64(seed))
    eta = rng.standard_normal(y.size)
    eta /= np.linalg.norm(eta)
    return y + delta * y_norm * eta


def _assemble(name: str, operator: LinearOperator, u_true: np.ndarray, delta: float, seed: int,
              constraint: Constraint, grid_shape=None) -> InverseProblem:
    u_true = np.array(u_true, dtype=float)
    u_true.setflags(write=False)
    y = operator.apply(u_true)
    b = add_noise(y, delta, seed)
    y.setflags(write=False)
    b.setflags(write=False)
    logger.debug(f"生成问题 {name}: N={operator.cols}, M={operator.rows}, delta={delta}, seed={seed}")
    return InverseProblem(
        name=name,
        operator=operator,
        u_true=u_true,
        y_clean=y,
        b=b,
        delta=float(delta),
        seed=int(seed),
        constraint=Constraint(constraint),
        grid_shape=grid_shape,
    )


def _gaussian(x: np.ndarray, center: float, width: float, amplitude: float) -> np.ndarray:
    return amplitude * np.exp(-((x - center) ** 2) / (2.0 * width ** 2))


def _cosine_bump(x: np.ndarray, center: float, halfwidth: float, amplitude: float) -> np.ndarray:
    """紧支撑 cos² 圆顶"""
    out = np.zeros_like(x)
    inside = np.abs(x - center) < halfwidth
    out[inside] = amplitude * np.cos(np.pi * (x[inside] - center) / (2.0 * halfwidth)) ** 2
    return out


def t2_signal(n: int = T2_SIZE) -> np.ndarray:
    """两个窄峰 + 平坦区域 + 一个平滑圆顶"""
    x = np.arange(n, dtype=float)
    return (
        _gaussian(x, 100.0, 2.0, 1.0)
        + _gaussian(x, 150.0, 2.0, 0.8)
        + _cosine_bump(x, 290.0, 40.0, 0.6)
    )


def t3_signal(n: int = T3_SIZE) -> np.ndarray:
    """平滑圆顶 + 窄峰 + [340, 440] 上升至 0.8 的线性斜坡，x > 440 处直接截断为零"""
    x = np.arange(n, dtype=float)
    u = _cosine_bump(x, 110.0, 45.0, 0.7) + _gaussian(x, 250.0, 2.0, 1.0)
    ramp = (x >= 340) & (x <= 440)
    u[ramp] += 0.8 * (x[ramp] - 340.0) / 100.0
    return u


def make_t1(delta: float, seed: int, constraint: Constraint = Constraint.UNCONSTRAINED) -> InverseProblem:
    operator, u_true = build_heat(100)
    return _assemble(ProblemName.T1.value, operator, u_true, delta, seed, constraint)


def make_t2(delta: float, seed: int, constraint: Constraint = Constraint.UNCONSTRAINED) -> InverseProblem:
    operator = build_gaussian_blur(T2_SIZE, BLUR_SIGMA)
    return _assemble(ProblemName.T2.value, operator, t2_signal(), delta, seed, constraint)


def make_t3(delta: float, seed: int, constraint: Constraint = Constraint.UNCONSTRAINED) -> InverseProblem:
    operator = build_gaussian_blur(T3_SIZE, BLUR_SIGMA)
    return _assemble(ProblemName.T3.value, operator, t3_signal(), delta, seed, constraint)


def nmr_grids(n1: int, n2: int, m1: int, m2: int):
    """返回 (t1, t2, T1, T2)，均为对数等距"""
    t1 = np.logspace(np.log10(TIME_RANGE[0]), np.log10(TIME_RANGE[1]), m1)
    t2 = np.logspace(np.log10(TIME_RANGE[0]), np.log10(TIME_RANGE[1]), m2)
    relax1 = np.logspace(np.log10(RELAXATION_RANGE[0]), np.log10(RELAXATION_RANGE[1]), n1)
    relax2 = np.logspace(np.log10(RELAXATION_RANGE[0]), np.log10(RELAXATION_RANGE[1]), n2)
    return t1, t2, relax1, relax2


def nmr_distribution(relax1: np.ndarray, relax2: np.ndarray) -> np.ndarray:
    """(T1,T2) 网格上两个高斯峰之和，返回 n1×n2 矩阵"""
    log1 = np.log10(relax1)[:, None]
    log2 = np.log10(relax2)[None, :]
    dist = np.zeros((relax1.size, relax2.size))
    for c1, c2, amplitude, width in NMR_PEAKS:
        dist += amplitude * np.exp(-((log1 - c1) ** 2 + (log2 - c2) ** 2) / (2.0 * width ** 2))
    return dist


def make_nmr2d(n1: int = 16, n2: int = 16, m1: int = 32, m2: int = 64,
               delta: float = 0.01, seed: int = 0,
               constraint: Constraint = Constraint.NONNEGATIVE) -> InverseProblem:
    """
    二维 IR-CPMG 弛豫问题

    K1[i,j] = 1 − 2exp(−t1_i/T1_j)（反转恢复），K2[i,j] = exp(−t2_i/T2_j)（CPMG 衰减），
    前向算子 K2⊗K1 作用于列优先展开的 n1×n2 分布
    """
    if min(n1, n2, m1, m2) < 2:
        raise InvalidParameterError("二维问题各维度至少为2")
    t1, t2, relax1, relax2 = nmr_grids(n1, n2, m1, m2)
    k1 = DenseOperator(1.0 - 2.0 * np.exp(-t1[:, None] / relax1[None, :]))
    k2 = DenseOperator(np.exp(-t2[:, None] / relax2[None, :]))
    u_true = nmr_distribution(relax1, relax2).reshape(-1, order="F")
    return _assemble(ProblemName.NMR2D.value, KroneckerOperator(k1, k2), u_true,
                     delta, seed, constraint, grid_shape=(n1, n2))


def make_problem(name, delta: float, seed: int, constraint: Optional[Constraint] = None,
                 **sizes) -> InverseProblem:
    """按名称生成测试问题，constraint 为 None 时沿用生成器默认值"""
    name = ProblemName(name)
    if name == ProblemName.NMR2D:
        problem = make_nmr2d(delta=delta, seed=seed, **sizes)
    else:
        factory = {ProblemName.T1: make_t1, ProblemName.T2: make_t2, ProblemName.T3: make_t3}[name]
        problem = factory(delta, seed)
    if constraint is not None:
        problem = problem.with_constraint(constraint)
    return problem
