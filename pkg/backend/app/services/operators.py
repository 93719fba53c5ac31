"""
线性算子模块
前向模型 A、二阶差分 L、一阶中心差分 P 以及可分离核的 Kronecker 积 K2⊗K1
所有算子构造后不可变，可在线程间共享
"""

import math
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import toeplitz

from ..errors import DimensionMismatchError, InvalidParameterError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


class LinearOperator:
    """线性算子基类：子类实现 _apply / _adjoint"""

    def __init__(self, rows: int, cols: int):
        self.rows = int(rows)
        self.cols = int(cols)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @staticmethod
    def _as_vector(v, n: int, what: str) -> np.ndarray:
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 1 or arr.size != n:
            raise DimensionMismatchError(n, int(arr.size), what)
        return arr

    def apply(self, x) -> np.ndarray:
        """返回 A·x"""
        return self._apply(self._as_vector(x, self.cols, "apply 输入"))

    def adjoint(self, y) -> np.ndarray:
        """返回 Aᵀ·y"""
        return self._adjoint(self._as_vector(y, self.rows, "adjoint 输入"))

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        """逐列作用于单位向量得到稠密矩阵"""
        out = np.empty((self.rows, self.cols))
        e = np.zeros(self.cols)
        for j in range(self.cols):
            e[j] = 1.0
            out[:, j] = self._apply(e)
            e[j] = 0.0
        return out

    def gram(self) -> np.ndarray:
        """稠密 AᵀA"""
        m = self.materialize()
        return m.T @ m

    def to_csv(self, path: Union[str, Path]) -> None:
        """导出为稠密CSV（每行一行矩阵），便于与外部工具交叉验证"""
        pd.DataFrame(self.materialize()).to_csv(
            path, header=False, index=False, float_format=CSV_FLOAT_FORMAT
        )


class DenseOperator(LinearOperator):
    """稠密矩阵算子，要求 M ≥ N"""

    def __init__(self, matrix):
        mat = np.array(matrix, dtype=float)
        if mat.ndim != 2:
            raise InvalidParameterError("稠密算子需要二维矩阵")
        if mat.shape[0] < mat.shape[1]:
            raise InvalidParameterError(f"要求 M ≥ N，实际形状 {mat.shape}")
        mat.setflags(write=False)
        self.matrix = mat
        super().__init__(*mat.shape)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ y

    def materialize(self) -> np.ndarray:
        return np.array(self.matrix)

    def gram(self) -> np.ndarray:
        return self.matrix.T @ self.matrix


class KroneckerOperator(LinearOperator):
    """
    可分离核 K2⊗K1，作用于按列优先向量化的 N1×N2 分布

    (K2⊗K1)·vec(U) = vec(K1·U·K2ᵀ)，apply/adjoint 从不构造完整矩阵
    """

    def __init__(self, k1: DenseOperator, k2: DenseOperator):
        self.k1 = k1
        self.k2 = k2
        super().__init__(k1.rows * k2.rows, k1.cols * k2.cols)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.k1.cols, self.k2.cols

    def _apply(self, x: np.ndarray) -> np.ndarray:
        u = x.reshape(self.grid_shape, order="F")
        return (self.k1.matrix @ u @ self.k2.matrix.T).reshape(-1, order="F")

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        v = y.reshape((self.k1.rows, self.k2.rows), order="F")
        return (self.k1.matrix.T @ v @ self.k2.matrix).reshape(-1, order="F")

    def materialize(self) -> np.ndarray:
        return np.kron(self.k2.matrix, self.k1.matrix)

    def gram(self) -> np.ndarray:
        return np.kron(self.k2.gram(), self.k1.gram())


class DifferenceOperator(LinearOperator):
    """
    周期边界差分算子

    order="second": (u_{i-1} − 2u_i + u_{i+1})，首行 (−2, 1, 0, …, 0, 1)
    order="first":  (u_{i+1} − u_{i-1})/2
    grid_shape 为多维时沿 axis 方向差分（向量按列优先展开）
    """

    ORDERS = ("second", "first")

    def __init__(self, size: int, order: str = "second",
                 grid_shape: Optional[Tuple[int, ...]] = None, axis: int = 0):
        if order not in self.ORDERS:
            raise InvalidParameterError(f"未知差分阶数: {order}")
        shape = tuple(int(s) for s in (grid_shape or (size,)))
        if int(np.prod(shape)) != int(size):
            raise InvalidParameterError(f"网格形状 {shape} 与维度 {size} 不一致")
        if not 0 <= axis < len(shape):
            raise InvalidParameterError(f"差分方向 axis={axis} 超出网格维数")
        if shape[axis] < 3:
            raise InvalidParameterError(f"差分方向长度至少为3，实际 {shape[axis]}")
        self.size = int(size)
        self.order = order
        self.grid_shape = shape
        self.axis = axis
        self.boundary = "periodic"
        super().__init__(size, size)

    def _stencil(self, x: np.ndarray, sign: float = 1.0) -> np.ndarray:
        v = x.reshape(self.grid_shape, order="F")
        prev = np.roll(v, 1, axis=self.axis)
        nxt = np.roll(v, -1, axis=self.axis)
        if self.order == "second":
            out = prev - 2.0 * v + nxt
        else:
            out = sign * 0.5 * (nxt - prev)
        return out.reshape(-1, order="F")

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return self._stencil(x)

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        # 二阶差分对称，一阶中心差分反对称
        return self._stencil(y, sign=-1.0)


def identity(n: int) -> DenseOperator:
    return DenseOperator(np.eye(int(n)))


def build_second_diff(n: int) -> DifferenceOperator:
    """一维周期二阶差分 L（n ≥ 3）"""
    if n < 3:
        raise InvalidParameterError(f"二阶差分要求 n ≥ 3，实际 {n}")
    return DifferenceOperator(n, "second")


def build_first_diff(n: int) -> DifferenceOperator:
    """一维周期一阶中心差分 P（n ≥ 3）"""
    if n < 3:
        raise InvalidParameterError(f"一阶差分要求 n ≥ 3，实际 {n}")
    return DifferenceOperator(n, "first")


def build_grid_difference(grid_shape: Tuple[int, ...], order: str, axis: int) -> DifferenceOperator:
    size = int(np.prod(grid_shape))
    return DifferenceOperator(size, order, grid_shape=tuple(grid_shape), axis=axis)


def build_gaussian_blur(n: int, sigma: float, kernel_halfwidth: Optional[int] = None) -> DenseOperator:
    """
    高斯模糊矩阵

    每行是以对角元为中心、截断于 kernel_halfwidth 的归一化离散高斯核；
    边界处截断的质量直接丢弃（不重新归一化），矩阵保持 Toeplitz 带状结构

    Args:
        n: 信号长度
        sigma: 标准差（样本单位）
        kernel_halfwidth: 截断半宽，缺省 ceil(4σ)

    Returns:
        DenseOperator: n×n 对称 Toeplitz 矩阵
    """
    if n < 1:
        raise InvalidParameterError(f"信号长度必须为正，实际 {n}")
    if not sigma > 0:
        raise InvalidParameterError(f"sigma 必须为正，实际 {sigma}")
    hw = int(math.ceil(4.0 * sigma)) if kernel_halfwidth is None else int(kernel_halfwidth)
    if hw < 0:
        raise InvalidParameterError(f"kernel_halfwidth 不能为负，实际 {hw}")

    offsets = np.arange(hw + 1, dtype=float)
    g = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    g /= g[0] + 2.0 * g[1:].sum()

    column = np.zeros(n)
    keep = min(hw + 1, n)
    column[:keep] = g[:keep]
    return DenseOperator(toeplitz(column))


def build_heat(n: int, kappa: float = 1.0) -> Tuple[DenseOperator, np.ndarray]:
    """
    第一类 Volterra 热传导方程的中点求积离散（Regularization Tools 的 heat 约定）

    核 h(t) = t^{-3/2}/(2κ√π)·exp(−1/(4κ²t))，[0,1] 上均匀网格中点求积，
    矩阵为下三角 Toeplitz；参考解在前半段有单峰，后半段为零

    Returns:
        (DenseOperator, u_true)
    """
    if n < 2:
        raise InvalidParameterError(f"heat 问题要求 n ≥ 2，实际 {n}")
    if not kappa > 0:
        raise InvalidParameterError(f"kappa 必须为正，实际 {kappa}")

    h = 1.0 / n
    t = (np.arange(n) + 0.5) * h
    c = h / (2.0 * kappa * math.sqrt(math.pi))
    d = 1.0 / (4.0 * kappa ** 2)
    k = c * t ** (-1.5) * np.exp(-d / t)
    first_row = np.zeros(n)
    first_row[0] = k[0]
    matrix = toeplitz(k, first_row)

    u_true = np.zeros(n)
    for i in range(1, n // 2 + 1):
        ti = i * 20.0 / n
        if ti < 2:
            u_true[i - 1] = 0.75 * ti ** 2 / 4.0
        elif ti < 3:
            u_true[i - 1] = 0.75 + (ti - 2.0) * (3.0 - ti)
        else:
            u_true[i - 1] = 0.75 * math.exp(-(ti - 3.0) * 2.0)

    logger.debug(f"构造 heat 问题: n={n}, kappa={kappa}")
    return DenseOperator(matrix), u_true
