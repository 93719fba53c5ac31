"""
正则化参数向量 λ
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import InvalidParameterError


@dataclass(frozen=True)
class LambdaVector:
    """p 个非负正则化参数；参与代理函数计算时必须严格为正"""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if arr.size == 0:
            raise InvalidParameterError("λ 向量不能为空")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("λ 含有非有限值")
        if np.any(arr < 0):
            raise InvalidParameterError("λ 含有负值")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, p: int, value: float) -> "LambdaVector":
        return cls(np.full(int(p), float(value)))

    @property
    def p(self) -> int:
        return int(self.values.size)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def log_prod(self) -> float:
        """Σ log λ_i，对数域下的 ∏λ_i，避免 p 很大时溢出"""
        if not self.is_positive:
            raise InvalidParameterError("λ 必须严格为正才能取对数")
        return float(np.sum(np.log(self.values)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def combine(self, other: "LambdaVector", weight: float) -> "LambdaVector":
        """凸组合 weight·self + (1−weight)·other"""
        return LambdaVector(weight * self.values + (1.0 - weight) * other.values)

    def to_list(self) -> List[float]:
        return [float(v) for v in self.values]
