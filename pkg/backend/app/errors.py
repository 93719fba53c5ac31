"""
统一异常定义
各异常同时继承对应的内置异常（ValueError / RuntimeError），调用方按内置类型捕获同样有效
"""

from typing import Optional


class UpenError(Exception):
    """本项目所有异常的基类"""


class InvalidParameterError(UpenError, ValueError):
    """参数不满足前置条件"""


class DimensionMismatchError(UpenError, ValueError):
    """向量长度与算子维度不一致"""

    def __init__(self, expected: int, actual: int, what: str = "输入向量"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}维度不匹配: 期望 {expected}, 实际 {actual}")


class DegenerateProblemError(UpenError, ValueError):
    """问题退化（例如初始残差为零，噪声尺度无定义）"""


class FactorizationError(UpenError, RuntimeError):
    """对称正定分解失败，携带最小主元"""

    def __init__(self, message: str, smallest_pivot: float):
        self.smallest_pivot = float(smallest_pivot)
        super().__init__(f"{message} (最小主元 {self.smallest_pivot:.3e})")


class NonFiniteObjectiveError(UpenError, RuntimeError):
    """目标函数出现 NaN/Inf，通常意味着 λ 尺度异常"""


class OracleMismatchError(UpenError, RuntimeError):
    """两条独立计算路径结果不一致"""


class SolverFailure(UpenError, RuntimeError):
    """外层迭代中子问题求解失败，携带外层迭代序号"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        prefix = f"第 {iteration} 次外层迭代: " if iteration is not None else ""
        super().__init__(f"{prefix}{message}")


class TraceFormatError(UpenError, ValueError):
    """轨迹文件格式错误，携带出错行号"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        suffix = f" (第 {row} 行)" if row is not None else ""
        super().__init__(f"{message}{suffix}")
