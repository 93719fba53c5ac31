import json
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import List, Dict, Any, Optional
import pandas as pd

TRACE_COLUMNS = [
    "iteration",
    "relative_error",
    "residual_norm",
    "surrogate",
    "surrogate_next",
    "inner_iterations",
    "backtracks",
    "fallback",
]


class IterationRecord(BaseModel):
    iteration: int = Field(..., description="外层迭代序号k")
    relative_error: float = Field(..., description="‖u−u*‖/‖u*‖")
    residual_norm: float = Field(..., description="‖Au−b‖")
    surrogate: float = Field(..., description="缩放对数代理值 Q(λ^(k),λ^(k))")
    surrogate_next: float = Field(..., description="缩放对数代理值 Q(λ^(k+1),λ^(k))")
    inner_iterations: int = Field(..., description="内层迭代次数")
    backtracks: int = Field(0, description="凸组合回溯次数 j")
    fallback: bool = Field(False, description="是否因回溯超限回退到 λ̂")
    lambda_snapshot: Optional[List[float]] = Field(None, description="λ^(k+1) 快照")


class ConvergenceTrace(BaseModel):
    records: List[IterationRecord] = Field(default_factory=list, description="逐次外层迭代记录")
    noise_norm: Optional[float] = Field(None, description="噪声范数 δ‖y‖")

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.records]

    @property
    def total_inner_iterations(self) -> int:
        return int(sum(r.inner_iterations for r in self.records))

    def to_frame(self) -> pd.DataFrame:
        """每行一次外层迭代（不含λ快照）"""
        rows = [r.model_dump(exclude={"lambda_snapshot"}) for r in self.records]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def to_csv(self, path, float_format: str = "%.17g") -> None:
        self.to_frame().to_csv(path, index=False, float_format=float_format)

    def to_json(self) -> str:
        """完整轨迹（含λ快照），键排序"""
        return json.dumps(self.model_dump(), sort_keys=True, indent=2, ensure_ascii=False)


class RunSummary(BaseModel):
    problem: str
    algorithm: str
    constraint: str
    delta: float
    seed: int
    relative_error: float = Field(..., description="最终相对误差")
    outer_iterations: int = Field(..., description="外层迭代次数")
    inner_iterations: int = Field(..., description="内层迭代总数")
    residual_norm: float = Field(..., description="最终残差范数")
    noise_norm: float = Field(..., description="噪声范数 δ‖y‖")
    stop_reason: str = Field(..., description="停止原因")
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    optimal_lambda: Optional[float] = Field(None, description="Tikhonov扫描的最优λ")
    wall_time_seconds: float = Field(..., description="外层循环墙钟时间，唯一不可复现的字段")


class TikhonovSweepResult(BaseModel):
    constraint: str
    lambdas: List[float] = Field(..., description="λ网格")
    relative_errors: List[float] = Field(..., description="各λ对应相对误差")
    optimal_lambda: float
    optimal_error: float
    optimal_solution: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _optimum_is_minimum(self) -> "TikhonovSweepResult":
        if len(self.lambdas) != len(self.relative_errors):
            raise ValueError("λ网格与误差数量不一致")
        if self.relative_errors and self.optimal_error != min(self.relative_errors):
            raise ValueError("最优误差必须等于网格上的最小误差")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lambda": self.lambdas, "relative_error": self.relative_errors})


class OracleCheck(BaseModel):
    name: str = Field(..., description="检查名称")
    max_deviation: float = Field(..., description="最大偏差")
    tolerance: float = Field(..., description="容差")
    passed: bool
    trials: int = Field(1, description="随机试验次数")
    details: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("passed", mode="before")
    @classmethod
    def _plain_bool(cls, v):
        return bool(v)

    @field_validator("max_deviation", "tolerance", mode="before")
    @classmethod
    def _plain_float(cls, v):
        return float(v)
