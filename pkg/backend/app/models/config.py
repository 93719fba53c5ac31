from pydantic import BaseModel, Field, field_validator, model_validator
from typing import List, Optional, Dict, Any
from pathlib import Path
from enum import Enum
import os


class Constraint(str, Enum):
    UNCONSTRAINED = "unconstrained"
    NONNEGATIVE = "nonneg"


class NumeratorConvention(str, Enum):
    SQUARED_NORM = "squared_norm"
    HALF_SQUARED_NORM = "half_squared_norm"


class TildeDenominator(str, Enum):
    LITERAL = "literal"
    SCALED_L1 = "scaled_l1"
    UNIFORM = "uniform"


class Algorithm(str, Enum):
    UPENMM = "upenmm"
    GUPENMM = "gupenmm"
    TIKHONOV_SWEEP = "tikhonov-sweep"
    BP = "bp"


class ProblemName(str, Enum):
    T1 = "t1"
    T2 = "t2"
    T3 = "t3"
    NMR2D = "nmr2d"


def default_output_dir() -> Path:
    return Path(os.environ.get("UPEN_OUTPUT_DIR", "runs"))


class SolverSettings(BaseModel):
    newton_tol: float = Field(1e-8, gt=0, description="Newton投影法：投影梯度相对容差")
    newton_max_iter: int = Field(500, ge=1, description="Newton投影法最大迭代次数")
    armijo_sigma: float = Field(1e-4, gt=0, lt=1, description="Armijo充分下降系数")
    armijo_beta: float = Field(0.5, gt=0, lt=1, description="回溯缩减因子")
    active_eps_scale: float = Field(1e-12, ge=0, description="有效集阈值 ε_a = active_eps_scale·‖b‖")
    fista_tol: float = Field(1e-6, gt=0, description="FISTA：目标函数相对变化容差")
    fista_max_iter: int = Field(2000, ge=1, description="FISTA每次外层迭代的最大内层迭代数")
    power_iterations: int = Field(20, ge=1, description="Lipschitz常数幂迭代次数")
    lipschitz_margin: float = Field(1.05, ge=1.0, description="Lipschitz估计的安全系数")


class MMConfig(BaseModel):
    gamma: Optional[float] = Field(None, gt=0, description="平衡原则参数γ，缺省为p（均匀惩罚系统）")
    tol_lambda: float = Field(1e-2, gt=0, lt=1, description="停止准则 Tol_λ")
    k_max: int = Field(500, ge=1, description="最大外层迭代次数")
    epsilon_backtrack: float = Field(0.9, gt=0, lt=1, description="GUPenMM凸组合系数 ε")
    use_generalized: bool = Field(False, description="是否使用GUPenMM")
    numerator_convention: NumeratorConvention = Field(
        NumeratorConvention.HALF_SQUARED_NORM, description="λ更新分子：½‖Au−b‖²（与子问题数据项一致）或 ‖Au−b‖²"
    )
    tilde_denominator: TildeDenominator = Field(
        TildeDenominator.SCALED_L1, description="λ̃ 的分母约定：局部项 N，L1 项 literal 为 1、scaled_l1 为 p；uniform 全部为 p"
    )
    backtrack_cap: int = Field(60, ge=0, description="凸组合回溯上限，超过后回退到 λ̂")
    descent_slack: float = Field(1e-10, ge=0, description="下降检验在缩放对数单位下的容差")
    zero_residual: float = Field(1e-30, ge=0, description="残差平方低于该值时终止")
    snapshot_stride: int = Field(0, ge=0, description="每隔多少次外层迭代记录一次λ快照，0表示不记录")
    solver: SolverSettings = Field(default_factory=SolverSettings, description="内层求解器参数")


class RunConfig(BaseModel):
    problem: ProblemName = Field(ProblemName.T1, description="测试问题")
    n1: int = Field(16, ge=2, description="2D分布第一维（T1）")
    n2: int = Field(16, ge=2, description="2D分布第二维（T2）")
    m1: int = Field(32, ge=2, description="反转恢复采样点数")
    m2: int = Field(64, ge=2, description="CPMG采样点数")
    delta: float = Field(0.01, ge=0, description="噪声水平 δ")
    seed: int = Field(0, ge=0, description="随机种子")
    algorithm: Algorithm = Field(Algorithm.UPENMM, description="算法")
    constraint: Constraint = Field(Constraint.UNCONSTRAINED, description="可行域")
    l1: Optional[bool] = Field(None, description="是否加入全局L1惩罚，缺省时仅2D问题启用")
    gamma: Optional[float] = Field(None, gt=0, description="平衡原则参数γ（bp算法）")
    tol_lambda: Optional[float] = Field(None, gt=0, lt=1, description="Tol_λ，缺省按噪声水平选择")
    k_max: int = Field(500, ge=1, description="最大外层迭代次数")
    epsilon_backtrack: float = Field(0.9, gt=0, lt=1, description="GUPenMM凸组合系数")
    eps_psi: float = Field(1e-6, gt=0, description="惩罚函数下界 ε")
    numerator_convention: NumeratorConvention = Field(NumeratorConvention.HALF_SQUARED_NORM)
    tilde_denominator: TildeDenominator = Field(TildeDenominator.SCALED_L1)
    output_dir: Path = Field(default_factory=default_output_dir, description="输出目录")
    problem_dir: Optional[Path] = Field(None, description="从gen生成的问题目录加载")
    trace_verbosity: int = Field(1, ge=0, le=2, description="0不写轨迹，1写CSV，2再写含λ快照的JSON")

    @field_validator("constraint", mode="before")
    @classmethod
    def _constraint_alias(cls, v):
        if isinstance(v, str) and v.lower() in ("nonnegative", "nonneg", "+"):
            return Constraint.NONNEGATIVE
        return v

    @model_validator(mode="after")
    def _check_combination(self) -> "RunConfig":
        if self.algorithm == Algorithm.BP and self.gamma is None:
            raise ValueError("bp 算法必须指定 gamma")
        if self.algorithm == Algorithm.TIKHONOV_SWEEP and self.use_l1:
            raise ValueError("Tikhonov 扫描不支持 L1 惩罚")
        if self.problem == ProblemName.NMR2D and (self.m1 < self.n1 or self.m2 < self.n2):
            raise ValueError("2D核要求 m1 ≥ n1 且 m2 ≥ n2")
        return self

    @property
    def use_l1(self) -> bool:
        if self.l1 is None:
            return self.problem == ProblemName.NMR2D
        return self.l1

    @property
    def effective_tol_lambda(self) -> float:
        # 低噪声 1e-2，高噪声 1e-5
        if self.tol_lambda is not None:
            return self.tol_lambda
        return 1e-2 if self.delta < 0.05 else 1e-5

    def sizes(self) -> Dict[str, int]:
        if self.problem == ProblemName.NMR2D:
            return {"n1": self.n1, "n2": self.n2, "m1": self.m1, "m2": self.m2}
        return {}

    def run_tag(self) -> str:
        return f"{self.problem.value}-{self.algorithm.value}-{self.constraint.value}-d{self.delta:g}-s{self.seed}"

    def problem_tag(self) -> str:
        return f"{self.problem.value}-d{self.delta:g}-s{self.seed}"

    def to_mm_config(self) -> MMConfig:
        return MMConfig(
            gamma=self.gamma,
            tol_lambda=self.effective_tol_lambda,
            k_max=self.k_max,
            epsilon_backtrack=self.epsilon_backtrack,
            use_generalized=self.algorithm == Algorithm.GUPENMM,
            numerator_convention=self.numerator_convention,
            tilde_denominator=self.tilde_denominator,
            snapshot_stride=1 if self.trace_verbosity >= 2 else 0,
        )


class SweepConfig(BaseModel):
    base: RunConfig = Field(default_factory=RunConfig, description="公共参数")
    problems: List[ProblemName] = Field(default_factory=lambda: [ProblemName.T1])
    algorithms: List[Algorithm] = Field(default_factory=lambda: [Algorithm.UPENMM, Algorithm.GUPENMM])
    constraints: List[Constraint] = Field(default_factory=lambda: [Constraint.UNCONSTRAINED])
    seeds: List[int] = Field(default_factory=lambda: [0])
    workers: int = Field(default_factory=lambda: int(os.environ.get("UPEN_WORKERS", "4")), ge=1)

    def expand(self) -> List[RunConfig]:
        """展开为独立运行配置（问题 × 算法 × 约束 × 种子）"""
        base: Dict[str, Any] = self.base.model_dump()
        runs: List[RunConfig] = []
        for problem in self.problems:
            for algorithm in self.algorithms:
                for constraint in self.constraints:
                    for seed in self.seeds:
                        data = dict(base, problem=problem, algorithm=algorithm,
                                    constraint=constraint, seed=seed)
                        runs.append(RunConfig.model_validate(data))
        return runs
