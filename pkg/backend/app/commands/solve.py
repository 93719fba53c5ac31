"""
solve 子命令：运行 UPenMM / GUPenMM / 平衡原则 / Tikhonov 扫描，
写出 solution.csv、lambda.csv、trace.csv（及 trace.json）和 summary.json
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict

import numpy as np

from ..data_loader import (
    ensure_directory,
    load_problem,
    save_trace_csv,
    save_trace_json,
    save_vector,
    write_json,
)
from ..models.config import Algorithm, RunConfig
from ..models.lambda_vector import LambdaVector
from ..models.results import RunSummary
from ..services.mm import MMResult, run_balancing, run_gupenmm, run_upenmm
from ..services.operators import CSV_FLOAT_FORMAT
from ..services.penalties import PenaltyModel, build_penalty_1d, build_penalty_2d
from ..services.testproblems import InverseProblem
from ..services.tikhonov import tikhonov_sweep
from .gen import build_problem

logger = logging.getLogger(__name__)


def resolve_problem(config: RunConfig) -> InverseProblem:
    """problem_dir 优先，否则按配置生成；可行域始终取自配置"""
    if config.problem_dir:
        return load_problem(config.problem_dir).with_constraint(config.constraint)
    return build_problem(config)


def build_penalty(problem: InverseProblem, config: RunConfig) -> PenaltyModel:
    """一维问题用二阶差分惩罚，二维问题用二阶+一阶差分；L1 缺省只在二维启用"""
    use_l1 = config.l1 if config.l1 is not None else problem.grid_shape is not None
    if problem.grid_shape is not None:
        return build_penalty_2d(problem.grid_shape, config.eps_psi, l1=use_l1)
    return build_penalty_1d(problem.size, config.eps_psi, l1=use_l1)


def run_directory(config: RunConfig, problem: InverseProblem) -> Path:
    tag = f"{problem.name}-{config.algorithm.value}-{problem.constraint.value}-d{problem.delta:g}-s{problem.seed}"
    return config.output_dir / tag


def _run_mm(problem: InverseProblem, penalty: PenaltyModel, config: RunConfig) -> MMResult:
    mm_config = config.to_mm_config()
    if config.algorithm == Algorithm.GUPENMM:
        return run_gupenmm(problem, penalty, mm_config)
    if config.algorithm == Algorithm.BP:
        return run_balancing(problem, penalty, mm_config)
    return run_upenmm(problem, penalty, mm_config)


def _summary(problem: InverseProblem, config: RunConfig, u: np.ndarray, lam: LambdaVector,
             outer: int, inner: int, stop_reason: str, wall: float, **extra: Any) -> RunSummary:
    return RunSummary(
        problem=problem.name,
        algorithm=config.algorithm.value,
        constraint=problem.constraint.value,
        delta=problem.delta,
        seed=problem.seed,
        relative_error=problem.relative_error(u),
        outer_iterations=outer,
        inner_iterations=inner,
        residual_norm=problem.residual_norm(u),
        noise_norm=problem.noise_norm,
        stop_reason=stop_reason,
        lambda_min=float(lam.values.min()),
        lambda_max=float(lam.values.max()),
        wall_time_seconds=wall,
        **extra,
    )


def cmd_solve(config: RunConfig) -> RunSummary:
    """
    求解一个配置并写出结果文件

    Args:
        config: 运行配置

    Returns:
        RunSummary: 与 summary.json 内容一致
    """
    problem = resolve_problem(config)
    penalty = build_penalty(problem, config)
    out_dir = run_directory(config, problem)

    # 计时只覆盖外层循环
    if config.algorithm == Algorithm.TIKHONOV_SWEEP:
        start = time.perf_counter()
        sweep = tikhonov_sweep(problem, penalty, settings=config.to_mm_config().solver)
        wall = time.perf_counter() - start
        u = np.asarray(sweep.optimal_solution)
        lam = LambdaVector.uniform(penalty.p, sweep.optimal_lambda)
        summary = _summary(problem, config, u, lam, outer=0, inner=0,
                           stop_reason="grid", wall=wall, optimal_lambda=sweep.optimal_lambda)
        trace = None
    else:
        start = time.perf_counter()
        result = _run_mm(problem, penalty, config)
        wall = time.perf_counter() - start
        u, lam, trace = result.u, result.lam, result.trace
        summary = _summary(problem, config, u, lam, outer=result.outer_iterations,
                           inner=result.total_inner_iterations, stop_reason=result.stop_reason, wall=wall)
        sweep = None

    try:
        ensure_directory(out_dir)
        save_vector(out_dir / "solution.csv", u)
        save_vector(out_dir / "lambda.csv", lam.values)
        if sweep is not None:
            sweep.to_frame().to_csv(out_dir / "tikhonov.csv", index=False, float_format=CSV_FLOAT_FORMAT)
        if trace is not None and config.trace_verbosity >= 1:
            save_trace_csv(trace, out_dir / "trace.csv")
        if trace is not None and config.trace_verbosity >= 2:
            save_trace_json(trace, out_dir / "trace.json")
        write_json(out_dir / "summary.json", summary.model_dump(mode="json"))
    except OSError as e:
        raise OSError(f"写入结果目录 {out_dir} 失败: {e}") from e

    logger.info(
        f"{problem.name}/{config.algorithm.value}/{problem.constraint.value}: "
        f"相对误差 {summary.relative_error:.4e}, 外层 {summary.outer_iterations} 次, 结果写入 {out_dir}"
    )
    return summary


def solve_worker(config_data: Dict[str, Any]) -> Dict[str, Any]:
    """进程池入口：参数与返回值都是可序列化的字典"""
    summary = cmd_solve(RunConfig.model_validate(config_data))
    return summary.model_dump(mode="json")
