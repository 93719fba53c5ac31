"""
gen 子命令：生成测试问题并写出问题目录
"""

import logging
from pathlib import Path
from typing import Optional

from ..data_loader import save_problem
from ..models.config import RunConfig
from ..services.testproblems import InverseProblem, make_problem

logger = logging.getLogger(__name__)


def build_problem(config: RunConfig) -> InverseProblem:
    """按配置生成测试问题（约束写入问题本身）"""
    return make_problem(config.problem, config.delta, config.seed, config.constraint, **config.sizes())


def cmd_gen(config: RunConfig, directory: Optional[Path] = None) -> Path:
    """
    生成问题目录

    Args:
        config: 运行配置
        directory: 目标目录，缺省为 output_dir/<problem_tag>

    Returns:
        Path: 写出的目录
    """
    directory = Path(directory) if directory else config.output_dir / config.problem_tag()
    problem = build_problem(config)
    try:
        return save_problem(problem, directory)
    except OSError as e:
        raise OSError(f"写入问题目录 {directory} 失败: {e}") from e
