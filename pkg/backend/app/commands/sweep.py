"""
sweep 子命令：问题 × 算法 × 约束 × 种子 的笛卡尔积，每个配置一个独立进程
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from ..data_loader import ensure_directory
from ..models.config import SweepConfig
from ..models.results import RunSummary
from ..services.operators import CSV_FLOAT_FORMAT
from .report import markdown_table
from .solve import solve_worker

logger = logging.getLogger(__name__)


def run_sweep(config: SweepConfig) -> List[Dict[str, Any]]:
    """
    并行运行所有配置

    Returns:
        List[dict]: 成功运行的摘要，按 (problem, algorithm, constraint, seed) 排序
    """
    runs = config.expand()
    logger.info(f"扫描共 {len(runs)} 个配置，{config.workers} 个进程")
    results: List[Dict[str, Any]] = []
    failures = 0
    with ProcessPoolExecutor(max_workers=config.workers) as executor:
        futures = {executor.submit(solve_worker, run.model_dump(mode="json")): run for run in runs}
        for future in as_completed(futures):
            run = futures[future]
            try:
                results.append(future.result())
            except Exception as e:
                failures += 1
                logger.error(f"配置 {run.run_tag()} 失败: {e}")
    if failures:
        logger.warning(f"{failures} 个配置运行失败")
    results.sort(key=lambda r: (r["problem"], r["algorithm"], r["constraint"], r["seed"]))
    return results


def cmd_sweep(config: SweepConfig) -> Dict[str, Any]:
    """运行扫描并写出 sweep.csv 与 sweep.md"""
    results = run_sweep(config)
    out_dir = ensure_directory(Path(config.base.output_dir))
    expected = len(config.expand())
    if results:
        frame = pd.DataFrame(results)
        frame.to_csv(out_dir / "sweep.csv", index=False, float_format=CSV_FLOAT_FORMAT)
        table = markdown_table([RunSummary.model_validate(r) for r in results])
        (out_dir / "sweep.md").write_text(table, encoding="utf-8")
    return {
        "runs": expected,
        "succeeded": len(results),
        "failed": expected - len(results),
        "output_dir": str(out_dir),
    }
