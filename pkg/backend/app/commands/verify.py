"""
verify 子命令：运行全部数值校验，打印结果表并写出 JSON 报告
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..data_loader import ensure_directory, write_json
from ..models.results import OracleCheck
from ..services.oracle import run_oracle_suite

logger = logging.getLogger(__name__)


def format_table(checks: List[OracleCheck]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check'.ljust(width)}  {'max deviation':>14}  {'tolerance':>10}  result"]
    for c in checks:
        lines.append(f"{c.name.ljust(width)}  {c.max_deviation:>14.3e}  {c.tolerance:>10.1e}  "
                     f"{'PASS' if c.passed else 'FAIL'}")
    return "\n".join(lines)


def cmd_verify(seed: int = 0, trials: int = 50, max_p: int = 100,
               output_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    运行校验套件

    Args:
        seed: 主随机种子
        trials: 随机试验次数
        max_p: 随机 p 的上限
        output_dir: 写出 verify.json 的目录，None 时不写文件

    Returns:
        dict: passed 为全部通过与否，checks 为各项结果
    """
    start = time.perf_counter()
    checks = run_oracle_suite(seed=seed, trials=trials, max_p=max_p)
    elapsed = time.perf_counter() - start
    print(format_table(checks))

    report = {
        "seed": seed,
        "trials": trials,
        "max_p": max_p,
        "passed": all(c.passed for c in checks),
        "elapsed_seconds": elapsed,
        "checks": [c.model_dump(mode="json") for c in checks],
    }
    if output_dir is not None:
        path = ensure_directory(output_dir) / "verify.json"
        write_json(path, report)
        report["report_path"] = str(path)
    logger.info(f"校验完成，用时 {elapsed:.1f}s，{'全部通过' if report['passed'] else '存在失败项'}")
    return report
