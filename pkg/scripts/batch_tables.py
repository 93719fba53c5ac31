#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
批量复现对比表
低噪声（delta=0.01, Tol_λ=1e-2）：L2 / UPenMM / GUPenMM 及其非负版本，T1–T3
高噪声（delta=0.1, Tol_λ=1e-5）：非负约束下 L2+ 与 GUPenMM+
每个配置跑 10 个种子，输出中位数与 “GUPenMM 优于对照” 的种子计数
"""

import json
import logging
import sys
from pathlib import Path

import pandas as pd

# 在 Windows 上强制使用 UTF-8 编码输出
if sys.platform == 'win32':
    if hasattr(sys.stdout, 'reconfigure'):
        sys.stdout.reconfigure(encoding='utf-8', errors='replace')
    if hasattr(sys.stderr, 'reconfigure'):
        sys.stderr.reconfigure(encoding='utf-8', errors='replace')

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from backend.app.commands.report import markdown_table, method_label  # noqa: E402
from backend.app.commands.sweep import run_sweep  # noqa: E402
from backend.app.models.config import RunConfig, SweepConfig  # noqa: E402
from backend.app.models.results import RunSummary  # noqa: E402


def ordering_counts(frame: pd.DataFrame, better: str, baseline: str) -> dict:
    """每个问题上 better 的相对误差严格小于 baseline 的种子数"""
    counts = {}
    for problem, group in frame.groupby("problem"):
        pivot = group.pivot_table(index="seed", columns="method", values="relative_error")
        if better in pivot and baseline in pivot:
            counts[problem] = int((pivot[better] < pivot[baseline]).sum())
    return counts


def run_table(delta: float, tol_lambda: float, algorithms, constraints, seeds, output_dir: Path,
              workers: int = None) -> pd.DataFrame:
    base = RunConfig(delta=delta, tol_lambda=tol_lambda, output_dir=output_dir, trace_verbosity=0)
    data = {"base": base, "problems": ["t1", "t2", "t3"], "algorithms": algorithms,
            "constraints": constraints, "seeds": list(seeds)}
    if workers:
        data["workers"] = workers
    results = run_sweep(SweepConfig.model_validate(data))
    frame = pd.DataFrame(results)
    frame["method"] = [method_label(a, c) for a, c in zip(frame["algorithm"], frame["constraint"])]
    table = markdown_table([RunSummary.model_validate(r) for r in results])
    (output_dir / "table.md").write_text(table, encoding="utf-8")
    frame.to_csv(output_dir / "runs.csv", index=False)
    print(table)
    return frame


def batch_tables(seeds: int = 10, output_dir: Path = None, workers: int = None) -> dict:
    """
    生成两张对比表

    Args:
        seeds: 种子个数（0..seeds-1）
        output_dir: 输出目录，缺省为 runs/tables
        workers: 进程数

    Returns:
        dict: 中位数与排序计数
    """
    output_dir = Path(output_dir or PROJECT_ROOT / "runs" / "tables")
    low_dir = output_dir / "low_noise"
    high_dir = output_dir / "high_noise"
    low_dir.mkdir(parents=True, exist_ok=True)
    high_dir.mkdir(parents=True, exist_ok=True)

    print(f"[对比表] 低噪声 delta=0.01，{seeds} 个种子")
    low = run_table(0.01, 1e-2, ["tikhonov-sweep", "upenmm", "gupenmm"], ["unconstrained", "nonneg"],
                    range(seeds), low_dir, workers)
    print(f"[对比表] 高噪声 delta=0.1，{seeds} 个种子")
    high = run_table(0.1, 1e-5, ["tikhonov-sweep", "gupenmm"], ["nonneg"], range(seeds), high_dir, workers)

    return {
        "seeds": seeds,
        "medians": {name: {f"{m}/{p}": float(v) for (m, p), v in
                           frame.groupby(["method", "problem"])["relative_error"].median().items()}
                    for name, frame in (("low_noise", low), ("high_noise", high))},
        "gupenmm_beats_upenmm": ordering_counts(low, "GUPenMM", "UPenMM"),
        "gupenmm_plus_beats_upenmm_plus": ordering_counts(low, "GUPenMM+", "UPenMM+"),
        "gupenmm_plus_beats_l2_plus_high_noise": ordering_counts(high, "GUPenMM+", "L2+"),
    }


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description='批量复现低/高噪声对比表')
    parser.add_argument('--seeds', type=int, default=10, help='种子个数')
    parser.add_argument('--output-dir', type=str, help='输出目录')
    parser.add_argument('--workers', type=int, help='进程数')
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    try:
        result = batch_tables(seeds=args.seeds, output_dir=args.output_dir, workers=args.workers)
        print("\n=== JSON RESULT ===")
        print(json.dumps(result, ensure_ascii=False))
        sys.exit(0)
    except Exception as e:
        print(f"\n[错误] {e}", file=sys.stderr)
        sys.exit(1)
