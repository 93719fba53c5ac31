"""
report 子命令：把轨迹转成绘图数据文件，并汇总成 markdown 表格
所有输出先在内存中算好，任何输入出错都不会留下半截文件
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..data_loader import ensure_directory, load_trace, load_vector, read_json
from ..errors import TraceFormatError
from ..models.results import ConvergenceTrace, RunSummary
from ..services.operators import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

METHOD_LABELS = {
    "tikhonov-sweep": "L2",
    "upenmm": "UPenMM",
    "gupenmm": "GUPenMM",
    "bp": "BP",
}
METHOD_ORDER = ["L2", "UPenMM", "GUPenMM", "BP"]


def method_label(algorithm: str, constraint: str) -> str:
    """表格行名，非负约束加 “+”"""
    label = METHOD_LABELS.get(algorithm, algorithm)
    return label + "+" if constraint == "nonneg" else label


def plot_frames(trace: ConvergenceTrace, lam: Optional[np.ndarray] = None) -> Dict[str, pd.DataFrame]:
    """
    生成绘图数据

    Returns:
        Dict[str, DataFrame]: relative_error / residual（带噪声范数参考线）/ surrogate / lambda
    """
    if len(trace) == 0:
        raise TraceFormatError("轨迹为空，无法生成绘图数据")
    iterations = trace.column("iteration")
    frames = {
        "relative_error": pd.DataFrame({"iteration": iterations,
                                        "relative_error": trace.column("relative_error")}),
        "residual": pd.DataFrame({"iteration": iterations, "residual_norm": trace.column("residual_norm")}),
        "surrogate": pd.DataFrame({"iteration": iterations, "surrogate": trace.column("surrogate")}),
    }
    if trace.noise_norm is not None:
        frames["residual"]["noise_norm"] = float(trace.noise_norm)
    if lam is not None:
        frames["lambda"] = pd.DataFrame({"index": np.arange(len(lam)), "lambda": np.asarray(lam, dtype=float)})
    return frames


def markdown_table(summaries: Sequence[RunSummary]) -> str:
    """
    行为方法（L2, UPenMM, GUPenMM 及其非负版本），列为各测试问题的相对误差与迭代数，
    多个种子取中位数
    """
    if not summaries:
        return ""
    df = pd.DataFrame([s.model_dump() for s in summaries])
    df["method"] = [method_label(a, c) for a, c in zip(df["algorithm"], df["constraint"])]
    grouped = df.groupby(["method", "problem"]).agg(
        relative_error=("relative_error", "median"),
        outer_iterations=("outer_iterations", "median"),
        runs=("seed", "count"),
    )
    problems = sorted(df["problem"].unique())
    methods = [m + s for s in ("", "+") for m in METHOD_ORDER if (m + s) in set(df["method"])]
    methods += sorted(set(df["method"]) - set(methods))

    header = "| method | " + " | ".join(f"{p.upper()} err | {p.upper()} it" for p in problems) + " |"
    rule = "|---|" + "---|---|" * len(problems)
    lines = [header, rule]
    for method in methods:
        cells = []
        for problem in problems:
            if (method, problem) in grouped.index:
                row = grouped.loc[(method, problem)]
                cells += [f"{row['relative_error']:.4e}", f"{row['outer_iterations']:g}"]
            else:
                cells += ["-", "-"]
        lines.append(f"| {method} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _read_run(source: Path):
    """运行目录或单个轨迹文件 → (名称, 轨迹, λ, 摘要)"""
    if source.is_dir():
        run_dir = source
        trace_path = run_dir / "trace.csv"
        if not trace_path.exists() and (run_dir / "trace.json").exists():
            trace_path = run_dir / "trace.json"
    else:
        run_dir = source.parent
        trace_path = source

    summary = None
    if (run_dir / "summary.json").exists():
        summary = RunSummary.model_validate(read_json(run_dir / "summary.json"))
    trace = load_trace(trace_path, noise_norm=summary.noise_norm if summary else None)
    lam = load_vector(run_dir / "lambda.csv") if (run_dir / "lambda.csv").exists() else None
    return run_dir.name, trace, lam, summary


def cmd_report(sources: Iterable[Path], output_dir: Path) -> List[Path]:
    """
    生成绘图数据文件与汇总表

    Args:
        sources: 运行目录或轨迹文件
        output_dir: 输出目录

    Returns:
        List[Path]: 写出的文件
    """
    pending: Dict[str, pd.DataFrame] = {}
    summaries: List[RunSummary] = []
    for source in sources:
        source = Path(source)
        if not source.exists():
            raise FileNotFoundError(f"未找到运行结果: {source}")
        name, trace, lam, summary = _read_run(source)
        for kind, frame in plot_frames(trace, lam).items():
            pending[f"{name}_{kind}.csv"] = frame
        if summary is not None:
            summaries.append(summary)

    if not pending:
        raise TraceFormatError("没有可用的轨迹输入")

    output_dir = ensure_directory(output_dir)
    written = []
    for filename, frame in sorted(pending.items()):
        path = output_dir / filename
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        written.append(path)
    table = markdown_table(summaries)
    if table:
        path = output_dir / "table.md"
        path.write_text(table, encoding="utf-8")
        written.append(path)
    logger.info(f"报告已写入 {output_dir}: {len(written)} 个文件")
    return written
