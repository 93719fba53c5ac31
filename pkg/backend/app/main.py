"""
命令行入口
子命令：gen（生成问题）、solve（求解）、sweep（批量扫描）、verify（数值校验）、report（绘图数据）

配置优先级：命令行参数 > --config 文件 > 缺省值
退出码：0 成功，1 求解/校验失败，2 参数错误
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from .commands.gen import cmd_gen
from .commands.report import cmd_report
from .commands.solve import cmd_solve
from .commands.sweep import cmd_sweep
from .commands.verify import cmd_verify
from .errors import InvalidParameterError, UpenError
from .models.config import (
    Algorithm,
    NumeratorConvention,
    ProblemName,
    RunConfig,
    SweepConfig,
    TildeDenominator,
    default_output_dir,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _choices(enum_cls) -> List[str]:
    return [member.value for member in enum_cls]


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """RunConfig 对应的参数，未给出时不出现在 Namespace 中"""
    add = parser.add_argument
    suppress = argparse.SUPPRESS
    add("--config", type=Path, default=None, help="KEY=value 格式的配置文件")
    add("--problem", choices=_choices(ProblemName), default=suppress, help="测试问题")
    for size in ("n1", "n2", "m1", "m2"):
        add(f"--{size}", type=int, default=suppress, help="2D问题尺寸")
    add("--delta", type=float, default=suppress, help="噪声水平")
    add("--seed", type=int, default=suppress, help="随机种子")
    add("--algorithm", choices=_choices(Algorithm), default=suppress, help="算法")
    add("--constraint", default=suppress, help="unconstrained 或 nonneg")
    add("--l1", action=argparse.BooleanOptionalAction, default=suppress, help="是否加入L1惩罚")
    add("--gamma", type=float, default=suppress, help="平衡原则参数γ")
    add("--tol-lambda", type=float, default=suppress, help="停止准则 Tol_λ")
    add("--k-max", type=int, default=suppress, help="最大外层迭代次数")
    add("--epsilon-backtrack", type=float, default=suppress, help="GUPenMM凸组合系数")
    add("--eps-psi", type=float, default=suppress, help="惩罚函数下界")
    add("--numerator-convention", choices=_choices(NumeratorConvention), default=suppress)
    add("--tilde-denominator", choices=_choices(TildeDenominator), default=suppress)
    add("--output-dir", type=Path, default=suppress, help="输出目录（缺省读取 UPEN_OUTPUT_DIR）")
    add("--problem-dir", type=Path, default=suppress, help="gen 生成的问题目录")
    add("--trace-verbosity", type=int, default=suppress, help="0/1/2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="upen", description="均匀多惩罚正则化求解器")
    parser.add_argument("--log-level", default=None, help="日志级别（缺省读取 UPEN_LOG_LEVEL）")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="生成测试问题目录")
    _add_run_arguments(gen)
    gen.add_argument("--dir", type=Path, default=None, help="目标目录")

    solve = sub.add_parser("solve", help="求解并写出结果")
    _add_run_arguments(solve)

    sweep = sub.add_parser("sweep", help="并行扫描多个配置")
    _add_run_arguments(sweep)
    sweep.add_argument("--problems", default="t1", help="逗号分隔的问题列表")
    sweep.add_argument("--algorithms", default="upenmm,gupenmm", help="逗号分隔的算法列表")
    sweep.add_argument("--constraints", default="unconstrained", help="逗号分隔的约束列表")
    sweep.add_argument("--seeds", default="0", help="种子列表，如 0-9 或 0,3,5")
    sweep.add_argument("--workers", type=int, default=None, help="进程数（缺省读取 UPEN_WORKERS）")

    verify = sub.add_parser("verify", help="运行数值校验")
    verify.add_argument("--seed", type=int, default=0, help="主随机种子")
    verify.add_argument("--trials", type=int, default=50, help="随机试验次数")
    verify.add_argument("--max-p", type=int, default=100, help="随机 p 的上限")
    verify.add_argument("--output-dir", type=Path, default=None, help="verify.json 输出目录")

    report = sub.add_parser("report", help="由轨迹生成绘图数据与汇总表")
    report.add_argument("runs", nargs="+", type=Path, help="运行目录或轨迹文件")
    report.add_argument("--out", type=Path, default=None, help="输出目录")
    return parser


def read_config_file(path: Optional[Path]) -> Dict[str, Any]:
    """读取 KEY=value 配置文件，键名与参数名一致（- 换成 _，大小写不敏感）"""
    if path is None:
        return {}
    if not Path(path).exists():
        raise InvalidParameterError(f"配置文件不存在: {path}")
    values = {key.strip().lower().replace("-", "_"): value for key, value in dotenv_values(path).items()}
    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise InvalidParameterError(f"配置文件 {path} 含有未知键: {unknown}")
    return {key: value for key, value in values.items() if value is not None and value != ""}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    data = read_config_file(getattr(args, "config", None))
    data.update({key: value for key, value in vars(args).items() if key in RunConfig.model_fields})
    return RunConfig.model_validate(data)


def parse_seeds(text: str) -> List[int]:
    """解析 “0-9” 或 “0,3,5”"""
    seeds: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise InvalidParameterError(f"无法解析种子列表: {text}")
    if not seeds:
        raise InvalidParameterError("种子列表为空")
    return seeds


def _split(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def build_sweep_config(args: argparse.Namespace) -> SweepConfig:
    data: Dict[str, Any] = {
        "base": build_run_config(args),
        "problems": _split(args.problems),
        "algorithms": _split(args.algorithms),
        "constraints": ["nonneg" if c in ("nonnegative", "+") else c for c in _split(args.constraints)],
        "seeds": parse_seeds(args.seeds),
    }
    if args.workers is not None:
        data["workers"] = args.workers
    return SweepConfig.model_validate(data)


def configure_logging(level: Optional[str]) -> None:
    level = (level or os.environ.get("UPEN_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )


def dispatch(args: argparse.Namespace) -> tuple:
    """执行子命令，返回 (结果字典, 退出码)"""
    if args.command == "gen":
        directory = cmd_gen(build_run_config(args), args.dir)
        return {"problem_dir": str(directory)}, EXIT_OK
    if args.command == "solve":
        return cmd_solve(build_run_config(args)).model_dump(mode="json"), EXIT_OK
    if args.command == "sweep":
        result = cmd_sweep(build_sweep_config(args))
        return result, EXIT_OK if result["failed"] == 0 else EXIT_FAILURE
    if args.command == "verify":
        output_dir = args.output_dir or default_output_dir()
        result = cmd_verify(seed=args.seed, trials=args.trials, max_p=args.max_p, output_dir=output_dir)
        return result, EXIT_OK if result["passed"] else EXIT_FAILURE
    if args.command == "report":
        out = args.out or default_output_dir() / "report"
        written = cmd_report(args.runs, out)
        return {"files": [str(p) for p in written]}, EXIT_OK
    raise InvalidParameterError(f"未知子命令: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)

    try:
        result, code = dispatch(args)
    except (ValidationError, InvalidParameterError) as e:
        print(f"\n[参数错误] {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UpenError, OSError) as e:
        logger.error(f"{args.command} 失败: {e}")
        print(f"\n[错误] {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} 发生未预期的错误: {e}", exc_info=True)
        print(f"\n[错误] {e}", file=sys.stderr)
        return EXIT_FAILURE

    print("\n=== JSON RESULT ===")
    print(json.dumps(result, ensure_ascii=False))
    return code


if __name__ == "__main__":
    sys.exit(main())
