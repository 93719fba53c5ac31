"""
数据读写模块
问题目录（矩阵/向量 CSV + manifest.json）、解向量、收敛轨迹的持久化，
加载的问题按目录缓存
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import InvalidParameterError, TraceFormatError
from .models.config import Constraint
from .models.results import TRACE_COLUMNS, ConvergenceTrace, IterationRecord
from .services.operators import CSV_FLOAT_FORMAT, DenseOperator, KroneckerOperator
from .services.testproblems import InverseProblem

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# 超过该元素数时不导出完整矩阵（Kronecker 问题仍有 k1/k2）
MATRIX_CSV_LIMIT = 4_000_000


def write_json(path: PathLike, data: Dict[str, Any]) -> None:
    """按键排序写出 JSON，同样输入得到逐字节相同的文件"""
    try:
        Path(path).write_text(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                              encoding="utf-8")
    except OSError as e:
        logger.error(f"写入 {path} 失败: {e}")
        raise


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"未找到文件: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def save_vector(path: PathLike, values) -> None:
    pd.DataFrame(np.asarray(values, dtype=float).reshape(-1, 1)).to_csv(
        path, header=False, index=False, float_format=CSV_FLOAT_FORMAT
    )


def load_vector(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"未找到向量文件: {path}")
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float).reshape(-1)


def load_matrix(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"未找到矩阵文件: {path}")
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)


class ProblemStore:
    """问题目录读写器"""

    def __init__(self):
        self.cache: Dict[Tuple[str, Optional[str]], InverseProblem] = {}

    def save(self, problem: InverseProblem, directory: PathLike) -> Path:
        """
        写出问题目录

        Args:
            problem: 测试问题
            directory: 目标目录（不存在时创建）

        Returns:
            Path: 目录路径
        """
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"无法创建问题目录 {directory}: {e}")
            raise

        op = problem.operator
        files = ["u_true.csv", "y.csv", "b.csv"]
        if isinstance(op, KroneckerOperator):
            op.k1.to_csv(directory / "k1.csv")
            op.k2.to_csv(directory / "k2.csv")
            files += ["k1.csv", "k2.csv"]
        if op.rows * op.cols <= MATRIX_CSV_LIMIT:
            op.to_csv(directory / "matrix.csv")
            files.append("matrix.csv")
        else:
            logger.warning(f"矩阵 {op.rows}×{op.cols} 过大，不导出 matrix.csv")

        save_vector(directory / "u_true.csv", problem.u_true)
        save_vector(directory / "y.csv", problem.y_clean)
        save_vector(directory / "b.csv", problem.b)

        y_norm = float(np.linalg.norm(problem.y_clean))
        sizes = {"N": op.cols, "M": op.rows}
        if isinstance(op, KroneckerOperator):
            sizes.update({"n1": op.k1.cols, "n2": op.k2.cols, "m1": op.k1.rows, "m2": op.k2.rows})
        manifest = {
            "name": problem.name,
            "operator": "kronecker" if isinstance(op, KroneckerOperator) else "dense",
            "sizes": sizes,
            "delta": problem.delta,
            "seed": problem.seed,
            "constraint": problem.constraint.value,
            "noise_norm": problem.noise_norm,
            "noise_ratio": float(np.linalg.norm(problem.b - problem.y_clean) / y_norm),
            "grid_shape": list(problem.grid_shape) if problem.grid_shape else None,
            "files": sorted(files),
        }
        write_json(directory / "manifest.json", manifest)
        logger.info(f"问题 {problem.name} 已写入 {directory}")
        return directory

    def load(self, directory: PathLike) -> InverseProblem:
        """读取问题目录，按绝对路径与清单指纹缓存，目录被重写后自动重新读取"""
        directory = Path(directory)
        cache_key = (str(directory.resolve()), self._fingerprint(directory))
        if cache_key[1] is not None and cache_key in self.cache:
            logger.info(f"从缓存加载问题: {directory}")
            return self.cache[cache_key]

        manifest = read_json(directory / "manifest.json")
        if manifest.get("operator") == "kronecker":
            operator = KroneckerOperator(DenseOperator(load_matrix(directory / "k1.csv")),
                                         DenseOperator(load_matrix(directory / "k2.csv")))
        else:
            operator = DenseOperator(load_matrix(directory / "matrix.csv"))

        u_true = load_vector(directory / "u_true.csv")
        y = load_vector(directory / "y.csv")
        b = load_vector(directory / "b.csv")
        self._validate(manifest, operator, u_true, y, b, directory)

        grid = manifest.get("grid_shape")
        problem = InverseProblem(
            name=manifest["name"],
            operator=operator,
            u_true=u_true,
            y_clean=y,
            b=b,
            delta=float(manifest["delta"]),
            seed=int(manifest["seed"]),
            constraint=Constraint(manifest.get("constraint", Constraint.UNCONSTRAINED.value)),
            grid_shape=tuple(grid) if grid else None,
        )
        self.cache[cache_key] = problem
        logger.info(f"成功加载问题 {problem.name}: N={operator.cols}, M={operator.rows}")
        return problem

    @staticmethod
    def _fingerprint(directory: Path) -> Optional[str]:
        """manifest.json 内容与各数据文件 mtime 的 SHA-256，清单不存在时为 None"""
        manifest_path = directory / "manifest.json"
        if not manifest_path.is_file():
            return None
        digest = hashlib.sha256(manifest_path.read_bytes())
        for path in sorted(directory.glob("*.csv")):
            digest.update(f"{path.name}:{path.stat().st_mtime_ns}".encode())
        return digest.hexdigest()

    def _validate(
self, manifest, operator, u_true, y, b, directory: Path) -> None:
        """检查维度与噪声恒等式"""
        if u_true.size != operator.cols:
            raise InvalidParameterError(f"{directory}: u_true 长度 {u_true.size} 与 N={operator.cols} 不符")
        if y.size != operator.rows or b.size != operator.rows:
            raise InvalidParameterError(f"{directory}: 数据长度与 M={operator.rows} 不符")
        ratio = float(np.linalg.norm(b - y) / np.linalg.norm(y))
        if abs(ratio - float(manifest["delta"])) > 1e-8 * max(1.0, float(manifest["delta"])):
            logger.warning(f"{directory}: ‖b−y‖/‖y‖={ratio:.6g} 与 delta={manifest['delta']} 不一致")

    def clear_cache(self):
        self.cache.clear()
        logger.info("问题缓存已清空")


def save_trace_csv(trace: ConvergenceTrace, path: PathLike) -> None:
    trace.to_csv(path, float_format=CSV_FLOAT_FORMAT)


def save_trace_json(trace: ConvergenceTrace, path: PathLike) -> None:
    try:
        Path(path).write_text(trace.to_json() + "\n", encoding="utf-8")
    except OSError as e:
        logger.error(f"写入轨迹 {path} 失败: {e}")
        raise


def _records_from_rows(rows) -> ConvergenceTrace:
    trace = ConvergenceTrace()
    for i, row in enumerate(rows, start=1):
        try:
            trace.append(IterationRecord.model_validate(row))
        except ValidationError as e:
            raise TraceFormatError(f"轨迹记录无效: {e.errors()[0]['msg']}", row=i) from e
    return trace


def load_trace(path: PathLike, noise_norm: Optional[float] = None) -> ConvergenceTrace:
    """
    读取轨迹文件（CSV 或 JSON）

    Raises:
        TraceFormatError: 缺列、空轨迹或某行无法解析（携带行号）
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"未找到轨迹文件: {path}")

    if path.suffix.lower() == ".json":
        data = read_json(path)
        if not isinstance(data, dict) or "records" not in data:
            raise TraceFormatError(f"{path} 不是轨迹 JSON")
        trace = _records_from_rows(data["records"])
        trace.noise_norm = data.get("noise_norm", noise_norm)
    else:
        try:
            df = pd.read_csv(path, float_precision="round_trip")
        except pd.errors.EmptyDataError:
            raise TraceFormatError(f"{path} 为空")
        missing = [c for c in TRACE_COLUMNS if c not in df.columns]
        if missing:
            raise TraceFormatError(f"{path} 缺少列: {missing}", row=0)
        rows = df[TRACE_COLUMNS].astype(object).where(df[TRACE_COLUMNS].notna(), None).to_dict("records")
        trace = _records_from_rows(rows)
        trace.noise_norm = noise_norm

    if len(trace) == 0:
        raise TraceFormatError(f"{path} 中没有任何迭代记录")
    return trace


def ensure_directory(path: PathLike) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


# 全局问题读写器实例
problem_store = ProblemStore()


def save_problem(problem: InverseProblem, directory: PathLike) -> Path:
    """便捷函数：写出问题目录"""
    return problem_store.save(problem, directory)


def load_problem(directory: PathLike) -> InverseProblem:
    """便捷函数：读取问题目录"""
    return problem_store.load(directory)
