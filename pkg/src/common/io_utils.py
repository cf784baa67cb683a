# -------------------------------------------------------------
# 文件输出工具: 固定格式的 CSV / JSON
# -------------------------------------------------------------
import json
import logging
import os
from numbers import Integral
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.common.settings import LabSettings

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    """CSV 单元格格式: 整数原样, 浮点 17 位有效数字"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (Integral, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return LabSettings.FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]],
              master_seed: Optional[int] = None, comments: Optional[Dict[str, Any]] = None) -> str:
    """
    写 CSV: UTF-8, '\\n' 行尾, 首行为 '# master_seed=...' 溯源注释, 随后是表头。
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if master_seed is not None:
            f.write(f"# master_seed={int(master_seed)}\n")
        for key, value in (comments or {}).items():
            f.write(f"# {key}={format_value(value)}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(format_value(v) for v in row) + "\n")
    logger.debug(f"wrote {path}")
    return path


def read_csv(path: str) -> Dict[str, Any]:
    """读回 write_csv 的输出 (测试与下游工具用)"""
    meta: Dict[str, str] = {}
    header: List[str] = []
    rows: List[List[str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif not header:
                header = line.split(",")
            elif line:
                rows.append(line.split(","))
    return {"meta": meta, "header": header, "rows": rows}


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: str, data: Any) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True, default=_json_default)
        f.write("\n")
    logger.debug(f"wrote {path}")
    return path
