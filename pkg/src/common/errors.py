# -------------------------------------------------------------
# 异常层次 (Exception hierarchy)
# -------------------------------------------------------------
from typing import Optional


class LabError(Exception):
    """所有实验室异常的基类"""


class ConfigError(LabError):
    """配置文件校验失败，消息中带字段路径 (以及 YAML 行号，若已知)"""

    def __init__(self, field_path: str, message: str, line: Optional[int] = None):
        self.field_path = field_path
        self.line = line
        where = f"{field_path}" if line is None else f"{field_path} (line {line})"
        super().__init__(f"[{where}] {message}")


class ModelError(LabError, ValueError):
    """谱模型 / 时间参数非法"""


class DriftError(LabError, ValueError):
    """漂移项或核张量定义非法"""


class NonFiniteDriftError(DriftError):
    """漂移求值出现溢出 (inf / nan)"""

    def __init__(self, message: str, max_abs_state: float = float("nan")):
        self.max_abs_state = max_abs_state
        super().__init__(f"{message} (max |state| = {max_abs_state:.3e})")


class SolverError(LabError):
    """预解方程 (resolvent equation) 在最大迭代次数内未收敛"""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"resolvent solve did not converge: residual={residual:.3e} after {iterations} iterations")


class DivergenceError(LabError):
    """单条路径发散"""

    def __init__(self, path_id: int, step: int):
        self.path_id = path_id
        self.step = step
        super().__init__(f"path {path_id} diverged at step {step}")


class EmptyEnsembleError(LabError):
    """估计器没有产生任何样本"""


class DomainError(LabError, ValueError):
    """区域 O 或 ε 参数非法，或初值不在 O 内"""
