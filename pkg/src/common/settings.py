# -------------------------------------------------------------
# 运行时设置 (Runtime settings)
# -------------------------------------------------------------
import os
from typing import Optional

import psutil


def _default_workers() -> int:
    env = os.environ.get("SPDELAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, psutil.cpu_count() or 1)


class LabSettings:
    """运行时设置 (类属性，全局共享)"""
    # 并行
    WORKER_ENV_VAR = "SPDELAB_WORKERS"
    NUM_WORKERS = _default_workers()
    CHUNK_SIZE = 256           # 每个 chunk 的路径数，固定不变以保证逐位可复现
    NOISE_WINDOW = 256         # 每次批量生成的噪声步数

    # 数值
    DIVERGENCE_THRESHOLD = 1e12
    SIGMA_LEVEL = 3.0
    RESOLVENT_TOL = 1e-10
    RESOLVENT_MAX_ITER = 100

    # 输出
    FLOAT_FORMAT = "%.17g"
    DEFAULT_SEED = 0

    # 进度条
    SHOW_PROGRESS = True

    @classmethod
    def update_from_args(cls, args):
        """根据命令行参数更新设置"""
        workers: Optional[int] = getattr(args, "workers", None)
        if workers:
            cls.NUM_WORKERS = max(1, int(workers))
        if getattr(args, "no_progress", False):
            cls.SHOW_PROGRESS = False

    @classmethod
    def refresh_workers(cls):
        """重新读取环境变量中的 worker 数"""
        cls.NUM_WORKERS = _default_workers()
