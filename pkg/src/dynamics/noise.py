# -------------------------------------------------------------
# 基于计数器的高斯噪声 (Philox-4x64)
# -------------------------------------------------------------
"""
增量 z(master_seed, path_id, step) 是三元组的纯函数:

  key     = (master_seed, (purpose << 56) ^ path_id)
  counter = step · W/4,  W = 4·⌈N/4⌉ 个 64 位字 / 步

每个字取高 53 位得到 (0,1) 上的均匀数, 再经 ndtri 变为标准正态。
从任意步开始批量生成的窗口与逐步调用的结果逐位一致。
"""
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
from scipy.special import ndtri

from src.common.errors import ModelError
from src.common.types import SpectralModel, StateVector
from src.spectral.core import qt_variances

_MASK64 = (1 << 64) - 1
_PATH_BITS = 56


class NoisePurpose(IntEnum):
    PATH = 0
    SAMPLER = 1
    MCMC = 2
    ACCEPT = 3


@dataclass(frozen=True)
class NoiseStream:
    master_seed: int
    path_id: int
    step_counter: int = 0
    purpose: NoisePurpose = NoisePurpose.PATH

    def advance(self, n_steps: int = 1) -> "NoiseStream":
        return replace(self, step_counter=self.step_counter + int(n_steps))


def words_per_step(n_modes: int) -> int:
    return 4 * ((int(n_modes) + 3) // 4)


def _bit_generator(master_seed: int, path_id: int, purpose: NoisePurpose, start_step: int, width: int) -> np.random.Philox:
    if not 0 <= int(path_id) < (1 << _PATH_BITS):
        raise ModelError(f"path_id must lie in [0, 2^{_PATH_BITS}), got {path_id}")
    key = np.array([int(master_seed) & _MASK64, ((int(purpose) << _PATH_BITS) ^ int(path_id)) & _MASK64],
                   dtype=np.uint64)
    return np.random.Philox(key=key, counter=int(start_step) * (width // 4))


def raw_words(master_seed: int, path_id: int, start_step: int, n_steps: int, width: int,
              purpose: NoisePurpose = NoisePurpose.PATH) -> np.ndarray:
    bitgen = _bit_generator(master_seed, path_id, purpose, start_step, width)
    return bitgen.random_raw(int(n_steps) * width).reshape(int(n_steps), width)


def uniforms(master_seed: int, path_id: int, start_step: int, n_steps: int, n_values: int,
             purpose: NoisePurpose = NoisePurpose.PATH) -> np.ndarray:
    """(n_steps, n_values), 取值于开区间 (0, 1)"""
    width = words_per_step(n_values)
    raw = raw_words(master_seed, path_id, start_step, n_steps, width, purpose)[:, :n_values]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def standard_normals(master_seed: int, path_id: int, start_step: int, n_steps: int, n_values: int,
                     purpose: NoisePurpose = NoisePurpose.PATH) -> np.ndarray:
    return ndtri(uniforms(master_seed, path_id, start_step, n_steps, n_values, purpose))


def normals_for_paths(master_seed: int, path_ids: np.ndarray, start_step: int, n_steps: int, n_values: int,
                      purpose: NoisePurpose = NoisePurpose.PATH) -> np.ndarray:
    """(n_steps, B, n_values) 窗口, 每条路径一个独立的 Philox 流"""
    path_ids = np.asarray(path_ids, dtype=np.int64)
    out = np.empty((int(n_steps), len(path_ids), int(n_values)))
    cache = {}
    for i, pid in enumerate(path_ids):
        pid = int(pid)
        if pid not in cache:
            cache[pid] = standard_normals(master_seed, pid, start_step, n_steps, n_values, purpose)
        out[:, i, :] = cache[pid]
    return out


def stream_normal(stream: NoiseStream, n_values: int) -> np.ndarray:
    return standard_normals(stream.master_seed, stream.path_id, stream.step_counter, 1, n_values, stream.purpose)[0]


def ou_increment(model: SpectralModel, dt: float, stream: NoiseStream) -> StateVector:
    """一步随机卷积增量 ~ N(0, Q_dt)"""
    if not float(dt) > 0:
        raise ModelError(f"dt must be > 0, got {dt}")
    return StateVector(np.sqrt(qt_variances(model, dt)) * stream_normal(stream, model.n_modes))
