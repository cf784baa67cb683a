# -------------------------------------------------------------
# 路径并行: 固定大小的 chunk 分发到进程池, 按 chunk 顺序重组
# -------------------------------------------------------------
import copy
import logging
import multiprocessing
import signal
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.common.errors import ModelError
from src.common.settings import LabSettings
from src.common.types import SpectralModel
from src.dynamics.engine import BatchResult, IntegratorConfig, PathMonitor, integrate_batch
from src.spectral.drift import DriftSpec

logger = logging.getLogger(__name__)


@dataclass
class PathBatchResult:
    final: np.ndarray
    divergence_step: np.ndarray
    snapshot_steps: List[int] = field(default_factory=list)
    snapshots: Optional[np.ndarray] = None
    monitor: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return self.divergence_step < 0

    @property
    def n_paths(self) -> int:
        return int(self.final.shape[0])

    @property
    def n_discarded(self) -> int:
        return int(np.count_nonzero(~self.valid))


def init_worker():
    """工作进程忽略 SIGINT, 由主进程统一处理中断"""
    signal.signal(signal.SIGINT, signal.SIG_IGN)


def _run_chunk(task) -> BatchResult:
    model, drift, cfg, X0, master_seed, path_ids, snapshot_steps, monitor, noise_offset = task
    return integrate_batch(model, drift, cfg, X0, master_seed, path_ids,
                           snapshot_steps=snapshot_steps, monitor=monitor, noise_offset=noise_offset)


def _merge(chunks: List[BatchResult]) -> PathBatchResult:
    monitor: Dict[str, np.ndarray] = {}
    if chunks[0].monitor:
        for key in chunks[0].monitor:
            monitor[key] = np.concatenate([c.monitor[key] for c in chunks], axis=0)
    snaps = None
    if chunks[0].snapshots is not None:
        snaps = np.concatenate([c.snapshots for c in chunks], axis=1)
    return PathBatchResult(
        final=np.concatenate([c.final for c in chunks], axis=0),
        divergence_step=np.concatenate([c.divergence_step for c in chunks]),
        snapshot_steps=chunks[0].snapshot_steps,
        snapshots=snaps,
        monitor=monitor,
    )


def run_paths(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: np.ndarray, n_paths: int,
              master_seed: int, path_offset: int = 0, path_ids: Optional[Sequence[int]] = None,
              snapshot_steps: Optional[Sequence[int]] = None, monitor: Optional[PathMonitor] = None,
              noise_offset: int = 0, desc: str = "Paths") -> PathBatchResult:
    """
    推进 n_paths 条独立路径。x0 为 (N,) 时所有路径同一初值, 为 (n_paths, N) 时逐路径初值。
    路径 i 的 path_id 为 path_offset + i (或 path_ids[i])。
    每条路径的算术与 worker 数无关: chunk 划分只依赖 LabSettings.CHUNK_SIZE。
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ModelError(f"n_paths must be >= 1, got {n_paths}")
    x0 = np.asarray(x0, dtype=float)
    X0 = np.broadcast_to(x0, (n_paths, model.n_modes)) if x0.ndim == 1 else x0
    if X0.shape != (n_paths, model.n_modes):
        raise ModelError(f"initial states of shape {x0.shape} do not match {n_paths} paths x {model.n_modes} modes")
    ids = np.arange(path_offset, path_offset + n_paths, dtype=np.int64) if path_ids is None \
        else np.asarray(path_ids, dtype=np.int64)

    size = max(1, int(LabSettings.CHUNK_SIZE))
    tasks = []
    for start in range(0, n_paths, size):
        stop = min(n_paths, start + size)
        tasks.append((model, drift, cfg, np.array(X0[start:stop]), master_seed, ids[start:stop],
                      snapshot_steps, copy.deepcopy(monitor), noise_offset))

    workers = min(max(1, int(LabSettings.NUM_WORKERS)), len(tasks))
    show = LabSettings.SHOW_PROGRESS and len(tasks) > 1
    results: Dict[int, BatchResult] = {}
    if workers == 1:
        for idx, task in enumerate(tqdm(tasks, desc=desc, unit="chunk", disable=not show, leave=False)):
            results[idx] = _run_chunk(task)
    else:
        ctx = multiprocessing.get_context("spawn" if sys.platform == "win32" else "fork")
        with ProcessPoolExecutor(max_workers=workers, initializer=init_worker, mp_context=ctx) as executor:
            future_to_idx = {executor.submit(_run_chunk, task): idx for idx, task in enumerate(tasks)}
            with tqdm(total=len(tasks), desc=desc, unit="chunk", disable=not show, leave=False) as pbar:
                for future in as_completed(future_to_idx):
                    results[future_to_idx[future]] = future.result()
                    pbar.update(1)

    merged = _merge([results[i] for i in range(len(tasks))])
    if merged.n_discarded:
        logger.warning(f"⚠️ {merged.n_discarded}/{n_paths} paths diverged and were discarded")
    return merged
