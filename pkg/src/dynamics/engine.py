# -------------------------------------------------------------
# 温和解的时间步进 (指数 Euler / 半隐式)
# -------------------------------------------------------------
"""
指数 Euler:  x′ = e^{dt a} x + φ₁(dt a) dt F(x) + √Q_dt z,  φ₁(z) = (e^z - 1)/z
半隐式:      x′ = (x + dt F(x)) / (1 - dt a) + √Q_dt z

线性部分精确求解, 随机卷积按精确协方差采样。批量积分中单条路径发散只做标记,
不影响同批其他路径。
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.common.errors import DivergenceError, ModelError
from src.common.settings import LabSettings
from src.common.types import SpectralModel, StateLike, StateVector
from src.spectral.core import norms_batch, qt_variances
from src.spectral.drift import DriftSpec, drift_eval_batch
from src.dynamics.noise import NoiseStream, normals_for_paths, stream_normal

logger = logging.getLogger(__name__)


class Scheme(Enum):
    EXPONENTIAL_EULER = "exponential_euler"
    SEMI_IMPLICIT = "semi_implicit"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_final: float
    scheme: Scheme = Scheme.EXPONENTIAL_EULER
    record_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        dt, t_final = float(self.dt), float(self.t_final)
        if not (np.isfinite(dt) and dt > 0):
            raise ModelError(f"dt must be > 0, got {self.dt}")
        if not (np.isfinite(t_final) and t_final >= 0):
            raise ModelError(f"t_final must be >= 0, got {self.t_final}")
        if t_final > 0 and dt > t_final * (1 + 1e-12):
            raise ModelError(f"dt={dt} exceeds t_final={t_final}")
        if int(self.record_every) < 1:
            raise ModelError(f"record_every must be >= 1, got {self.record_every}")
        n = round(t_final / dt)
        if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
            raise ModelError(f"t_final={t_final} is not a whole number of steps dt={dt}")
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "t_final", t_final)
        object.__setattr__(self, "record_every", int(self.record_every))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def with_horizon(self, t: float) -> "IntegratorConfig":
        """同一格式, 终止时刻改为 t; 必要时把 dt 缩小到能整除 t"""
        t = float(t)
        if t == 0:
            return replace(self, t_final=0.0, record_every=1)
        n = max(1, math.ceil(t / self.dt - 1e-9))
        return replace(self, dt=t / n, t_final=t, record_every=1)

    def to_dict(self) -> Dict[str, Any]:
        return {"dt": self.dt, "t_final": self.t_final, "scheme": self.scheme.value, "record_every": self.record_every}


def phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


class StepOperator:
    """预计算的逐模步进系数"""

    def __init__(self, model: SpectralModel, dt: float, scheme: Scheme):
        a = model.eigenvalues
        self.dt = float(dt)
        self.scheme = Scheme(scheme)
        self.noise_std = np.sqrt(qt_variances(model, dt))
        if self.scheme is Scheme.EXPONENTIAL_EULER:
            self.decay = np.exp(a * dt)
            self.drift_weight = phi1(a * dt) * dt
        else:
            self.inverse = 1.0 / (1.0 - dt * a)

    def deterministic(self, X: np.ndarray, F: np.ndarray) -> np.ndarray:
        if self.scheme is Scheme.EXPONENTIAL_EULER:
            return self.decay * X + self.drift_weight * F
        return (X + self.dt * F) * self.inverse

    def advance(self, X: np.ndarray, F: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return self.deterministic(X, F) + self.noise_std * Z


class PathMonitor:
    """路径监视器基类; 子类须可 pickle, result() 中数组的首轴为路径轴"""

    def start(self, X0: np.ndarray):
        pass

    def update(self, step: int, X_prev: np.ndarray, X_new: np.ndarray, dt: float):
        pass

    def result(self) -> Dict[str, np.ndarray]:
        return {}


@dataclass
class BatchResult:
    final: np.ndarray
    divergence_step: np.ndarray
    snapshot_steps: List[int] = field(default_factory=list)
    snapshots: Optional[np.ndarray] = None
    monitor: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def diverged(self) -> np.ndarray:
        return self.divergence_step >= 0


def integrate_batch(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, X0: np.ndarray,
                    master_seed: int, path_ids: Sequence[int], snapshot_steps: Optional[Sequence[int]] = None,
                    monitor: Optional[PathMonitor] = None, noise_offset: int = 0) -> BatchResult:
    """
    批量推进 B 条路径 cfg.n_steps 步。第 k 步 (x_k → x_{k+1}) 的噪声取自计数器 noise_offset + k。
    snapshot_steps 中的步号 (0 为初值) 处保存状态。
    """
    X = np.array(np.atleast_2d(X0), dtype=float)
    path_ids = np.asarray(path_ids, dtype=np.int64)
    if X.shape != (len(path_ids), model.n_modes):
        raise ModelError(f"initial states of shape {X.shape} do not match {len(path_ids)} paths x {model.n_modes} modes")
    n_steps = cfg.n_steps
    op = StepOperator(model, cfg.dt, cfg.scheme)
    threshold = LabSettings.DIVERGENCE_THRESHOLD
    divergence = np.full(len(path_ids), -1, dtype=np.int64)

    steps = sorted(set(int(s) for s in (snapshot_steps or [])))
    if steps and (steps[0] < 0 or steps[-1] > n_steps):
        raise ModelError(f"snapshot steps must lie in [0, {n_steps}]")
    slot = {s: i for i, s in enumerate(steps)}
    snaps = np.empty((len(steps),) + X.shape) if steps else None
    if 0 in slot:
        snaps[slot[0]] = X

    if monitor is not None:
        monitor.start(X)
    window = max(1, LabSettings.NOISE_WINDOW)
    for w0 in range(0, n_steps, window):
        wn = min(window, n_steps - w0)
        Z = normals_for_paths(master_seed, path_ids, noise_offset + w0, wn, model.n_modes)
        for i in range(wn):
            step = w0 + i + 1
            with np.errstate(over="ignore", invalid="ignore"):
                F = drift_eval_batch(model, drift, X, strict=False)
                X_new = op.advance(X, F, Z[i])
                size = np.sqrt((X_new * X_new).sum(axis=-1))
            bad = ~np.isfinite(size) | (size > threshold)
            fresh = bad & (divergence < 0)
            if np.any(fresh):
                divergence[fresh] = step
                logger.debug(f"paths {path_ids[fresh].tolist()} diverged at step {step}")
            if np.any(divergence >= 0):
                X_new[divergence >= 0] = 0.0
            if monitor is not None:
                monitor.update(step, X, X_new, cfg.dt)
            X = X_new
            if step in slot:
                snaps[slot[step]] = X
    final = X.copy()
    final[divergence >= 0] = np.nan
    if snaps is not None and np.any(divergence >= 0):
        for s, k in slot.items():
            snaps[k][(divergence >= 0) & (divergence <= s)] = np.nan
    return BatchResult(
        final=final,
        divergence_step=divergence,
        snapshot_steps=steps,
        snapshots=snaps,
        monitor=monitor.result() if monitor is not None else {},
    )


# --- 单步与单路径 ---
def step(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x: StateLike, stream: NoiseStream) -> StateVector:
    """一步推进, 噪声取自 stream 三元组"""
    xc = model.coeffs_of(x)[None, :]
    op = StepOperator(model, cfg.dt, cfg.scheme)
    z = stream_normal(stream, model.n_modes)[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        out = op.advance(xc, drift_eval_batch(model, drift, xc, strict=False), z)[0]
    if not np.all(np.isfinite(out)) or np.linalg.norm(out) > LabSettings.DIVERGENCE_THRESHOLD:
        raise DivergenceError(stream.path_id, stream.step_counter + 1)
    return StateVector(out)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    norms_trace: Dict[str, np.ndarray]
    master_seed: int
    path_id: int
    divergence_step: Optional[int] = None

    def state_at(self, index: int) -> StateVector:
        return StateVector(self.states[index])

    def __len__(self) -> int:
        return len(self.times)

    def rows(self):
        for i, t in enumerate(self.times):
            yield [t, *self.states[i], self.norms_trace["l2"][i], self.norms_trace["sup_grid"][i],
                   self.norms_trace["h1"][i]]

    @staticmethod
    def header(n_modes: int) -> List[str]:
        return ["t"] + [f"mode_{k}" for k in range(n_modes)] + ["l2", "sup", "h1"]


def record_steps(cfg: IntegratorConfig) -> List[int]:
    return list(range(0, cfg.n_steps + 1, cfg.record_every))


def simulate_path(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike,
                  master_seed: int = 0, path_id: int = 0, raise_on_divergence: bool = True) -> Trajectory:
    x = model.coeffs_of(x0, "x0")
    steps = record_steps(cfg)
    result = integrate_batch(model, drift, cfg, x[None, :], master_seed, [path_id], snapshot_steps=steps)
    div = int(result.divergence_step[0])
    if div >= 0:
        if raise_on_divergence:
            raise DivergenceError(path_id, div)
        logger.warning(f"⚠️ path {path_id} diverged at step {div}")
    states = result.snapshots[:, 0, :]
    times = np.asarray(steps, dtype=float) * cfg.dt
    return Trajectory(
        times=times,
        states=states,
        norms_trace=norms_batch(model, states),
        master_seed=int(master_seed),
        path_id=int(path_id),
        divergence_step=div if div >= 0 else None,
    )


# --- 耦合路径 ---
@dataclass
class CoupledPairResult:
    times: np.ndarray
    separation: np.ndarray
    rate_bound: float
    empirical_rate: float
    bound_holds: bool
    tolerance: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rate_bound": self.rate_bound,
            "empirical_rate": self.empirical_rate,
            "bound_holds": self.bound_holds,
            "tolerance": self.tolerance,
            "max_ratio": float(np.max(self.separation / self.envelope())) if self.separation[0] > 0 else 0.0,
        }

    def envelope(self) -> np.ndarray:
        return np.exp(self.rate_bound * self.times) * self.separation[0]


def simulate_coupled(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike, y0: StateLike,
                     master_seed: int = 0, path_id: int = 0, tolerance: float = 0.02,
                     rate_bound: Optional[float] = None) -> CoupledPairResult:
    """
    两条路径共用同一噪声 (同一 path_id); 检查 ‖X(t,x)-X(t,y)‖ ≤ e^{ηt}‖x-y‖(1+tol),
    η 缺省为 ζ + 1/2, 同时报告经验速率 max_t log(sep(t)/sep(0))/t。
    """
    x, y = model.coeffs_of(x0, "x0"), model.coeffs_of(y0, "y0")
    steps = record_steps(cfg)
    result = integrate_batch(model, drift, cfg, np.stack([x, y]), master_seed, [path_id, path_id],
                             snapshot_steps=steps)
    if np.any(result.diverged):
        raise DivergenceError(path_id, int(result.divergence_step.max()))
    diff = result.snapshots[:, 0, :] - result.snapshots[:, 1, :]
    separation = np.sqrt((diff * diff).sum(axis=-1))
    times = np.asarray(steps, dtype=float) * cfg.dt
    eta = drift.effective_zeta(model) + 0.5 if rate_bound is None else float(rate_bound)
    sep0 = separation[0]
    if sep0 > 0:
        envelope = np.exp(eta * times) * sep0 * (1.0 + tolerance)
        holds = bool(np.all(separation <= envelope))
        positive = (times > 0) & (separation > 0)
        rate = float(np.max(np.log(separation[positive] / sep0) / times[positive])) if np.any(positive) else float("-inf")
    else:
        holds = bool(np.all(separation == 0))
        rate = float("-inf")
    return CoupledPairResult(times, separation, eta, rate, holds, tolerance)
