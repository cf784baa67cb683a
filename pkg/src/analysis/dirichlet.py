# -------------------------------------------------------------
# Dirichlet (杀死) 半群: 离散出界监测与 Feynman-Kac 势 V_ε 加权
# -------------------------------------------------------------
"""
P^O(t)φ(x)  = E[φ(X(t,x)) 1{τ_x > t}]               (出界即杀死, 网格监测)
P^ε(t)φ(x)  = E[φ(X(t,x)) exp(-(1/ε)∫₀ᵗ V_ε(X(s))ds)]  (软杀死)

V_ε(x) = min(d(x, O_ε)/ε, 1), O_ε = {x : d(x, Oᶜ) > ε}。
距离取系数空间的欧氏范数 (即 L² 范数)。积分 ∫V_ε ds 用左端点求积。
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.common.errors import DomainError, EmptyEnsembleError, ModelError
from src.common.settings import LabSettings
from src.common.stats import mean_stderr, nonincreasing_within
from src.common.types import SpectralModel, StateLike
from src.spectral.drift import DriftSpec
from src.dynamics.engine import IntegratorConfig, PathMonitor
from src.dynamics.parallel import run_paths
from src.dynamics.scans import ScanTable
from src.analysis.invariant import MeasureCheck, MeasureEnsemble
from src.analysis.observables import CylFunc, cyl_eval, cyl_eval_batch

logger = logging.getLogger(__name__)


class DomainShape(Enum):
    BALL = "ball"
    HALF_SPACE = "half_space"


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """
    开集 O。Ball: {‖x - center‖ < r}; HalfSpace: {⟨x, h⟩ < c}。
    center 为 None 时取原点。
    """
    shape: DomainShape
    radius: float = 1.0
    center: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", DomainShape(self.shape))
        if self.shape is DomainShape.BALL:
            if not (np.isfinite(self.radius) and self.radius > 0):
                raise DomainError(f"ball radius must be > 0, got {self.radius}")
            object.__setattr__(self, "radius", float(self.radius))
            if self.center is not None:
                center = np.array(self.center, dtype=float)
                center.setflags(write=False)
                object.__setattr__(self, "center", center)
        else:
            if self.normal is None:
                raise DomainError("half-space needs a normal vector h")
            normal = np.array(self.normal, dtype=float)
            if not np.linalg.norm(normal) > 0:
                raise DomainError("half-space normal must be nonzero")
            normal.setflags(write=False)
            object.__setattr__(self, "normal", normal)
            object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def ball(cls, radius: float, center: Optional[StateLike] = None) -> "DomainSpec":
        return cls(DomainShape.BALL, radius=radius, center=None if center is None else np.asarray(center))

    @classmethod
    def half_space(cls, normal: StateLike, offset: float) -> "DomainSpec":
        return cls(DomainShape.HALF_SPACE, normal=np.asarray(normal), offset=offset)

    def check_model(self, model: SpectralModel):
        vec = self.center if self.shape is DomainShape.BALL else self.normal
        if vec is not None and vec.shape != (model.n_modes,):
            raise DomainError(f"domain vector has shape {vec.shape}, model has {model.n_modes} modes")

    def check_epsilon(self, eps: float) -> float:
        eps = float(eps)
        if not (np.isfinite(eps) and eps > 0):
            raise DomainError(f"epsilon must be > 0, got {eps}")
        if self.shape is DomainShape.BALL and eps >= self.radius:
            raise DomainError(f"epsilon={eps} must be below the ball radius {self.radius} (O_ε would be empty)")
        return eps

    def signed_distance_batch(self, X: np.ndarray) -> np.ndarray:
        """O 内为 d(x, Oᶜ), O 外为 -d(x, O)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.shape is DomainShape.BALL:
            diff = X if self.center is None else X - self.center
            return self.radius - np.sqrt((diff * diff).sum(axis=-1))
        return (self.offset - X @ self.normal) / float(np.linalg.norm(self.normal))

    def contains_batch(self, X: np.ndarray) -> np.ndarray:
        return self.signed_distance_batch(X) > 0

    def contains(self, x: StateLike) -> bool:
        return bool(self.contains_batch(np.asarray(x, dtype=float))[0])

    def to_dict(self) -> Dict[str, Any]:
        if self.shape is DomainShape.BALL:
            return {"shape": self.shape.value, "radius": self.radius,
                    "center": None if self.center is None else self.center.tolist()}
        return {"shape": self.shape.value, "normal": self.normal.tolist(), "offset": self.offset}


def distance_to_complement(domain: DomainSpec, x: StateLike) -> float:
    return float(max(domain.signed_distance_batch(np.asarray(x, dtype=float))[0], 0.0))


def v_eps_batch(domain: DomainSpec, eps: float, X: np.ndarray) -> np.ndarray:
    """d(x, O_ε) = max(ε - sd(x), 0) 对球与半空间都成立"""
    sd = domain.signed_distance_batch(X)
    return np.minimum(np.maximum(eps - sd, 0.0) / eps, 1.0)


def v_eps(domain: DomainSpec, eps: float, x: StateLike) -> float:
    eps = domain.check_epsilon(eps)
    return float(v_eps_batch(domain, eps, np.asarray(x, dtype=float))[0])


class Monitoring(Enum):
    GRID_EXIT = "GridExit"
    FEYNMAN_KAC = "FeynmanKac"


@dataclass(frozen=True)
class KillingConfig:
    epsilon: float
    monitoring: Monitoring = Monitoring.FEYNMAN_KAC

    def __post_init__(self):
        object.__setattr__(self, "monitoring", Monitoring(self.monitoring))
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def check_domain(self, domain: DomainSpec):
        domain.check_epsilon(self.epsilon)


@dataclass
class KilledEstimate:
    value: float
    stderr: float
    survival_fraction: float
    n_paths: int
    n_discarded: int = 0
    epsilon: Optional[float] = None
    t: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "stderr": self.stderr, "survival_fraction": self.survival_fraction,
                "n_paths": self.n_paths, "n_discarded": self.n_discarded, "epsilon": self.epsilon, "t": self.t}


class KillingMonitor(PathMonitor):
    """
    逐路径记录: 是否一直留在 O 内 (每个网格步检查), 以及每个 ε 的 FK 对数权重
    -dt·Σ V_ε(X_prev)/ε。record_steps 处另存存活标志。
    """

    def __init__(self, domain: DomainSpec, eps_list: Sequence[float] = (), record_steps: Sequence[int] = ()):
        self.domain = domain
        self.eps = np.asarray([float(e) for e in eps_list], dtype=float)
        self.record_steps = {int(s): i for i, s in enumerate(record_steps)}
        self.alive = None
        self.log_weight = None
        self.exit_step = None
        self.alive_at = None

    def start(self, X0: np.ndarray):
        n = X0.shape[0]
        self.alive = self.domain.contains_batch(X0)
        self.log_weight = np.zeros((n, len(self.eps)))
        self.exit_step = np.where(self.alive, -1, 0).astype(np.int64)
        self.alive_at = np.zeros((n, len(self.record_steps)), dtype=bool)
        if 0 in self.record_steps:
            self.alive_at[:, self.record_steps[0]] = self.alive

    def update(self, step: int, X_prev: np.ndarray, X_new: np.ndarray, dt: float):
        if len(self.eps):
            sd = self.domain.signed_distance_batch(X_prev)[:, None]
            v = np.minimum(np.maximum(self.eps - sd, 0.0) / self.eps, 1.0)
            self.log_weight -= dt * v / self.eps
        inside = self.domain.contains_batch(X_new)
        left = self.alive & ~inside
        self.exit_step[left] = step
        self.alive &= inside
        if step in self.record_steps:
            self.alive_at[:, self.record_steps[step]] = self.alive

    def result(self) -> Dict[str, np.ndarray]:
        return {"alive": self.alive.copy(), "log_weight": self.log_weight.copy(),
                "exit_step": self.exit_step.copy(), "alive_at": self.alive_at.copy()}


def _warn_coarse_dt(cfg: IntegratorConfig, eps_list: Sequence[float]):
    if len(eps_list) and cfg.dt > min(eps_list) ** 2:
        logger.warning(f"⚠️ dt={cfg.dt:g} exceeds ε²={min(eps_list) ** 2:g}; "
                       f"grid exit monitoring overestimates τ at this resolution")


def _killing_run(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec,
                 X0: np.ndarray, t: float, n_paths: int, seed: int, eps_list: Sequence[float] = (),
                 record_steps: Sequence[int] = (), horizon: Optional[IntegratorConfig] = None, desc: str = "Killed"):
    domain.check_model(model)
    horizon = cfg.with_horizon(t) if horizon is None else horizon
    monitor = KillingMonitor(domain, eps_list, record_steps)
    return run_paths(model, drift, horizon, X0, n_paths, seed, monitor=monitor, desc=desc)


def _check_start(model: SpectralModel, domain: DomainSpec, x: StateLike) -> np.ndarray:
    xc = model.coeffs_of(x, "x")
    domain.check_model(model)
    if not domain.contains(xc):
        raise DomainError(f"starting point lies outside O (signed distance {domain.signed_distance_batch(xc)[0]:.4g})")
    return xc


def killed_estimates(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec,
                     phi: CylFunc, x: StateLike, t: float, eps_list: Sequence[float], n_paths: int,
                     seed: int) -> Tuple[KilledEstimate, List[KilledEstimate], Dict[str, np.ndarray]]:
    """同一批路径上的出界估计与各 ε 的 FK 估计; 另返回逐路径的 (φ·1, φ·w) 用于配对差"""
    xc = _check_start(model, domain, x)
    phi.check_model(model)
    eps_list = [domain.check_epsilon(e) for e in eps_list]
    n_paths, t = int(n_paths), float(t)
    if n_paths < 2:
        raise ModelError(f"n_paths must be >= 2, got {n_paths}")
    if t == 0:
        value = cyl_eval(phi, xc)
        exit_est = KilledEstimate(value, 0.0, 1.0, n_paths, t=0.0)
        fk = [KilledEstimate(value, 0.0, 1.0, n_paths, epsilon=e, t=0.0) for e in eps_list]
        per_path = {"exit": np.full(n_paths, value), "fk": np.full((n_paths, len(eps_list)), value)}
        return exit_est, fk, per_path
    _warn_coarse_dt(cfg.with_horizon(t), eps_list)

    batch = _killing_run(model, drift, cfg, domain, xc, t, n_paths, seed, eps_list)
    valid = batch.valid
    if not valid.any():
        raise EmptyEnsembleError("every killed path diverged")
    phi_t = cyl_eval_batch(phi, batch.final[valid])
    alive = batch.monitor["alive"][valid].astype(float)
    weights = np.exp(batch.monitor["log_weight"][valid])
    n_ok, n_bad = int(valid.sum()), batch.n_discarded

    exit_vals = phi_t * alive
    m, se = mean_stderr(exit_vals)
    exit_est = KilledEstimate(float(m), float(se), float(alive.mean()), n_ok, n_bad, t=t)
    fk_vals = phi_t[:, None] * weights
    fk = []
    for j, eps in enumerate(eps_list):
        m, se = mean_stderr(fk_vals[:, j])
        fk.append(KilledEstimate(float(m), float(se), float(weights[:, j].mean()), n_ok, n_bad, epsilon=eps, t=t))
    return exit_est, fk, {"exit": exit_vals, "fk": fk_vals}


def killed_exit(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec, phi: CylFunc,
                x: StateLike, t: float, n_paths: int, seed: int) -> KilledEstimate:
    return killed_estimates(model, drift, cfg, domain, phi, x, t, (), n_paths, seed)[0]


def killed_fk(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec, eps: float,
              phi: CylFunc, x: StateLike, t: float, n_paths: int, seed: int) -> KilledEstimate:
    return killed_estimates(model, drift, cfg, domain, phi, x, t, (eps,), n_paths, seed)[1][0]


def killed_semigroup(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec,
                     killing: KillingConfig, phi: CylFunc, x: StateLike, t: float, n_paths: int,
                     seed: int) -> KilledEstimate:
    """
    GridExit: P^O(t)φ(x), ε 只作为分辨率尺度 (dt ≤ ε²);
    FeynmanKac: P^ε(t)φ(x), 权重 exp(-(1/ε)∫V_ε)。
    """
    killing.check_domain(domain)
    if killing.monitoring is Monitoring.GRID_EXIT:
        if float(t) > 0:
            _warn_coarse_dt(cfg.with_horizon(t), [killing.epsilon])
        return killed_exit(model, drift, cfg, domain, phi, x, t, n_paths, seed)
    return killed_fk(model, drift, cfg, domain, killing.epsilon, phi, x, t, n_paths, seed)


def fk_convergence_scan(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec,
                        phi: CylFunc, x: StateLike, t: float, eps_list: Sequence[float], n_paths: int, seed: int,
                        sigma: float = LabSettings.SIGMA_LEVEL) -> ScanTable:
    """
    ε 阶梯上 FK 估计对出界估计的差。差值在同一路径上配对, 判定 |gap| 在 σ·SE 内单调不增。
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError(f"epsilon ladder must be strictly decreasing, got {eps_list}")
    exit_est, fk, per_path = killed_estimates(model, drift, cfg, domain, phi, x, t, eps_list, n_paths, seed)
    table = ScanTable(columns=["eps", "value", "stderr", "gap", "gap_se"])
    gaps, gap_se = [], []
    for j, est in enumerate(fk):
        g, g_se = mean_stderr(per_path["fk"][:, j] - per_path["exit"])
        gaps.append(abs(float(g)))
        gap_se.append(float(g_se))
        table.rows.append({"eps": est.epsilon, "value": est.value, "stderr": est.stderr,
                           "gap": float(g), "gap_se": float(g_se)})
    ok, worst = nonincreasing_within(gaps, gap_se, sigma)
    table.passed = ok
    table.diagnostics = {
        "exit_value": exit_est.value, "exit_stderr": exit_est.stderr,
        "survival_fraction": exit_est.survival_fraction, "worst_increase": worst,
        "finest_gap_within_sigma": bool(gaps[-1] <= sigma * gap_se[-1] + 1e-15) if gaps else True,
        "dt": cfg.with_horizon(t).dt if t else cfg.dt, "t": float(t),
    }
    logger.info(f"FK ladder: gaps {[f'{g:.4g}' for g in gaps]} -> {'✅' if ok else '❌'}")
    return table


# --- 测度层面 ---
def _inner_means(n: int, per_path: np.ndarray, valid: np.ndarray,
                 copies: int) -> Tuple[np.ndarray, np.ndarray]:
    """每个起点的内层 MC 均值, 以及 (均值)² 的无偏修正 m² - s²/n"""
    vals = np.where(valid, per_path, 0.0).reshape(n, copies)
    ok = valid.reshape(n, copies)
    count = ok.sum(axis=1)
    if np.any(count == 0):
        raise EmptyEnsembleError("every inner path of some ensemble sample diverged")
    mean = vals.sum(axis=1) / count
    resid = np.where(ok, vals - mean[:, None], 0.0)
    var = (resid * resid).sum(axis=1) / np.maximum(count - 1, 1)
    return mean, mean * mean - np.where(count > 1, var / count, 0.0)


def subinvariance_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig,
                       domain: DomainSpec, phi: CylFunc, t: float, n_paths: int, seed: int,
                       sigma: float = LabSettings.SIGMA_LEVEL) -> MeasureCheck:
    """
    ∫_O (P^O(t)φ)² dν ≤ ∫_O φ² dν。
    落在 O 内的每个样本推进约 n_paths/|O ∩ 样本| 条内层路径 (至少 2 条)。
    """
    domain.check_model(model)
    phi.check_model(model)
    t = float(t)
    inside = domain.contains_batch(ensemble.samples)
    phi0 = cyl_eval_batch(phi, ensemble.samples)
    rhs_vals = np.where(inside, phi0 * phi0, 0.0)
    rhs, rhs_se = ensemble.mean_and_se(rhs_vals)
    n_in = int(inside.sum())
    extra = {"t": t, "nu_O": float(ensemble.weights[inside].sum()), "n_inside": n_in}
    if t == 0 or n_in == 0:
        return MeasureCheck("subinvariance", phi.label(), rhs, rhs, 0.0, True, dict(extra, discrepancy=0.0))

    copies = max(2, int(round(int(n_paths) / n_in)))
    X0 = np.repeat(ensemble.samples[inside], copies, axis=0)
    batch = _killing_run(model, drift, cfg, domain, X0, t, len(X0), seed, desc="Sub-invariance")
    per_path = cyl_eval_batch(phi, np.nan_to_num(batch.final)) * batch.monitor["alive"]
    _, sq = _inner_means(n_in, per_path, batch.valid, copies)
    lhs_vals = np.zeros(ensemble.size)
    lhs_vals[inside] = sq
    lhs, lhs_se = ensemble.mean_and_se(lhs_vals)
    diff, se = ensemble.mean_and_se(lhs_vals - rhs_vals)
    extra.update({"discrepancy": diff, "lhs_stderr": lhs_se, "rhs_stderr": rhs_se,
                  "inner_paths": copies, "n_discarded": batch.n_discarded})
    return MeasureCheck("subinvariance", phi.label(), lhs, rhs, se, bool(diff <= sigma * se + 1e-12), extra)


def fk_contraction_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig,
                        domain: DomainSpec, eps: float, phi: CylFunc, t: float, n_paths: int, seed: int,
                        sigma: float = LabSettings.SIGMA_LEVEL) -> MeasureCheck:
    """∫(P^ε(t)φ)² dν ≤ ∫φ² dν, 在整个空间上 (O 外起点的权重从第一步起衰减)"""
    domain.check_model(model)
    phi.check_model(model)
    eps = domain.check_epsilon(eps)
    t = float(t)
    phi0 = cyl_eval_batch(phi, ensemble.samples)
    rhs_vals = phi0 * phi0
    rhs, rhs_se = ensemble.mean_and_se(rhs_vals)
    extra = {"t": t, "epsilon": eps}
    if t == 0:
        return MeasureCheck("fk_contraction", phi.label(), rhs, rhs, 0.0, True, dict(extra, discrepancy=0.0))

    n = ensemble.size
    copies = max(2, int(round(int(n_paths) / n)))
    X0 = np.repeat(ensemble.samples, copies, axis=0)
    _warn_coarse_dt(cfg.with_horizon(t), [eps])
    batch = _killing_run(model, drift, cfg, domain, X0, t, len(X0), seed, eps_list=[eps], desc="FK contraction")
    per_path = cyl_eval_batch(phi, np.nan_to_num(batch.final)) * np.exp(batch.monitor["log_weight"][:, 0])
    _, lhs_vals = _inner_means(n, per_path, batch.valid, copies)
    lhs, lhs_se = ensemble.mean_and_se(lhs_vals)
    diff, se = ensemble.mean_and_se(lhs_vals - rhs_vals)
    extra.update({"discrepancy": diff, "lhs_stderr": lhs_se, "rhs_stderr": rhs_se,
                  "inner_paths": copies, "n_discarded": batch.n_discarded})
    return MeasureCheck("fk_contraction", phi.label(), lhs, rhs, se, bool(diff <= sigma * se + 1e-12), extra)


def killed_measure_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig,
                        domain: DomainSpec, killing: KillingConfig, phi: CylFunc, t: float, n_paths: int, seed: int,
                        sigma: float = LabSettings.SIGMA_LEVEL) -> MeasureCheck:
    """GridExit 走 subinvariance_test, FeynmanKac 走 fk_contraction_test"""
    killing.check_domain(domain)
    if killing.monitoring is Monitoring.GRID_EXIT:
        return subinvariance_test(ensemble, model, drift, cfg, domain, phi, t, n_paths, seed, sigma)
    return fk_contraction_test(ensemble, model, drift, cfg, domain, killing.epsilon, phi, t, n_paths, seed, sigma)


def survival_curve(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, domain: DomainSpec,
                   x: StateLike, t_list: Sequence[float], n_paths: int, seed: int,
                   sigma: float = LabSettings.SIGMA_LEVEL) -> ScanTable:
    """一次推进到 max(t), 在各 t 处读取存活比例; 同一路径上存活事件嵌套, 曲线逐路径单调"""
    xc = _check_start(model, domain, x)
    t_list = sorted(float(t) for t in t_list)
    if not t_list or t_list[0] < 0:
        raise ModelError(f"survival times must be nonnegative, got {t_list}")
    horizon = cfg.with_horizon(t_list[-1]) if t_list[-1] > 0 else replace(cfg, t_final=0.0)
    steps = []
    for t in t_list:
        n = int(round(t / horizon.dt))
        if abs(n * horizon.dt - t) > 1e-9 * max(1.0, t):
            raise ModelError(f"time {t} is not a multiple of dt={horizon.dt}")
        steps.append(n)
    batch = _killing_run(model, drift, cfg, domain, xc, t_list[-1], n_paths, seed,
                         record_steps=sorted(set(steps)), horizon=horizon, desc="Survival")
    order = {s: i for i, s in enumerate(sorted(set(steps)))}
    alive_at = batch.monitor["alive_at"][batch.valid]
    table = ScanTable(columns=["t", "survival", "stderr", "n_paths"])
    est, err = [], []
    for t, s in zip(t_list, steps):
        m, se = mean_stderr(alive_at[:, order[s]].astype(float))
        est.append(float(m))
        err.append(float(se))
        table.rows.append({"t": t, "survival": float(m), "stderr": float(se), "n_paths": int(batch.valid.sum())})
    table.passed, worst = nonincreasing_within(est, err, sigma)
    table.diagnostics = {"worst_increase": worst, "dt": horizon.dt}
    return table
