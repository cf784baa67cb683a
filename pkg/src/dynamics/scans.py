# -------------------------------------------------------------
# 路径层面的扫描: 矩、双边起点衰减、强收敛、广义温和解
# -------------------------------------------------------------
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.common.errors import ModelError
from src.common.settings import LabSettings
from src.common.stats import log_slope, mean_stderr, nonincreasing_within
from src.common.types import SpectralModel, StateLike
from src.spectral.core import qt_variances, resolvent_mollify
from src.spectral.drift import DriftSpec, drift_eval_batch
from src.dynamics.engine import IntegratorConfig, Scheme, StepOperator
from src.dynamics.noise import normals_for_paths
from src.dynamics.parallel import run_paths

logger = logging.getLogger(__name__)


def _steps_for(cfg: IntegratorConfig, t: float) -> int:
    n = int(round(float(t) / cfg.dt))
    if float(t) < 0 or abs(n * cfg.dt - float(t)) > 1e-9 * max(1.0, float(t)):
        raise ModelError(f"time {t} is not a nonnegative multiple of dt={cfg.dt}")
    return n


@dataclass
class ScanTable:
    """通用结果表: 行 + 判定 + 诊断量"""
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    passed: bool = True
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def as_rows(self) -> List[List[Any]]:
        return [[row[c] for c in self.columns] for row in self.rows]

    def to_dict(self) -> Dict[str, Any]:
        return {"columns": self.columns, "rows": self.rows, "pass": self.passed, "diagnostics": self.diagnostics}


# --- 矩扫描 ---
def moment_scan(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike,
                p_list: Sequence[float], t_list: Sequence[float], n_paths: int, seed: int,
                sigma: float = LabSettings.SIGMA_LEVEL) -> ScanTable:
    """E‖X(t,x)‖ᵖ 的 MC 估计; 判定每个 p 在 t 上没有超出 σ·SE 的上升趋势"""
    p_list = [float(p) for p in p_list]
    if any(p < 1 or p > 8 for p in p_list):
        raise ModelError(f"moment orders must lie in [1, 8], got {p_list}")
    if int(n_paths) < 100:
        raise ModelError(f"moment_scan needs n_paths >= 100, got {n_paths}")
    t_list = sorted(float(t) for t in t_list)
    steps = [_steps_for(cfg, t) for t in t_list]
    horizon = replace(cfg, t_final=t_list[-1], record_every=1)
    x = model.coeffs_of(x0, "x0")
    batch = run_paths(model, drift, horizon, x, n_paths, seed, snapshot_steps=steps, desc="Moments")
    valid = batch.valid
    norm = np.sqrt((batch.snapshots[:, valid, :] ** 2).sum(axis=-1))

    table = ScanTable(columns=["p", "t", "estimate", "stderr", "n_paths"])
    for p in p_list:
        est, se = [], []
        for t, s in zip(t_list, steps):
            m, e = mean_stderr(norm[batch.snapshot_steps.index(s)] ** p)
            est.append(float(m))
            se.append(float(e))
            table.rows.append({"p": p, "t": t, "estimate": float(m), "stderr": float(e), "n_paths": int(valid.sum())})
        later = [i for i, t in enumerate(t_list) if t > 0]
        ok, worst = nonincreasing_within([est[i] for i in later], [se[i] for i in later], sigma)
        table.diagnostics[f"p={p:g}"] = {"trend_ok": ok, "worst_excess": worst}
        table.passed &= ok
    table.diagnostics["n_discarded"] = batch.n_discarded
    return table


# --- 双边起点 ---
def ou_two_sided_exact(model: SpectralModel, x0: StateLike, s: float, h: float) -> float:
    """F = 0 时 E‖X(0,-s,x) - X(0,-h,x)‖² 的闭式"""
    s, h = float(s), float(h)
    if s < h:
        s, h = h, s
    x = model.coeffs_of(x0, "x0")
    a = model.eigenvalues
    lag = s - h
    per_mode = np.exp(2 * a * h) * ((np.exp(a * lag) - 1.0) ** 2 * x * x + qt_variances(model, lag))
    return float(per_mode.sum())


def two_sided_decay(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike,
                    s_pairs: Sequence[Tuple[float, float]], n_paths: int, seed: int,
                    sigma: float = LabSettings.SIGMA_LEVEL) -> ScanTable:
    """
    所有起点共用 [-s_max, 0] 上按槽位编号的同一噪声; 从 -u 出发的路径使用槽位 (s_max - u)/dt 起的后缀。
    报告 E‖X(0,-s,x) - X(0,-h,x)‖²; 按远端起点 s 与间隔 s - h 分组, 组内判定其随 h 单调 (σ·SE 余量) 且对数斜率为负。
    """
    pairs = [(max(float(s), float(h)), min(float(s), float(h))) for s, h in s_pairs]
    s_max = max(s for s, _ in pairs)
    total = _steps_for(cfg, s_max)
    x = model.coeffs_of(x0, "x0")
    starts = sorted({u for pair in pairs for u in pair})
    endpoints: Dict[float, np.ndarray] = {}
    valid = np.ones(int(n_paths), dtype=bool)
    for u in starts:
        k = _steps_for(cfg, u)
        if k == 0:
            endpoints[u] = np.broadcast_to(x, (int(n_paths), model.n_modes))
            continue
        run_cfg = replace(cfg, t_final=u, record_every=1)
        batch = run_paths(model, drift, run_cfg, x, n_paths, seed, noise_offset=total - k, desc=f"Start -{u:g}")
        endpoints[u] = batch.final
        valid &= batch.valid

    table = ScanTable(columns=["s", "h", "estimate", "stderr", "n_paths"])
    for s, h in sorted(pairs):
        diff = endpoints[s][valid] - endpoints[h][valid]
        m, e = mean_stderr((diff * diff).sum(axis=-1))
        table.rows.append({"s": s, "h": h, "estimate": float(m), "stderr": float(e), "n_paths": int(valid.sum())})

    # 两个方向上差值随 h 衰减: 固定远端起点 s, 或固定间隔 s - h; 其余行对之间不比较
    groups: Dict[str, List[Dict[str, Any]]] = {}
    for row in table.rows:
        if row["s"] > row["h"]:
            groups.setdefault(f"s={row['s']:g}", []).append(row)
            groups.setdefault(f"lag={round(row['s'] - row['h'], 12):g}", []).append(row)
    monotone, worst_all, rates = True, 0.0, []
    for key, rows in groups.items():
        if len(rows) < 2:
            continue
        rows = sorted(rows, key=lambda r: r["h"])
        ok, worst = nonincreasing_within([r["estimate"] for r in rows], [r["stderr"] for r in rows], sigma)
        rate = log_slope([r["h"] for r in rows], [r["estimate"] for r in rows])
        table.diagnostics[key] = {"monotone": ok, "worst_excess": worst, "decay_rate": rate}
        table.passed &= ok and rate < 0
        monotone &= ok
        worst_all = max(worst_all, worst)
        rates.append(rate)
    table.diagnostics.update({
        "monotone": monotone,
        "worst_excess": worst_all,
        "decay_rate": max(rates) if rates else float("nan"),
    })
    return table


# --- 强收敛 ---
def _integrate_with_increments(model: SpectralModel, drift: DriftSpec, op: StepOperator, X: np.ndarray,
                               increments: np.ndarray) -> np.ndarray:
    X = X.copy()
    for incr in increments:
        with np.errstate(over="ignore", invalid="ignore"):
            X = op.deterministic(X, drift_eval_batch(model, drift, X, strict=False)) + incr
    return X


def strong_convergence_scan(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike,
                            levels: int, n_paths: int, seed: int) -> ScanTable:
    """
    细网格 dt 与粗网格 2^l·dt 用同一 Brown 路径: 粗步的随机卷积由细步精确聚合
    Σ_i e^{a(m-1-i)dt} ξ_i。报告终点误差 E‖X_l(T) - X_0(T)‖ 与测得阶数。
    """
    if Scheme(cfg.scheme) is not Scheme.EXPONENTIAL_EULER:
        raise ModelError("strong_convergence_scan aggregates exact convolutions and needs the exponential_euler scheme")
    levels = int(levels)
    n_fine = cfg.n_steps
    if levels < 2 or n_fine % (2 ** levels) != 0:
        raise ModelError(f"need levels >= 2 and n_steps={n_fine} divisible by 2^{levels}")
    x = model.coeffs_of(x0, "x0")
    a = model.eigenvalues
    fine_std = np.sqrt(qt_variances(model, cfg.dt))
    errors: Dict[int, List[np.ndarray]] = {l: [] for l in range(1, levels + 1)}
    size = LabSettings.CHUNK_SIZE
    for start in range(0, int(n_paths), size):
        ids = np.arange(start, min(int(n_paths), start + size))
        fine_incr = fine_std * normals_for_paths(seed, ids, 0, n_fine, model.n_modes)
        X0 = np.broadcast_to(x, (len(ids), model.n_modes))
        reference = _integrate_with_increments(model, drift, StepOperator(model, cfg.dt, cfg.scheme), X0, fine_incr)
        for l in range(1, levels + 1):
            m = 2 ** l
            weights = np.exp(np.outer(np.arange(m - 1, -1, -1) * cfg.dt, a))
            coarse_incr = (fine_incr.reshape(n_fine // m, m, len(ids), model.n_modes)
                           * weights[None, :, None, :]).sum(axis=1)
            coarse = _integrate_with_increments(model, drift, StepOperator(model, m * cfg.dt, cfg.scheme),
                                                X0, coarse_incr)
            errors[l].append(np.linalg.norm(coarse - reference, axis=-1))

    table = ScanTable(columns=["dt", "error", "stderr", "n_paths"])
    for l in range(1, levels + 1):
        err = np.concatenate(errors[l])
        err = err[np.isfinite(err)]
        m, e = mean_stderr(err)
        table.rows.append({"dt": cfg.dt * 2 ** l, "error": float(m), "stderr": float(e), "n_paths": len(err)})
    dts = np.array([r["dt"] for r in table.rows])
    errs = np.array([r["error"] for r in table.rows])
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0]) if np.all(errs > 0) else float("nan")
    table.diagnostics["order"] = order
    table.passed = bool(np.isfinite(order) and order >= 0.9)
    return table


# --- 广义温和解 ---
def generalized_mild_convergence(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x: StateLike,
                                 n_list: Sequence[float], master_seed: int, n_paths: int,
                                 tolerance: float = 0.02) -> ScanTable:
    """
    初值 nR(n,A)x 的路径在共用噪声下收敛到从 x 出发的路径,
    且 ‖X_n(T) - X(T)‖ ≤ e^{ηT}‖nR(n,A)x - x‖, η = ζ + 1/2。
    """
    xc = model.coeffs_of(x, "x")
    T = cfg.t_final
    eta = drift.effective_zeta(model) + 0.5
    reference = run_paths(model, drift, cfg, xc, n_paths, master_seed, desc="Reference")
    table = ScanTable(columns=["n", "initial_gap", "mean_gap", "max_gap", "bound"])
    for n in sorted(float(v) for v in n_list):
        y = resolvent_mollify(model, n, xc).coeffs
        batch = run_paths(model, drift, cfg, y, n_paths, master_seed, desc=f"n={n:g}")
        valid = reference.valid & batch.valid
        gap = np.linalg.norm(batch.final[valid] - reference.final[valid], axis=-1)
        initial = float(np.linalg.norm(y - xc))
        bound = float(np.exp(eta * T) * initial)
        table.rows.append({
            "n": n, "initial_gap": initial, "mean_gap": float(gap.mean()),
            "max_gap": float(gap.max()), "bound": bound,
        })
        table.passed &= bool(gap.max() <= bound * (1.0 + tolerance) + 1e-14)
    gaps = [r["mean_gap"] for r in table.rows]
    table.diagnostics["monotone"] = bool(all(b <= a + 1e-14 for a, b in zip(gaps, gaps[1:])))
    table.passed &= table.diagnostics["monotone"]
    return table


def stochastic_convolution_moments(model: SpectralModel, t: float, n_paths: int, seed: int,
                                   n_steps: int = 10, sigma: float = LabSettings.SIGMA_LEVEL) -> ScanTable:
    """逐步累积的 W_A(t): E‖W_A(t)‖² 对 Tr Q_t"""
    t = float(t)
    if t <= 0:
        raise ModelError(f"t must be > 0, got {t}")
    cfg = IntegratorConfig(dt=t / int(n_steps), t_final=t)
    batch = run_paths(model, DriftSpec.zero(), cfg, np.zeros(model.n_modes), n_paths, seed, desc="W_A")
    m, e = mean_stderr((batch.final ** 2).sum(axis=-1))
    exact = float(qt_variances(model, t).sum())
    table = ScanTable(columns=["t", "estimate", "stderr", "exact"])
    table.rows.append({"t": t, "estimate": float(m), "stderr": float(e), "exact": exact})
    table.passed = bool(abs(m - exact) <= sigma * e)
    return table
