# -------------------------------------------------------------
# Monte-Carlo 统计量
# -------------------------------------------------------------
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import fft


def mean_stderr(values: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """样本均值与标准误 (ddof=1); 单样本时标准误为 0"""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=axis, ddof=1) / np.sqrt(n)


def weighted_mean_stderr(values: np.ndarray, weights: np.ndarray, ess: Optional[float] = None) -> Tuple[float, float]:
    """加权均值; 标准误用 ESS (缺省为 Kish 有效样本数 1/Σw²)"""
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = float((w * values).sum())
    var = float((w * (values - mean) ** 2).sum())
    n_eff = float(1.0 / (w * w).sum()) if ess is None else float(ess)
    if n_eff <= 1:
        return mean, 0.0 if var == 0 else float(np.sqrt(var))
    return mean, float(np.sqrt(var / (n_eff - 1)))


def autocorrelation(series: np.ndarray) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    n = len(x)
    x = x - x.mean()
    size = fft.next_fast_len(2 * n)
    spec = fft.rfft(x, n=size)
    acov = fft.irfft(spec * np.conj(spec), n=size)[:n]
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(series: np.ndarray) -> float:
    """初始正序列 (initial positive sequence) 估计"""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if not np.any(rho):
        return float(n)
    tau = -1.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return float(min(n, max(1.0, n / tau)))


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v, w = values[order], w[order]
    cdf = np.cumsum(w) / w.sum()
    idx = int(np.searchsorted(cdf, q, side="left"))
    return float(v[min(idx, len(v) - 1)])


def nonincreasing_within(estimates: Sequence[float], stderrs: Sequence[float], sigma: float) -> Tuple[bool, float]:
    """est[j] ≤ est[j-1] + σ·sqrt(se[j]² + se[j-1]²); 返回 (是否成立, 最大超出量)"""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    if len(est) < 2:
        return True, 0.0
    excess = est[1:] - est[:-1] - sigma * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    worst = float(excess.max())
    return bool(worst <= 0), worst


def log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """log(y) 对 x 的最小二乘斜率, 忽略非正 y"""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(x[keep], np.log(y[keep]), 1)[0])
