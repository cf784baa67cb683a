# -------------------------------------------------------------
# 谱截断: 算子 A, C 的对角表示, 协方差 Q_t / Q_∞, 网格变换
# -------------------------------------------------------------
"""
特征基 e_k(ξ) = √2 sin(kπξ), k = 1..N, 配置点 ξ_j = j/(M+1), j = 1..M。

离散正交性 (1/(M+1)) Σ_j e_k(ξ_j) e_l(ξ_j) = δ_kl 对 k, l ≤ M 精确成立,
因此 from_grid(to_grid(v)) = v 只受舍入误差影响。两个方向都用 I 型 DST 计算。
"""
import logging
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import fft

from src.common.errors import ModelError
from src.common.types import (
    DiagCovariance,
    GridField,
    PresetLabel,
    SpectralModel,
    StateLike,
    StateVector,
)

logger = logging.getLogger(__name__)

DEFAULT_GRID_FACTOR = 3


# --- 模型构造 ---
def build_model(preset: Union[str, PresetLabel], n_modes: Optional[int] = None,
                grid_size: Optional[int] = None, params: Optional[Mapping[str, Any]] = None) -> SpectralModel:
    """
    按预设构造 SpectralModel。

    HeatDirichlet:            a_k = -(kπ)², c_k = noise_scale (默认 1)
    ScaledIdentityHOneNoise:  a_k = -1/2,    c_k = (kπ)^(-2β), 要求 β > 2
    Custom:                   params 中给出 eigenvalues / noise_coeffs, 或 spectrum_csv 路径
    """
    label = PresetLabel.parse(preset)
    params = dict(params or {})

    if label is PresetLabel.CUSTOM:
        if "spectrum_csv" in params:
            a, c = load_spectrum_csv(params["spectrum_csv"])
        else:
            if "eigenvalues" not in params or "noise_coeffs" not in params:
                raise ModelError("Custom preset needs 'eigenvalues' and 'noise_coeffs' (or 'spectrum_csv')")
            a = np.asarray(params["eigenvalues"], dtype=float)
            c = np.asarray(params["noise_coeffs"], dtype=float)
        if n_modes is None:
            n_modes = int(a.shape[0])
    else:
        if n_modes is None or int(n_modes) < 1:
            raise ModelError(f"n_modes must be >= 1, got {n_modes}")
        k = np.arange(1, int(n_modes) + 1, dtype=float)
        if label is PresetLabel.HEAT_DIRICHLET:
            scale = float(params.get("noise_scale", 1.0))
            if scale < 0:
                raise ModelError(f"noise_scale must be nonnegative, got {scale}")
            a = -(k * np.pi) ** 2
            c = np.full(int(n_modes), scale)
        else:
            if "beta" not in params:
                raise ModelError("ScaledIdentityHOneNoise preset needs parameter 'beta' (beta > 2)")
            beta = float(params["beta"])
            if not beta > 2:
                raise ModelError(f"ScaledIdentityHOneNoise requires beta > 2, got beta={beta}")
            a = np.full(int(n_modes), -0.5)
            c = (k * np.pi) ** (-2.0 * beta)

    if grid_size is None:
        grid_size = DEFAULT_GRID_FACTOR * int(n_modes)
    model = SpectralModel(
        n_modes=int(n_modes),
        eigenvalues=a,
        noise_coeffs=c,
        grid_size=int(grid_size),
        preset_label=label,
    )
    logger.debug(f"built {model!r}")
    return model


def load_spectrum_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """两列 CSV (a_k, c_k); 允许表头行与 '#' 注释"""
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                parts = [p.strip() for p in text.split(",")]
                if len(parts) != 2:
                    raise ModelError(f"{path}:{line_no}: expected two columns (a_k, c_k), got {len(parts)}")
                try:
                    rows.append((float(parts[0]), float(parts[1])))
                except ValueError:
                    if rows:
                        raise ModelError(f"{path}:{line_no}: non-numeric entry {text!r}")
                    # 表头
    except OSError as e:
        raise ModelError(f"cannot read spectrum file {path}: {e}") from e
    if not rows:
        raise ModelError(f"spectrum file {path} has no data rows")
    table = np.asarray(rows, dtype=float)
    return table[:, 0], table[:, 1]


# --- 半群与协方差 ---
def _check_time(t: float, name: str = "t") -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ModelError(f"{name} must be a finite nonnegative time, got {t}")
    return t


def semigroup_factors(model: SpectralModel, t: float) -> np.ndarray:
    """e^{a_k t}"""
    return np.exp(model.eigenvalues * _check_time(t))


def semigroup_apply(model: SpectralModel, t: float, v: StateLike) -> StateVector:
    coeffs = model.coeffs_of(v)
    return StateVector(semigroup_factors(model, t) * coeffs)


def qt_variances(model: SpectralModel, t: float) -> np.ndarray:
    """c_k (1 - e^{2 a_k t}) / (-2 a_k), 用 expm1 避免小 t 下的相消"""
    t = _check_time(t)
    a = model.eigenvalues
    return model.noise_coeffs * (-np.expm1(2.0 * a * t)) / (-2.0 * a)


def covariance_Qt(model: SpectralModel, t: float) -> DiagCovariance:
    return DiagCovariance(qt_variances(model, t))


def covariance_Qinf(model: SpectralModel) -> DiagCovariance:
    return DiagCovariance(model.noise_coeffs / (-2.0 * model.eigenvalues))


def resolvent_mollify(model: SpectralModel, n: float, x: StateLike) -> StateVector:
    """n R(n, A) x = n/(n - a_k) x_k"""
    n = float(n)
    if not n > 0:
        raise ModelError(f"resolvent parameter n must be > 0, got {n}")
    coeffs = model.coeffs_of(x)
    return StateVector(n / (n - model.eigenvalues) * coeffs)


# --- 网格变换 ---
def synthesize(model: SpectralModel, coeffs: np.ndarray) -> np.ndarray:
    """系数 (..., N) -> 网格值 (..., M)"""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != model.n_modes:
        raise ModelError(f"expected {model.n_modes} coefficients, got {coeffs.shape[-1]}")
    padded = np.zeros(coeffs.shape[:-1] + (model.grid_size,))
    padded[..., :model.n_modes] = coeffs
    return fft.dst(padded, type=1, axis=-1) / np.sqrt(2.0)


def analyze(model: SpectralModel, values: np.ndarray) -> np.ndarray:
    """网格值 (..., M) -> 系数 (..., N), 离散 L² 投影"""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != model.grid_size:
        raise ModelError(f"expected {model.grid_size} grid values, got {values.shape[-1]}")
    full = fft.dst(values, type=1, axis=-1)
    return full[..., :model.n_modes] / (np.sqrt(2.0) * (model.grid_size + 1))


def to_grid(model: SpectralModel, v: StateLike) -> GridField:
    return GridField(synthesize(model, model.coeffs_of(v)))


def from_grid(model: SpectralModel, f: Union[GridField, np.ndarray]) -> StateVector:
    values = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)
    return StateVector(analyze(model, values))


def eval_at(model: SpectralModel, v: StateLike, xi) -> np.ndarray:
    """任意点 ξ ∈ [0,1] 处的正弦级数值"""
    coeffs = model.coeffs_of(v)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return np.sqrt(2.0) * np.sin(np.outer(xi, model.wavenumbers)) @ coeffs


# --- 范数 ---
def norms_batch(model: SpectralModel, coeffs: np.ndarray) -> Dict[str, np.ndarray]:
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    l2 = np.sqrt((coeffs * coeffs).sum(axis=-1))
    h1 = np.sqrt(((model.wavenumbers * coeffs) ** 2).sum(axis=-1))
    sup = np.abs(synthesize(model, coeffs)).max(axis=-1)
    return {"l2": l2, "sup_grid": sup, "h1": h1}


def norms(model: SpectralModel, v: StateLike) -> Dict[str, float]:
    result = norms_batch(model, model.coeffs_of(v)[None, :])
    return {key: float(val[0]) for key, val in result.items()}


# --- 采样 ---
def sample_states(model: SpectralModel, n: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """x_k ~ scale · N(0,1) / k, 形状 (n, N); 漂移检验共用"""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(n), model.n_modes))
    return scale * z / np.arange(1, model.n_modes + 1, dtype=float)
