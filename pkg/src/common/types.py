# -------------------------------------------------------------
# 核心数据结构定义
# -------------------------------------------------------------
from enum import Enum
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np

from src.common.errors import ModelError


class PresetLabel(Enum):
    HEAT_DIRICHLET = "HeatDirichlet"
    SCALED_IDENTITY_H1_NOISE = "ScaledIdentityHOneNoise"
    CUSTOM = "Custom"

    @classmethod
    def parse(cls, value: Union[str, "PresetLabel"]) -> "PresetLabel":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower() or member.name.lower() == str(value).lower():
                return member
        raise ModelError(f"unknown preset '{value}' (expected one of {[m.value for m in cls]})")


def _frozen_array(values, name: str, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ModelError(f"{name} must be a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """特征基下的系数向量 (state x ∈ X 的数值替身)"""
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen_array(self.coeffs, "StateVector.coeffs"))

    @property
    def n_modes(self) -> int:
        return int(self.coeffs.shape[0])

    def __len__(self) -> int:
        return self.n_modes

    @classmethod
    def zeros(cls, n_modes: int) -> "StateVector":
        return cls(np.zeros(n_modes))

    @classmethod
    def unit(cls, n_modes: int, mode: int) -> "StateVector":
        v = np.zeros(n_modes)
        v[mode] = 1.0
        return cls(v)


@dataclass(frozen=True, eq=False)
class GridField:
    """配置点 ξ_j = j/(M+1) 上的场值"""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, "GridField.values"))

    @property
    def grid_size(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class DiagCovariance:
    """逐模方差 (Q_t, Q_∞ 的对角表示)"""
    variances: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.variances, "DiagCovariance.variances")
        if np.any(arr < 0):
            raise ModelError("covariance variances must be nonnegative")
        object.__setattr__(self, "variances", arr)

    def trace(self) -> float:
        return float(self.variances.sum())


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """(A, C) 的截断对角表示"""
    n_modes: int
    eigenvalues: np.ndarray
    noise_coeffs: np.ndarray
    grid_size: int
    preset_label: PresetLabel = PresetLabel.CUSTOM

    def __post_init__(self):
        if int(self.n_modes) < 1:
            raise ModelError(f"n_modes must be >= 1, got {self.n_modes}")
        object.__setattr__(self, "n_modes", int(self.n_modes))
        object.__setattr__(self, "grid_size", int(self.grid_size))
        a = _frozen_array(self.eigenvalues, "eigenvalues")
        c = _frozen_array(self.noise_coeffs, "noise_coeffs")
        if a.shape[0] != self.n_modes or c.shape[0] != self.n_modes:
            raise ModelError(
                f"spectrum length mismatch: n_modes={self.n_modes}, "
                f"len(eigenvalues)={a.shape[0]}, len(noise_coeffs)={c.shape[0]}"
            )
        if np.any(a >= 0):
            raise ModelError(f"all eigenvalues must be strictly negative, got max {a.max():.6g}")
        if np.any(c < 0):
            raise ModelError("noise coefficients must be nonnegative")
        if self.grid_size < 2 * self.n_modes:
            raise ModelError(
                f"grid_size={self.grid_size} < 2*n_modes={2 * self.n_modes}; the sine transform would alias"
            )
        if not np.isfinite(np.sum(c / (-2.0 * a))):
            raise ModelError("trace of Q_inf is not finite")
        object.__setattr__(self, "eigenvalues", a)
        object.__setattr__(self, "noise_coeffs", c)
        object.__setattr__(self, "preset_label", PresetLabel.parse(self.preset_label))

    # --- 派生量 ---
    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """kπ, k = 1..N"""
        return np.pi * np.arange(1, self.n_modes + 1, dtype=float)

    @cached_property
    def grid_nodes(self) -> np.ndarray:
        return np.arange(1, self.grid_size + 1, dtype=float) / (self.grid_size + 1)

    @property
    def grid_weight(self) -> float:
        return 1.0 / (self.grid_size + 1)

    @cached_property
    def basis(self) -> np.ndarray:
        """e_k(ξ_j) = √2 sin(kπξ_j), shape (M, N)"""
        return np.sqrt(2.0) * np.sin(np.outer(self.grid_nodes, self.wavenumbers))

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues.max())

    def coeffs_of(self, v: Union["StateVector", np.ndarray], name: str = "state") -> np.ndarray:
        """取系数数组并检查长度"""
        arr = v.coeffs if isinstance(v, StateVector) else np.asarray(v, dtype=float)
        if arr.shape[-1] != self.n_modes:
            raise ModelError(f"{name} has {arr.shape[-1]} modes, model has {self.n_modes}")
        return arr

    def __repr__(self) -> str:
        return (f"SpectralModel(preset={self.preset_label.value}, N={self.n_modes}, M={self.grid_size}, "
                f"a_max={self.max_eigenvalue:.4g})")


StateLike = Union[StateVector, np.ndarray]


def as_state(v: StateLike, model: Optional[SpectralModel] = None) -> StateVector:
    if isinstance(v, StateVector):
        state = v
    else:
        state = StateVector(np.asarray(v, dtype=float))
    if model is not None and state.n_modes != model.n_modes:
        raise ModelError(f"state has {state.n_modes} modes, model has {model.n_modes}")
    return state
