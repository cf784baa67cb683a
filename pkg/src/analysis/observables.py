# -------------------------------------------------------------
# 柱函数 ξ_A(X), Kolmogorov 算子 N₀, OU 的 Mehler 闭式与 MC 半群估计
# -------------------------------------------------------------
"""
柱函数 φ(x) = Σ aᵢ trig(⟨x, hᵢ⟩), trig ∈ {sin, cos}。

N₀φ = ½Tr[C∇²φ] + ⟨x, A∇φ⟩ + ⟨F(x), ∇φ⟩ 直接按定义求值:
  sin 项: a[-½⟨Ch,h⟩ sin θ + (⟨x,Ah⟩ + ⟨F,h⟩) cos θ]
  cos 项: a[-½⟨Ch,h⟩ cos θ - (⟨x,Ah⟩ + ⟨F,h⟩) sin θ]
"""
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.common.errors import ConfigError, DriftError, ModelError
from src.common.settings import LabSettings
from src.common.stats import mean_stderr
from src.common.types import SpectralModel, StateLike, StateVector
from src.spectral.core import qt_variances, semigroup_factors
from src.spectral.drift import DriftSpec, drift_eval_batch
from src.dynamics.engine import IntegratorConfig
from src.dynamics.parallel import run_paths

logger = logging.getLogger(__name__)


class TrigKind(Enum):
    SIN = "sin"
    COS = "cos"


@dataclass(frozen=True, eq=False)
class CylTerm:
    amplitude: float
    kind: TrigKind
    freq: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", TrigKind(self.kind))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        freq = np.array(self.freq.coeffs if isinstance(self.freq, StateVector) else self.freq, dtype=float)
        if freq.ndim != 1 or not np.all(np.isfinite(freq)):
            raise ModelError("cylindrical frequency must be a finite 1-d vector")
        freq.flags.writeable = False
        object.__setattr__(self, "freq", freq)

    def label(self) -> str:
        active = ",".join(f"{k}:{v:g}" for k, v in enumerate(self.freq) if v != 0)
        return f"{self.amplitude:g}*{self.kind.value}(h={active})"


@dataclass(frozen=True, eq=False)
class CylFunc:
    terms: Tuple[CylTerm, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ModelError("a cylindrical function needs at least one term")
        sizes = {len(t.freq) for t in terms}
        if len(sizes) != 1:
            raise ModelError(f"cylindrical terms have inconsistent mode counts {sorted(sizes)}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def sin(cls, h, amplitude: float = 1.0) -> "CylFunc":
        return cls((CylTerm(amplitude, TrigKind.SIN, h),))

    @classmethod
    def cos(cls, h, amplitude: float = 1.0) -> "CylFunc":
        return cls((CylTerm(amplitude, TrigKind.COS, h),))

    @classmethod
    def constant(cls, n_modes: int, value: float = 1.0) -> "CylFunc":
        """φ ≡ value, 即零频率的 cos 项"""
        return cls.cos(np.zeros(n_modes), value)

    def __add__(self, other: "CylFunc") -> "CylFunc":
        return CylFunc(self.terms + other.terms)

    def scaled(self, factor: float) -> "CylFunc":
        return CylFunc(tuple(CylTerm(factor * t.amplitude, t.kind, t.freq) for t in self.terms))

    @property
    def n_modes(self) -> int:
        return len(self.terms[0].freq)

    @property
    def sup_bound(self) -> float:
        return float(sum(abs(t.amplitude) for t in self.terms))

    def label(self) -> str:
        return " + ".join(t.label() for t in self.terms)

    def check_model(self, model: SpectralModel):
        if self.n_modes != model.n_modes:
            raise ModelError(f"observable has {self.n_modes} modes, model has {model.n_modes}")


# --- 字面量解析 ---
_TERM_RE = re.compile(
    r"^\s*(?P<amp>[+-]?\s*(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?\s*\*?)?\s*"
    r"(?P<kind>sin|cos)\s*\(\s*(?:h\s*=)?\s*(?P<body>[^)]*)\)\s*$"
)


def parse_cylfunc(text: str, n_modes: int, field_path: str = "observables") -> CylFunc:
    """
    解析 'a*sin(h= mode:coeff,...) + b*cos(...)'; 模式编号从 0 开始, 须 < n_modes。
    cos(h=) 表示常数函数。
    """
    pieces = re.split(r"(?<=\))\s*(?=[+-])", text.strip())
    terms = []
    for piece in pieces:
        piece = piece.strip()
        sign = 1.0
        if piece.startswith("+"):
            piece = piece[1:]
        elif piece.startswith("-") and re.match(r"^-\s*(sin|cos)", piece):
            sign, piece = -1.0, piece[1:]
        m = _TERM_RE.match(piece)
        if m is None:
            raise ConfigError(field_path, f"cannot parse cylindrical term {piece!r}")
        amp_text = (m.group("amp") or "1").replace("*", "").replace(" ", "")
        amplitude = sign * float(amp_text)
        freq = np.zeros(int(n_modes))
        body = m.group("body").strip()
        if body:
            for entry in body.split(","):
                mode_text, _, coeff_text = entry.partition(":")
                try:
                    mode = int(mode_text.strip())
                    coeff = float(coeff_text.strip()) if coeff_text.strip() else 1.0
                except ValueError:
                    raise ConfigError(field_path, f"bad frequency entry {entry!r} in {text!r}")
                if not 0 <= mode < n_modes:
                    raise ConfigError(field_path, f"mode {mode} out of range [0, {n_modes}) in {text!r}")
                freq[mode] += coeff
        terms.append(CylTerm(amplitude, TrigKind(m.group("kind")), freq))
    return CylFunc(tuple(terms))


# --- 求值 ---
def _phases(phi: CylFunc, X: np.ndarray) -> np.ndarray:
    """(B, T) 相位 ⟨x, hᵢ⟩"""
    H = np.stack([t.freq for t in phi.terms])
    return (X[:, None, :] * H[None, :, :]).sum(axis=-1)


def _kinds(phi: CylFunc) -> Tuple[np.ndarray, np.ndarray]:
    amps = np.array([t.amplitude for t in phi.terms])
    is_sin = np.array([t.kind is TrigKind.SIN for t in phi.terms])
    return amps, is_sin


def cyl_eval_batch(phi: CylFunc, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    theta = _phases(phi, X)
    amps, is_sin = _kinds(phi)
    return (amps * np.where(is_sin, np.sin(theta), np.cos(theta))).sum(axis=-1)


def cyl_eval(phi: CylFunc, x: StateLike) -> float:
    xc = x.coeffs if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    return float(cyl_eval_batch(phi, xc[None, :])[0])


def cyl_grad_batch(phi: CylFunc, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    theta = _phases(phi, X)
    amps, is_sin = _kinds(phi)
    H = np.stack([t.freq for t in phi.terms])
    dtrig = amps * np.where(is_sin, np.cos(theta), -np.sin(theta))
    return dtrig @ H


def cyl_grad(model: SpectralModel, phi: CylFunc, x: StateLike) -> StateVector:
    phi.check_model(model)
    return StateVector(cyl_grad_batch(phi, model.coeffs_of(x)[None, :])[0])


def apply_N0_batch(model: SpectralModel, drift: DriftSpec, phi: CylFunc, X: np.ndarray,
                   F: Optional[np.ndarray] = None) -> np.ndarray:
    phi.check_model(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if F is None:
        F = drift_eval_batch(model, drift, X)
    H = np.stack([t.freq for t in phi.terms])
    amps, is_sin = _kinds(phi)
    theta = _phases(phi, X)
    trace = (model.noise_coeffs * H * H).sum(axis=-1)              # ⟨Ch, h⟩, (T,)
    first = X @ (model.eigenvalues * H).T + F @ H.T     # ⟨x, Ah⟩ + ⟨F, h⟩, (B, T)
    s, c = np.sin(theta), np.cos(theta)
    value = np.where(is_sin, -0.5 * trace * s + first * c, -0.5 * trace * c - first * s)
    return (amps * value).sum(axis=-1)


def apply_N0(model: SpectralModel, drift: DriftSpec, phi: CylFunc, x: StateLike) -> float:
    return float(apply_N0_batch(model, drift, phi, model.coeffs_of(x)[None, :])[0])


def carre_du_champ_batch(model: SpectralModel, phi: CylFunc, X: np.ndarray) -> np.ndarray:
    """‖C^{1/2}∇φ‖²"""
    grad = cyl_grad_batch(phi, X)
    return (model.noise_coeffs * grad * grad).sum(axis=-1)


def ou_mehler_exact(model: SpectralModel, phi: CylFunc, x: StateLike, t: float,
                    drift: Optional[DriftSpec] = None) -> float:
    """T(t)φ(x) = ∫ φ(e^{tA}x + y) N(0, Q_t)(dy), 逐项闭式"""
    if drift is not None and not drift.is_zero:
        raise DriftError("the Mehler formula is exact only for the Zero drift")
    phi.check_model(model)
    moved = semigroup_factors(model, t) * model.coeffs_of(x)
    q = qt_variances(model, t)
    total = 0.0
    for term in phi.terms:
        damping = np.exp(-0.5 * float((q * term.freq * term.freq).sum()))
        theta = float(moved @ term.freq)
        trig = np.sin(theta) if term.kind is TrigKind.SIN else np.cos(theta)
        total += term.amplitude * damping * trig
    return float(total)


# --- MC 半群 ---
@dataclass
class SemigroupEstimate:
    value: float
    stderr: float
    n_paths: int
    t: float
    n_discarded: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "stderr": self.stderr, "n_paths": self.n_paths, "t": self.t,
                "n_discarded": self.n_discarded}


def propagate(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x: np.ndarray, t: float,
              n_paths: int, seed: int, path_offset: int = 0, desc: str = "Semigroup"):
    """把 x (单点或逐路径初值) 推进到 t; 返回 (终点, 有效掩码)"""
    horizon = cfg.with_horizon(t)
    batch = run_paths(model, drift, horizon, x, n_paths, seed, path_offset=path_offset, desc=desc)
    return batch.final, batch.valid


def semigroup_mc_many(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, phi_list: Sequence[CylFunc],
                      x: StateLike, t: float, n_paths: int, seed: int) -> List[SemigroupEstimate]:
    """同一批路径上估计多个 P(t)φ(x)"""
    if int(n_paths) < 2:
        raise ModelError(f"n_paths must be >= 2, got {n_paths}")
    xc = model.coeffs_of(x, "x")
    for phi in phi_list:
        phi.check_model(model)
    t = float(t)
    if t == 0:
        return [SemigroupEstimate(cyl_eval(phi, xc), 0.0, int(n_paths), 0.0) for phi in phi_list]
    final, valid = propagate(model, drift, cfg, xc, t, n_paths, seed)
    discarded = int((~valid).sum())
    out = []
    for phi in phi_list:
        m, e = mean_stderr(cyl_eval_batch(phi, final[valid]))
        out.append(SemigroupEstimate(float(m), float(e), int(valid.sum()), t, discarded))
    return out


def semigroup_mc(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, phi: CylFunc, x: StateLike,
                 t: float, n_paths: int, seed: int) -> SemigroupEstimate:
    return semigroup_mc_many(model, drift, cfg, [phi], x, t, n_paths, seed)[0]


# --- 生成元差商 ---
@dataclass
class GeneratorQuotient:
    t: float
    quotient: float
    stderr: float
    n0_value: float
    exact_quotient: Optional[float] = None

    @property
    def error(self) -> float:
        return abs(self.quotient - self.n0_value)

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "quotient": self.quotient, "stderr": self.stderr, "n0": self.n0_value,
                "error": self.error, "exact_quotient": self.exact_quotient}


def generator_diff_quotient(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, phi: CylFunc,
                            x: StateLike, t_small: float, n_paths: int, seed: int) -> GeneratorQuotient:
    """(P(t)φ(x) - φ(x))/t 与 N₀φ(x)"""
    t_small = float(t_small)
    if not t_small > 0:
        raise ModelError(f"t_small must be > 0, got {t_small}")
    xc = model.coeffs_of(x, "x")
    base = cyl_eval(phi, xc)
    est = semigroup_mc(model, drift, cfg, phi, xc, t_small, n_paths, seed)
    exact = None
    if drift.is_zero:
        exact = (ou_mehler_exact(model, phi, xc, t_small) - base) / t_small
    return GeneratorQuotient(
        t=t_small,
        quotient=(est.value - base) / t_small,
        stderr=est.stderr / t_small,
        n0_value=apply_N0(model, drift, phi, xc),
        exact_quotient=exact,
    )


def generator_ladder(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, phi: CylFunc, x: StateLike,
                     t_list: Sequence[float], n_paths: int, seed: int,
                     sigma: float = LabSettings.SIGMA_LEVEL) -> Tuple[List[GeneratorQuotient], bool]:
    """
    t 阶梯 (递减) 上的差商; 判定误差 |q - N₀φ| 在噪声底 σ·SE/t 之上单调下降。
    Zero 漂移时另行检查 Mehler 精确差商的误差严格下降。
    """
    ladder = sorted((float(t) for t in t_list), reverse=True)
    rows = [generator_diff_quotient(model, drift, cfg, phi, x, t, n_paths, seed) for t in ladder]
    ok = True
    for prev, cur in zip(rows, rows[1:]):
        floor = sigma * np.hypot(cur.stderr, prev.stderr)
        ok &= cur.error <= prev.error + floor
        if cur.exact_quotient is not None:
            ok &= abs(cur.exact_quotient - cur.n0_value) <= abs(prev.exact_quotient - prev.n0_value) + 1e-12
    for row in rows:
        if row.exact_quotient is not None:
            ok &= abs(row.quotient - row.exact_quotient) <= sigma * row.stderr + 1e-12
    return rows, bool(ok)
