# -------------------------------------------------------------
# 非线性漂移 F: 求值, 耗散性估计, Yosida 预解与 Mehler 光滑化
# -------------------------------------------------------------
"""
漂移的四种形式 (DriftVariant):

  LINEAR              F(x) = ζ₂ x
  NEMYTSKII_GRADIENT  F(f)(ξ) = -φ′(f(ξ)) + ζ₂ f(ξ), 在网格上逐点求值后投影回 N 个模
  KERNEL_CUBIC        F(x) = V(x,x,x) + ζ₂ x
  ZERO                F ≡ 0

G = F - ζ₂·id 是耗散的; Yosida 预解 x_δ 解 y - δ G(y) = x, F_δ(x) = F(x_δ)。
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize

from src.common.errors import DriftError, NonFiniteDriftError, SolverError
from src.common.settings import LabSettings
from src.common.types import DiagCovariance, GridField, SpectralModel, StateLike, StateVector
from src.spectral.core import analyze, covariance_Qinf, sample_states, synthesize
from src.spectral.kernels import KernelForm, KernelSpec, kernel_apply, kernel_apply_batch

logger = logging.getLogger(__name__)

PROPERTY_SLACK = 1e-8


class DriftVariant(Enum):
    LINEAR = "linear"
    NEMYTSKII_GRADIENT = "nemytskii_gradient"
    KERNEL_CUBIC = "kernel_cubic"
    ZERO = "zero"


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """
    漂移描述。poly_coeffs 是 φ′ 的升幂系数 (φ′(y) = Σ c_i y^i)。
    zeta 为 A+F 的联合耗散常数; 缺省时取 max_k a_k + ζ₂。
    growth_exponent 仅作元数据保留。
    """
    variant: DriftVariant
    zeta2: float = 0.0
    poly_coeffs: Tuple[float, ...] = ()
    kernel: Optional[KernelSpec] = None
    zeta: Optional[float] = None
    growth_exponent: Optional[int] = None

    def __post_init__(self):
        variant = DriftVariant(self.variant)
        object.__setattr__(self, "variant", variant)
        zeta2 = float(self.zeta2)
        if not np.isfinite(zeta2):
            raise DriftError(f"zeta2 must be finite, got {self.zeta2}")
        if variant is DriftVariant.ZERO and zeta2 != 0.0:
            raise DriftError("Zero drift has zeta2 = 0")
        object.__setattr__(self, "zeta2", zeta2)
        coeffs = tuple(float(c) for c in self.poly_coeffs)
        if variant is DriftVariant.NEMYTSKII_GRADIENT:
            if not coeffs or not np.all(np.isfinite(coeffs)):
                raise DriftError("NemytskiiGradient drift needs finite polynomial coefficients for φ′")
        object.__setattr__(self, "poly_coeffs", coeffs)
        if variant is DriftVariant.KERNEL_CUBIC and self.kernel is None:
            raise DriftError("KernelCubic drift needs a kernel")

    # --- 构造器 ---
    @classmethod
    def zero(cls) -> "DriftSpec":
        return cls(DriftVariant.ZERO)

    @classmethod
    def linear(cls, zeta2: float) -> "DriftSpec":
        return cls(DriftVariant.LINEAR, zeta2=zeta2)

    @classmethod
    def nemytskii(cls, poly_coeffs: Sequence[float], zeta2: float = 0.0, **kwargs) -> "DriftSpec":
        return cls(DriftVariant.NEMYTSKII_GRADIENT, zeta2=zeta2, poly_coeffs=tuple(poly_coeffs), **kwargs)

    @classmethod
    def kernel_cubic(cls, kernel: KernelSpec, zeta2: float = 0.0, **kwargs) -> "DriftSpec":
        return cls(DriftVariant.KERNEL_CUBIC, zeta2=zeta2, kernel=kernel, **kwargs)

    @property
    def is_zero(self) -> bool:
        return self.variant is DriftVariant.ZERO

    @property
    def has_nonlinearity(self) -> bool:
        return self.variant in (DriftVariant.NEMYTSKII_GRADIENT, DriftVariant.KERNEL_CUBIC)

    def effective_zeta(self, model: SpectralModel) -> float:
        if self.zeta is not None:
            return float(self.zeta)
        return model.max_eigenvalue + self.zeta2

    def dphi(self, y: np.ndarray) -> np.ndarray:
        return P.polyval(y, self.poly_coeffs)

    def d2phi(self, y: np.ndarray) -> np.ndarray:
        return P.polyval(y, P.polyder(self.poly_coeffs)) if len(self.poly_coeffs) > 1 else np.zeros_like(y)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.value,
            "zeta2": self.zeta2,
            "poly_coeffs": list(self.poly_coeffs),
            "kernel": None if self.kernel is None else self.kernel.form.value,
            "zeta": self.zeta,
        }


@dataclass
class DissipativityReport:
    zeta2_hat: float
    n_pairs: int
    max_violation_pair: Tuple[StateVector, StateVector]

    def to_dict(self) -> Dict[str, Any]:
        x, y = self.max_violation_pair
        return {
            "zeta2_hat": self.zeta2_hat,
            "n_pairs": self.n_pairs,
            "witness_x": x.coeffs.tolist(),
            "witness_y": y.coeffs.tolist(),
        }


@dataclass
class PropertyRow:
    """一条性质检查: 最坏情形下的 lhs / rhs 与见证点"""
    name: str
    lhs: float
    rhs: float
    passed: bool
    slack: float = PROPERTY_SLACK
    witness: Optional[List[float]] = None
    delta: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "property": self.name,
            "delta": self.delta,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "pass": self.passed,
            "witness": self.witness,
        }


@dataclass
class PropertyReport:
    rows: List[PropertyRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> List[PropertyRow]:
        return [r for r in self.rows if not r.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "rows": [r.to_dict() for r in self.rows]}


# --- 求值 ---
def _check_drift(model: SpectralModel, drift: DriftSpec):
    if drift.variant is DriftVariant.KERNEL_CUBIC:
        drift.kernel.check_model(model)


def drift_on_grid(drift: DriftSpec, f: GridField) -> GridField:
    """Nemytskii 漂移的逐点部分 -φ′(f) + ζ₂ f"""
    if drift.variant is not DriftVariant.NEMYTSKII_GRADIENT:
        raise DriftError("drift_on_grid is defined for NemytskiiGradient drifts only")
    return GridField(-drift.dphi(f.values) + drift.zeta2 * f.values)


def drift_eval_batch(model: SpectralModel, drift: DriftSpec, X: np.ndarray, strict: bool = True) -> np.ndarray:
    """
    F 在一批状态 (B, N) 上的系数。
    strict=True 时溢出抛 NonFiniteDriftError; 否则返回含 inf/nan 的行, 由调用方标记发散。
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    variant = drift.variant
    if variant is DriftVariant.ZERO:
        return np.zeros_like(X)
    if variant is DriftVariant.LINEAR:
        return drift.zeta2 * X
    _check_drift(model, drift)
    with np.errstate(over="ignore", invalid="ignore"):
        if variant is DriftVariant.NEMYTSKII_GRADIENT:
            out = analyze(model, -drift.dphi(synthesize(model, X))) + drift.zeta2 * X
        else:
            out = kernel_apply_batch(model, drift.kernel, X, X, X) + drift.zeta2 * X
    if strict and not np.all(np.isfinite(out)):
        with np.errstate(invalid="ignore"):
            biggest = float(np.nanmax(np.abs(X))) if X.size else float("nan")
        raise NonFiniteDriftError(f"{variant.value} drift overflowed", biggest)
    return out


def drift_eval(model: SpectralModel, drift: DriftSpec, x: StateLike) -> StateVector:
    return StateVector(drift_eval_batch(model, drift, model.coeffs_of(x)[None, :])[0])


def drift_jacobian(model: SpectralModel, drift: DriftSpec, x: StateLike) -> np.ndarray:
    """截断漂移的精确 Jacobian (N, N)"""
    xc = model.coeffs_of(x)
    n = model.n_modes
    eye = np.eye(n)
    if drift.variant is DriftVariant.ZERO:
        return np.zeros((n, n))
    if drift.variant is DriftVariant.LINEAR:
        return drift.zeta2 * eye
    _check_drift(model, drift)
    S = model.basis
    h = model.grid_weight
    if drift.variant is DriftVariant.NEMYTSKII_GRADIENT:
        curvature = drift.d2phi(S @ xc)
        return -h * (S.T * curvature) @ S + drift.zeta2 * eye
    kernel = drift.kernel
    if kernel.form is KernelForm.RANK_ONE:
        kc = kernel.factor_coeffs(model)
        return -3.0 * float(kc @ xc) ** 2 * np.outer(kc, kc) + drift.zeta2 * eye
    g = S @ xc
    kgg = np.einsum("imkl,k,l->im", kernel.values, g, g)
    return h * S.T @ (3.0 * h ** 3 * kgg) @ S + drift.zeta2 * eye


# --- 耗散性 ---
def dissipativity_estimate(model: SpectralModel, drift: DriftSpec, n_pairs: int, sampler_seed: int,
                           scale: float = 1.0, delta: Optional[float] = None) -> DissipativityReport:
    """
    ζ̂₂ = max ⟨F(x)-F(y), x-y⟩ / ‖x-y‖² over sampled pairs。
    delta 给定时对 Yosida 近似 F_δ 求同一量。
    """
    if int(n_pairs) < 1:
        raise DriftError(f"n_pairs must be >= 1, got {n_pairs}")
    states = sample_states(model, 2 * int(n_pairs), sampler_seed, scale)
    X, Y = states[0::2], states[1::2]
    if delta is None:
        FX = drift_eval_batch(model, drift, X)
        FY = drift_eval_batch(model, drift, Y)
    else:
        FX = yosida_F_batch(model, drift, delta, X)
        FY = yosida_F_batch(model, drift, delta, Y)
    D = X - Y
    quotient = ((FX - FY) * D).sum(axis=-1) / (D * D).sum(axis=-1)
    worst = int(np.argmax(quotient))
    report = DissipativityReport(
        zeta2_hat=float(quotient[worst]),
        n_pairs=int(n_pairs),
        max_violation_pair=(StateVector(X[worst]), StateVector(Y[worst])),
    )
    logger.debug(f"dissipativity estimate {drift.variant.value}: zeta2_hat={report.zeta2_hat:.6g}")
    return report


def validate_drift(model: SpectralModel, drift: DriftSpec, lattice_radius: float = 10.0,
                   n_samples: int = 256, seed: int = 0) -> PropertyReport:
    """DriftSpec 不变量的数值认证"""
    report = PropertyReport()
    _check_drift(model, drift)
    if drift.variant is DriftVariant.NEMYTSKII_GRADIENT:
        lattice = np.linspace(-lattice_radius, lattice_radius, 4001)
        increments = np.diff(drift.dphi(lattice))
        worst = int(np.argmin(increments))
        report.rows.append(PropertyRow(
            name="dphi-nondecreasing",
            lhs=float(increments[worst]), rhs=0.0,
            passed=bool(increments[worst] >= -PROPERTY_SLACK),
            witness=[float(lattice[worst]), float(lattice[worst + 1])],
        ))
        degree = len(drift.poly_coeffs) - 1
        if degree > 3 and 2 * (model.grid_size + 1) <= (degree + 1) * model.n_modes:
            logger.warning(f"⚠️ φ′ of degree {degree} aliases on grid_size={model.grid_size}; "
                           f"need grid_size >= {(degree + 1) * model.n_modes // 2}")
    if drift.variant is DriftVariant.KERNEL_CUBIC:
        states = sample_states(model, 2 * n_samples, seed)
        H, X = states[0::2], states[1::2]
        values = (kernel_apply_batch(model, drift.kernel, H, X, X) * H).sum(axis=-1)
        worst = int(np.argmax(values))
        report.rows.append(PropertyRow(
            name="kernel-negative",
            lhs=float(values[worst]), rhs=0.0,
            passed=bool(values[worst] <= PROPERTY_SLACK),
            witness=H[worst].tolist(),
        ))
    bound = model.max_eigenvalue + drift.zeta2
    zeta = drift.effective_zeta(model)
    if zeta < bound - PROPERTY_SLACK:
        logger.warning(f"⚠️ declared zeta={zeta:.6g} is below max a_k + zeta2 = {bound:.6g}")
    report.rows.append(PropertyRow(
        name="zeta-consistent", lhs=zeta, rhs=bound,
        passed=bool(zeta <= bound + PROPERTY_SLACK),
    ))
    return report


# --- Yosida 预解 ---
def _monotone_scalar_solve(fun, dfun, target: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """逐点解 fun(g) = target, fun 严格递增; 几何扩张括号 + 带保护的 Newton"""
    target = np.asarray(target, dtype=float)
    bound = 1.0 + np.abs(target)
    for _ in range(200):
        bad = (fun(-bound) > target) | (fun(bound) < target)
        if not np.any(bad):
            break
        bound = np.where(bad, 2.0 * bound, bound)
    lo, hi = -bound, bound.copy()
    g = np.clip(target, lo, hi)
    tol = 1e-15 * (1.0 + np.abs(target))
    for _ in range(max_iter):
        r = fun(g) - target
        lo = np.where(r < 0, g, lo)
        hi = np.where(r > 0, g, hi)
        if np.all(np.abs(r) <= tol) or np.all(hi - lo <= 1e-15 * (1.0 + np.abs(g))):
            break
        d = dfun(g)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = g - r / d
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        g = np.where(np.abs(r) <= tol, g, np.where(inside, newton, 0.5 * (lo + hi)))
    return g


def _initial_resolvent_guess(model: SpectralModel, drift: DriftSpec, delta: float, x: np.ndarray) -> np.ndarray:
    if drift.variant is DriftVariant.NEMYTSKII_GRADIENT:
        # 网格上 y + δ φ′(y) = x 的逐点根, 投影后作 Newton 初值
        grid = _monotone_scalar_solve(
            lambda g: g + delta * drift.dphi(g),
            lambda g: 1.0 + delta * drift.d2phi(g),
            synthesize(model, x),
        )
        return analyze(model, grid)
    if drift.variant is DriftVariant.KERNEL_CUBIC and drift.kernel.form is KernelForm.RANK_ONE:
        # s = ⟨k, y⟩ 满足 s + δ‖kc‖² s³ = ⟨k, x⟩, 于是 y = x - δ s³ kc
        kc = drift.kernel.factor_coeffs(model)
        kk = float(kc @ kc)
        target = float(kc @ x)
        if target == 0.0 or kk == 0.0:
            return x.copy()
        width = abs(target) + 1.0
        s = optimize.brentq(lambda s: s + delta * kk * s ** 3 - target, -width, width, xtol=1e-15, rtol=4e-16)
        return x - delta * s ** 3 * kc
    return x.copy()


def _resolvent_residual(model: SpectralModel, drift: DriftSpec, delta: float, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    Fy = drift_eval_batch(model, drift, y[None, :])[0]
    return y - delta * (Fy - drift.zeta2 * y) - x


def yosida_resolve(model: SpectralModel, drift: DriftSpec, delta: float, x: StateLike,
                   initial: Optional[StateLike] = None, tol: Optional[float] = None,
                   max_iter: Optional[int] = None) -> StateVector:
    """
    解 y - δ(F(y) - ζ₂y) = x, 阻尼 Newton + 回溯;
    收敛判据 ‖r‖ ≤ tol·(1 + ‖x‖), 失败抛 SolverError (带最后残差)。
    """
    delta = float(delta)
    if not delta > 0:
        raise DriftError(f"delta must be > 0, got {delta}")
    xc = model.coeffs_of(x)
    if not drift.has_nonlinearity:
        # G = F - ζ₂·id ≡ 0
        return StateVector(xc)
    _check_drift(model, drift)
    tol = LabSettings.RESOLVENT_TOL if tol is None else tol
    max_iter = LabSettings.RESOLVENT_MAX_ITER if max_iter is None else max_iter
    threshold = tol * (1.0 + float(np.linalg.norm(xc)))

    y = model.coeffs_of(initial).copy() if initial is not None else _initial_resolvent_guess(model, drift, delta, xc)
    r = _resolvent_residual(model, drift, delta, y, xc)
    res = float(np.linalg.norm(r))
    eye = np.eye(model.n_modes)
    for iteration in range(max_iter):
        if res <= threshold:
            return StateVector(y)
        jac = (1.0 + delta * drift.zeta2) * eye - delta * drift_jacobian(model, drift, y)
        step = np.linalg.solve(jac, -r)
        lam = 1.0
        while True:
            trial = y + lam * step
            r_trial = _resolvent_residual(model, drift, delta, trial, xc)
            res_trial = float(np.linalg.norm(r_trial))
            if np.isfinite(res_trial) and (res_trial <= (1.0 - 1e-4 * lam) * res or lam < 1e-8):
                break
            lam *= 0.5
        y, r, res = trial, r_trial, res_trial
    if res <= threshold:
        return StateVector(y)
    raise SolverError(res, max_iter)


def yosida_resolve_batch(model: SpectralModel, drift: DriftSpec, delta: float, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not drift.has_nonlinearity:
        return X.copy()
    return np.stack([yosida_resolve(model, drift, delta, row).coeffs for row in X])


def yosida_F(model: SpectralModel, drift: DriftSpec, delta: float, x: StateLike) -> StateVector:
    """F_δ(x) = F(x_δ)"""
    return drift_eval(model, drift, yosida_resolve(model, drift, delta, x))


def yosida_G(model: SpectralModel, drift: DriftSpec, delta: float, x: StateLike) -> StateVector:
    """G_δ(x) = G(x_δ) = (x_δ - x)/δ"""
    xd = yosida_resolve(model, drift, delta, x).coeffs
    return StateVector(drift_eval(model, drift, xd).coeffs - drift.zeta2 * xd)


def yosida_F_batch(model: SpectralModel, drift: DriftSpec, delta: float, X: np.ndarray) -> np.ndarray:
    return drift_eval_batch(model, drift, yosida_resolve_batch(model, drift, delta, X))


# --- Mehler 光滑化 ---
def _smoothing_variances(model: SpectralModel, smoothing_cov: Optional[DiagCovariance]) -> np.ndarray:
    q = covariance_Qinf(model).variances if smoothing_cov is None else np.asarray(smoothing_cov.variances)
    if q.shape[0] != model.n_modes:
        raise DriftError(f"smoothing covariance has {q.shape[0]} modes, model has {model.n_modes}")
    if np.any(q <= 0):
        raise DriftError("Mehler smoothing needs a strictly positive covariance in every mode")
    return q


def mehler_smooth_stats(model: SpectralModel, drift: DriftSpec, delta: float, s: float,
                        smoothing_cov: Optional[DiagCovariance], x: StateLike, n_samples: int,
                        seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """F_{δ,s}(x) 的 MC 均值与逐分量标准误; 同一 seed 下各 x 共用随机数"""
    s = float(s)
    if not s > 0:
        raise DriftError(f"smoothing time s must be > 0, got {s}")
    if int(n_samples) < 1:
        raise DriftError(f"n_samples must be >= 1, got {n_samples}")
    q = _smoothing_variances(model, smoothing_cov)
    xc = model.coeffs_of(x)
    mean = np.exp(-s / (2.0 * q)) * xc
    std = np.sqrt(-q * np.expm1(-s / q))
    z = np.random.default_rng(seed).standard_normal((int(n_samples), model.n_modes))
    values = yosida_F_batch(model, drift, delta, mean + std * z)
    avg = values.mean(axis=0)
    if values.shape[0] > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    else:
        se = np.zeros_like(avg)
    return avg, se


def mehler_smooth(model: SpectralModel, drift: DriftSpec, delta: float, s: float,
                  smoothing_cov: Optional[DiagCovariance], x: StateLike, n_samples: int,
                  seed: int) -> StateVector:
    """F_{δ,s}(x) = ∫ F_δ(y) N(e^{-(s/2)Q⁻¹}x, Q(I - e^{-sQ⁻¹}))(dy)"""
    avg, _ = mehler_smooth_stats(model, drift, delta, s, smoothing_cov, x, n_samples, seed)
    return StateVector(avg)


# --- 性质检查 ---
def yosida_property_check(model: SpectralModel, drift: DriftSpec, delta: float, n_pairs: int, seed: int,
                          delta_ladder: Sequence[float] = (1.0, 0.1, 0.01), n_ladder_points: int = 10,
                          slack: float = PROPERTY_SLACK) -> PropertyReport:
    """
    在采样点对上检查:
      ‖G_δ(x)-G_δ(z)‖ ≤ (2/δ)‖x-z‖
      ⟨G_δ(x)-G_δ(z), x-z⟩ ≤ 0
      ‖G_δ(x)‖ ≤ ‖G(x)‖
      ‖F_δ(x)‖ ≤ (2+|ζ₂|δ)‖G(x)‖ + ‖F(x)‖
      ⟨F_δ(x)-F_δ(z), x-z⟩ ≤ max(ζ₂,0)‖x-z‖²
    以及 δ 阶梯上 ‖F_δ(x) - F(x)‖ 单调下降。
    """
    delta = float(delta)
    states = sample_states(model, 2 * int(n_pairs), seed)
    X, Z = states[0::2], states[1::2]
    XD, ZD = yosida_resolve_batch(model, drift, delta, X), yosida_resolve_batch(model, drift, delta, Z)
    FX, FXD, FZD = (drift_eval_batch(model, drift, A) for A in (X, XD, ZD))
    GX = FX - drift.zeta2 * X
    GXD, GZD = FXD - drift.zeta2 * XD, FZD - drift.zeta2 * ZD
    D = X - Z
    dist = np.linalg.norm(D, axis=-1)

    report = PropertyReport()

    def add(name: str, lhs: np.ndarray, rhs: np.ndarray, witness_rows: np.ndarray):
        excess = lhs - rhs
        worst = int(np.argmax(excess))
        tol = slack * (1.0 + abs(float(rhs[worst])))
        report.rows.append(PropertyRow(
            name=name, lhs=float(lhs[worst]), rhs=float(rhs[worst]),
            passed=bool(excess[worst] <= tol), slack=slack,
            witness=witness_rows[worst].tolist(), delta=delta,
        ))

    add("yosida-lipschitz", np.linalg.norm(GXD - GZD, axis=-1), (2.0 / delta) * dist, X)
    add("yosida-dissipative", ((GXD - GZD) * D).sum(axis=-1), np.zeros(len(D)), X)
    add("yosida-norm-bound", np.linalg.norm(GXD, axis=-1), np.linalg.norm(GX, axis=-1), X)
    add("yosida-F-bound", np.linalg.norm(FXD, axis=-1),
        (2.0 + abs(drift.zeta2) * delta) * np.linalg.norm(GX, axis=-1) + np.linalg.norm(FX, axis=-1), X)
    add("yosida-one-sided", ((FXD - FZD) * D).sum(axis=-1), max(drift.zeta2, 0.0) * dist ** 2, X)

    ladder = sorted((float(d) for d in delta_ladder), reverse=True)
    points = X[:max(1, int(n_ladder_points))]
    errors = np.stack([
        np.linalg.norm(yosida_F_batch(model, drift, d, points) - drift_eval_batch(model, drift, points), axis=-1)
        for d in ladder
    ])
    increase = np.diff(errors, axis=0) if len(ladder) > 1 else np.zeros((1, len(points)))
    worst_pt = int(np.argmax(increase.max(axis=0)))
    scale = 1.0 + np.linalg.norm(drift_eval_batch(model, drift, points), axis=-1)
    report.rows.append(PropertyRow(
        name="yosida-ladder-convergence",
        lhs=float(increase.max()), rhs=0.0,
        passed=bool(np.all(increase <= slack * scale[None, :])),
        slack=slack, witness=points[worst_pt].tolist(), delta=min(ladder),
    ))
    for row in report.failures():
        logger.warning(f"⚠️ {row.name} violated at delta={row.delta}: lhs={row.lhs:.6g} > rhs={row.rhs:.6g}")
    return report


def mehler_property_check(model: SpectralModel, drift: DriftSpec, delta: float, s_list: Sequence[float],
                          x_list: np.ndarray, n_samples: int, seed: int,
                          smoothing_cov: Optional[DiagCovariance] = None,
                          sigma: float = LabSettings.SIGMA_LEVEL) -> Tuple[List[Dict[str, float]], PropertyReport]:
    """
    s 阶梯上 e(s) = mean_x ‖F_{δ,s}(x) - F_δ(x)‖ 在 MC 噪声内单调下降;
    公共随机数下 ⟨F_{δ,s}(x)-F_{δ,s}(z), D(x-z)⟩ ≤ max(ζ₂,0)‖D(x-z)‖², D = e^{-(s/2)Q⁻¹}。
    """
    s_list = sorted((float(s) for s in s_list), reverse=True)
    X = np.atleast_2d(np.asarray(x_list, dtype=float))
    FD = yosida_F_batch(model, drift, delta, X)
    q = _smoothing_variances(model, smoothing_cov)

    rows: List[Dict[str, float]] = []
    smoothed: List[np.ndarray] = []
    for s in s_list:
        stats = [mehler_smooth_stats(model, drift, delta, s, smoothing_cov, x, n_samples, seed) for x in X]
        means = np.stack([m for m, _ in stats])
        ses = np.stack([se for _, se in stats])
        smoothed.append(means)
        err = np.linalg.norm(means - FD, axis=-1)
        rows.append({
            "s": s,
            "error": float(err.mean()),
            "stderr": float(np.linalg.norm(ses, axis=-1).mean()),
        })

    report = PropertyReport()
    ok = True
    worst = 0.0
    for prev, cur in zip(rows, rows[1:]):
        excess = cur["error"] - prev["error"] - sigma * (cur["stderr"] + prev["stderr"])
        worst = max(worst, excess)
        ok &= excess <= PROPERTY_SLACK
    report.rows.append(PropertyRow(
        name="mehler-ladder-convergence", lhs=rows[-1]["error"], rhs=rows[0]["error"],
        passed=bool(ok), slack=worst, delta=float(delta),
    ))

    if len(X) >= 2:
        for s, means in zip(s_list, smoothed):
            damp = np.exp(-s / (2.0 * q))
            Dx = (X[:-1] - X[1:]) * damp
            lhs = ((means[:-1] - means[1:]) * Dx).sum(axis=-1)
            rhs = max(drift.zeta2, 0.0) * (Dx * Dx).sum(axis=-1)
            i = int(np.argmax(lhs - rhs))
            report.rows.append(PropertyRow(
                name="mehler-one-sided", lhs=float(lhs[i]), rhs=float(rhs[i]),
                passed=bool(lhs[i] - rhs[i] <= PROPERTY_SLACK * (1.0 + abs(float(rhs[i])))),
                witness=X[i].tolist(), delta=float(delta),
            ))
    return rows, report


__all__ = [
    "DriftVariant", "DriftSpec", "DissipativityReport", "PropertyRow", "PropertyReport",
    "KernelSpec", "KernelForm", "kernel_apply",
    "drift_on_grid", "drift_eval", "drift_eval_batch", "drift_jacobian",
    "dissipativity_estimate", "validate_drift",
    "yosida_resolve", "yosida_resolve_batch", "yosida_F", "yosida_G", "yosida_F_batch",
    "mehler_smooth", "mehler_smooth_stats", "yosida_property_check", "mehler_property_check",
]
