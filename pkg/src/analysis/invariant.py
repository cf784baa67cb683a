# -------------------------------------------------------------
# 不变测度 ν: 三种估计器, 加权 Gauss 的 pCN 采样, 测度层面的恒等式检验
# -------------------------------------------------------------
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from tqdm import tqdm

from src.common.errors import DivergenceError, DriftError, EmptyEnsembleError, ModelError
from src.common.settings import LabSettings
from src.common.stats import effective_sample_size, weighted_mean_stderr, weighted_quantile
from src.common.types import SpectralModel, StateLike
from src.spectral.core import covariance_Qinf, norms_batch, synthesize
from src.spectral.drift import DriftSpec, drift_eval_batch
from src.dynamics.engine import IntegratorConfig, integrate_batch
from src.dynamics.noise import NoisePurpose, standard_normals, uniforms
from src.dynamics.parallel import run_paths
from src.analysis.observables import (
    CylFunc,
    apply_N0_batch,
    carre_du_champ_batch,
    cyl_eval_batch,
)

logger = logging.getLogger(__name__)

PCN_ACCEPTANCE_RANGE = (0.05, 0.95)


class Provenance(Enum):
    LONG_RUN = "LongRun"
    LARGE_TIME_ENSEMBLE = "LargeTimeEnsemble"
    PCN = "PCN"
    CLOSED_FORM_GAUSSIAN = "ClosedFormGaussian"


_CHAINS = (Provenance.LONG_RUN, Provenance.PCN)


@dataclass(frozen=True, eq=False)
class MeasureEnsemble:
    """加权样本云; 链式来源 (LongRun, PCN) 的标准误按逐统计量的自相关 ESS 计算"""
    samples: np.ndarray
    weights: np.ndarray
    provenance: Provenance
    ess: float = float("nan")
    acceptance_rate: Optional[float] = None

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] == 0:
            raise EmptyEnsembleError(f"{Provenance(self.provenance).value} ensemble is empty")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (samples.shape[0],) or np.any(weights < 0):
            raise ModelError("ensemble weights must be nonnegative, one per sample")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ModelError(f"ensemble weights sum to {weights.sum():.17g}, expected 1")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @classmethod
    def uniform(cls, samples: np.ndarray, provenance: Provenance, **kwargs) -> "MeasureEnsemble":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] == 0:
            raise EmptyEnsembleError(f"{Provenance(provenance).value} ensemble is empty")
        n = samples.shape[0]
        if "ess" not in kwargs:
            kwargs["ess"] = float(n)
        return cls(samples, np.full(n, 1.0 / n), provenance, **kwargs)

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_modes(self) -> int:
        return int(self.samples.shape[1])

    def mean_and_se(self, values: np.ndarray) -> Tuple[float, float]:
        values = np.asarray(values, dtype=float)
        if self.provenance in _CHAINS:
            return weighted_mean_stderr(values, self.weights, ess=effective_sample_size(values))
        return weighted_mean_stderr(values, self.weights)

    def header(self) -> List[str]:
        return ["weight"] + [f"mode_{k}" for k in range(self.n_modes)]

    def rows(self):
        for w, x in zip(self.weights, self.samples):
            yield [w, *x]


@dataclass(frozen=True)
class PotentialSpec:
    """U(f) = ∫ φ(f(ξ)) + (ζ₂/2) f(ξ)² dξ; phi_coeffs 为 φ 的升幂系数"""
    phi_coeffs: Tuple[float, ...] = ()
    zeta2: float = 0.0
    lattice_radius: float = 10.0

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.phi_coeffs) or (0.0,)
        object.__setattr__(self, "phi_coeffs", coeffs)
        object.__setattr__(self, "zeta2", float(self.zeta2))
        lattice = np.linspace(-self.lattice_radius, self.lattice_radius, 4001)
        if np.any(np.diff(self.dphi(lattice)) < -1e-12):
            raise DriftError("φ′ must be nondecreasing (φ convex) on the tested range")

    def dphi(self, y: np.ndarray) -> np.ndarray:
        return P.polyval(y, P.polyder(self.phi_coeffs)) if len(self.phi_coeffs) > 1 else np.zeros_like(y)

    def energy_batch(self, model: SpectralModel, X: np.ndarray) -> np.ndarray:
        g = synthesize(model, np.atleast_2d(X))
        return model.grid_weight * (P.polyval(g, self.phi_coeffs) + 0.5 * self.zeta2 * g * g).sum(axis=-1)

    def to_drift(self) -> DriftSpec:
        """F = -∇U = -φ′(f) - ζ₂ f"""
        dcoeffs = tuple(P.polyder(self.phi_coeffs)) if len(self.phi_coeffs) > 1 else (0.0,)
        return DriftSpec.nemytskii(dcoeffs, zeta2=-self.zeta2)


# --- 估计器 ---
def estimate_longrun(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, burn_in: float, thin: int,
                     n_keep: int, seed: int, x0: Optional[StateLike] = None, path_id: int = 0) -> MeasureEnsemble:
    """长度 cfg.t_final 的单条路径, 丢弃 burn_in 时间后每 thin 步取一个样本, 至多 n_keep 个"""
    if burn_in < 0 or int(thin) < 1:
        raise ModelError(f"need burn_in >= 0 and thin >= 1, got burn_in={burn_in}, thin={thin}")
    if burn_in >= cfg.t_final:
        raise EmptyEnsembleError(f"burn_in={burn_in} covers the whole run t_final={cfg.t_final}")
    first = int(math.ceil(burn_in / cfg.dt - 1e-9))
    steps = list(range(first + int(thin), cfg.n_steps + 1, int(thin)))[:int(n_keep)]
    if not steps:
        raise EmptyEnsembleError("no states left after burn-in and thinning")
    x = np.zeros(model.n_modes) if x0 is None else model.coeffs_of(x0, "x0")
    cfg = replace(cfg, t_final=steps[-1] * cfg.dt, record_every=1)
    result = integrate_batch(model, drift, cfg, x[None, :], seed, [path_id], snapshot_steps=steps)
    if result.diverged[0]:
        raise DivergenceError(path_id, int(result.divergence_step[0]))
    samples = result.snapshots[:, 0, :]
    ess = effective_sample_size(np.linalg.norm(samples, axis=-1))
    logger.info(f"LongRun ensemble: {len(samples)} samples, ESS(‖x‖) ≈ {ess:.1f}")
    return MeasureEnsemble.uniform(samples, Provenance.LONG_RUN, ess=ess)


def default_mixing_time(model: SpectralModel, drift: DriftSpec) -> float:
    zeta = drift.effective_zeta(model)
    if zeta >= 0:
        raise ModelError(f"joint constant zeta={zeta:.4g} is not negative; pass t_large explicitly")
    return 8.0 / abs(zeta)


def estimate_ensemble(model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig, x0: StateLike,
                      t_large: Optional[float], n_paths: int, seed: int) -> MeasureEnsemble:
    """独立路径在 t_large 时刻的终点"""
    x = model.coeffs_of(x0, "x0")
    t_large = default_mixing_time(model, drift) if t_large is None else float(t_large)
    if t_large == 0:
        return MeasureEnsemble.uniform(np.tile(x, (int(n_paths), 1)), Provenance.LARGE_TIME_ENSEMBLE)
    batch = run_paths(model, drift, cfg.with_horizon(t_large), x, n_paths, seed, desc="Ensemble")
    samples = batch.final[batch.valid]
    if batch.n_discarded:
        logger.warning(f"⚠️ {batch.n_discarded} diverged paths dropped from the ensemble")
    return MeasureEnsemble.uniform(samples, Provenance.LARGE_TIME_ENSEMBLE)


def sample_gaussian_reference(model: SpectralModel, n_samples: int, seed: int) -> MeasureEnsemble:
    """μ = N(0, Q_∞) 的独立样本 (F = 0 时即不变测度)"""
    q = covariance_Qinf(model).variances
    z = standard_normals(seed, 0, 0, int(n_samples), model.n_modes, NoisePurpose.SAMPLER)
    return MeasureEnsemble.uniform(np.sqrt(q) * z, Provenance.CLOSED_FORM_GAUSSIAN)


def _constant_noise_level(model: SpectralModel) -> float:
    c = model.noise_coeffs
    if c.min() <= 0 or c.max() - c.min() > 1e-12 * c.max():
        raise ModelError("pCN sampling of the weighted Gaussian needs C = c·I with c > 0")
    return float(c[0])


def pcn_sample(model: SpectralModel, potential: PotentialSpec, n_steps: int, step_size: float, seed: int,
               x0: Optional[StateLike] = None, burn_in: int = 0, thin: int = 1) -> MeasureEnsemble:
    """
    预条件 Crank–Nicolson: x′ = √(1-s²)x + sξ, ξ ~ N(0,Q_∞),
    以 min(1, exp(Φ(x) - Φ(x′))) 接受, Φ = 2U/c; 目标 ν ∝ e^{-2U/c} μ。
    """
    s = float(step_size)
    if not 0 < s < 1:
        raise ModelError(f"pCN step size must lie in (0, 1), got {s}")
    c = _constant_noise_level(model)
    sqrt_q = np.sqrt(covariance_Qinf(model).variances)
    keep = math.sqrt(1.0 - s * s)
    x = np.zeros(model.n_modes) if x0 is None else model.coeffs_of(x0, "x0").copy()
    phi_x = 2.0 * float(potential.energy_batch(model, x)[0]) / c

    samples = []
    accepted = 0
    window = LabSettings.NOISE_WINDOW
    with tqdm(total=int(n_steps), desc="pCN", unit="step", disable=not LabSettings.SHOW_PROGRESS, leave=False) as pbar:
        for w0 in range(0, int(n_steps), window):
            wn = min(window, int(n_steps) - w0)
            xi = sqrt_q * standard_normals(seed, 0, w0, wn, model.n_modes, NoisePurpose.MCMC)
            log_u = np.log(uniforms(seed, 0, w0, wn, 1, NoisePurpose.ACCEPT)[:, 0])
            for i in range(wn):
                proposal = keep * x + s * xi[i]
                phi_p = 2.0 * float(potential.energy_batch(model, proposal)[0]) / c
                if log_u[i] < phi_x - phi_p:
                    x, phi_x = proposal, phi_p
                    accepted += 1
                k = w0 + i + 1
                if k > burn_in and (k - burn_in) % int(thin) == 0:
                    samples.append(x.copy())
            pbar.update(wn)
    rate = accepted / max(1, int(n_steps))
    lo, hi = PCN_ACCEPTANCE_RANGE
    if not lo <= rate <= hi:
        logger.warning(f"⚠️ pCN acceptance rate {rate:.3f} outside [{lo}, {hi}]; retune step_size={s}")
    if not samples:
        raise EmptyEnsembleError("pCN kept no samples (burn_in too long)")
    samples = np.asarray(samples)
    ess = effective_sample_size(np.linalg.norm(samples, axis=-1))
    logger.info(f"pCN: {len(samples)} samples, acceptance {rate:.3f}, ESS(‖x‖) ≈ {ess:.1f}")
    return MeasureEnsemble.uniform(samples, Provenance.PCN, ess=ess, acceptance_rate=rate)


def normalization_estimate(model: SpectralModel, potential: PotentialSpec, n_samples: int, seed: int) -> Tuple[float, float]:
    """E_μ[exp(-2U/c)], 仅作诊断"""
    c = _constant_noise_level(model)
    ref = sample_gaussian_reference(model, n_samples, seed)
    values = np.exp(-2.0 * potential.energy_batch(model, ref.samples) / c)
    return ref.mean_and_se(values)


# --- 检验报告 ---
@dataclass
class MeasureCheck:
    test: str
    label: str
    value_lhs: float
    value_rhs: float
    stderr: float
    passed: bool
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {"test": self.test, "label": self.label, "value_lhs": self.value_lhs, "value_rhs": self.value_rhs,
               "stderr": self.stderr, "pass": self.passed}
        out.update(self.extra)
        return out


def invariance_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec, cfg: IntegratorConfig,
                    phi_list: Sequence[CylFunc], t: float, n_paths: int, seed: int,
                    sigma: float = LabSettings.SIGMA_LEVEL) -> List[MeasureCheck]:
    """
    ∫P(t)φ dν 对 ∫φ dν。每个样本至少推进一条路径 (共约 n_paths 条),
    差值逐样本配对, 标准误来自差值序列。
    """
    t = float(t)
    base = [cyl_eval_batch(phi, ensemble.samples) for phi in phi_list]
    if t == 0:
        out = []
        for phi, b in zip(phi_list, base):
            value = ensemble.mean_and_se(b)[0]
            out.append(MeasureCheck("invariance", phi.label(), value, value, 0.0, True, {"discrepancy": 0.0}))
        return out
    n = ensemble.size
    copies = max(1, int(round(int(n_paths) / n)))
    X0 = np.repeat(ensemble.samples, copies, axis=0)
    batch = run_paths(model, drift, cfg.with_horizon(t), X0, len(X0), seed, desc="Invariance")
    valid = batch.valid.reshape(n, copies)
    if not np.all(valid.any(axis=1)):
        raise EmptyEnsembleError("every path of some ensemble sample diverged")
    out = []
    for phi, b in zip(phi_list, base):
        vals = cyl_eval_batch(phi, np.nan_to_num(batch.final)).reshape(n, copies)
        propagated = np.where(valid, vals, 0.0).sum(axis=1) / valid.sum(axis=1)
        lhs, lhs_se = ensemble.mean_and_se(propagated)
        rhs, _ = ensemble.mean_and_se(b)
        diff, se = ensemble.mean_and_se(propagated - b)
        out.append(MeasureCheck(
            "invariance", phi.label(), lhs, rhs, se, bool(abs(diff) <= sigma * se),
            {"discrepancy": diff, "lhs_stderr": lhs_se, "n_paths": int(valid.sum()),
             "n_discarded": int((~valid).sum())},
        ))
    return out


def generator_mean_zero_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec,
                             phi_list: Sequence[CylFunc], sigma: float = LabSettings.SIGMA_LEVEL,
                             allowance: float = 0.0) -> List[MeasureCheck]:
    """∫N₀φ dν = 0"""
    F = drift_eval_batch(model, drift, ensemble.samples)
    out = []
    for phi in phi_list:
        mean, se = ensemble.mean_and_se(apply_N0_batch(model, drift, phi, ensemble.samples, F))
        out.append(MeasureCheck("generator_mean_zero", phi.label(), mean, 0.0, se,
                                bool(abs(mean) <= sigma * se + allowance)))
    return out


def dirichlet_form_test(ensemble: MeasureEnsemble, model: SpectralModel, drift: DriftSpec,
                        phi_list: Sequence[CylFunc], sigma: float = LabSettings.SIGMA_LEVEL) -> List[MeasureCheck]:
    """∫(N₀φ)φ dν = -½∫‖C^{1/2}∇φ‖² dν, 两边在同一样本上配对估计"""
    F = drift_eval_batch(model, drift, ensemble.samples)
    out = []
    for phi in phi_list:
        lhs_vals = apply_N0_batch(model, drift, phi, ensemble.samples, F) * cyl_eval_batch(phi, ensemble.samples)
        rhs_vals = -0.5 * carre_du_champ_batch(model, phi, ensemble.samples)
        lhs, _ = ensemble.mean_and_se(lhs_vals)
        rhs, rhs_se = ensemble.mean_and_se(rhs_vals)
        diff, se = ensemble.mean_and_se(lhs_vals - rhs_vals)
        out.append(MeasureCheck("dirichlet_form", phi.label(), lhs, rhs, se,
                                bool(abs(diff) <= sigma * se + 1e-12), {"rhs_stderr": rhs_se}))
    return out


# --- 矩与 E-诊断 ---
def moment_report(ensemble: MeasureEnsemble, p_list: Sequence[float]) -> List[Dict[str, float]]:
    p_list = [float(p) for p in p_list]
    if any(p < 1 or p > 8 for p in p_list):
        raise ModelError(f"moment orders must lie in [1, 8], got {p_list}")
    norm = np.linalg.norm(ensemble.samples, axis=-1)
    rows = []
    for p in p_list:
        m, se = ensemble.mean_and_se(norm ** p)
        rows.append({"p": p, "estimate": m, "stderr": se})
    return rows


def e_concentration(ensemble: MeasureEnsemble, model: SpectralModel) -> Dict[str, float]:
    """sup / H¹ 诊断的 95% 分位数与有限比例"""
    values = norms_batch(model, ensemble.samples)
    finite = np.isfinite(values["sup_grid"]) & np.isfinite(values["h1"]) & np.all(np.isfinite(ensemble.samples), axis=-1)
    w = ensemble.weights
    if not finite.any():
        return {"sup_p95": float("nan"), "h1_p95": float("nan"), "finite_fraction": 0.0}
    return {
        "sup_p95": weighted_quantile(values["sup_grid"][finite], w[finite], 0.95),
        "h1_p95": weighted_quantile(values["h1"][finite], w[finite], 0.95),
        "finite_fraction": float(w[finite].sum()),
    }


def compare_moments(ens_a: MeasureEnsemble, ens_b: MeasureEnsemble, p_list: Sequence[float],
                    sigma: float = LabSettings.SIGMA_LEVEL) -> List[Dict[str, Any]]:
    rows = []
    for ra, rb in zip(moment_report(ens_a, p_list), moment_report(ens_b, p_list)):
        combined = float(np.hypot(ra["stderr"], rb["stderr"]))
        diff = ra["estimate"] - rb["estimate"]
        rows.append({
            "p": ra["p"],
            "a": ra["estimate"], "a_stderr": ra["stderr"], "a_source": ens_a.provenance.value,
            "b": rb["estimate"], "b_stderr": rb["stderr"], "b_source": ens_b.provenance.value,
            "diff": diff, "combined_stderr": combined, "pass": bool(abs(diff) <= sigma * combined),
        })
    return rows


def split_chain_check(ensemble: MeasureEnsemble, p_list: Sequence[float],
                      sigma: float = LabSettings.SIGMA_LEVEL) -> List[Dict[str, Any]]:
    """
    链的前一半与后一半各自估计 E‖x‖^p, 两半的标准误分别按各自的自相关 ESS 计算。
    链尚未平稳 (burn-in 不足或存在趋势) 时两半不一致。
    """
    n = ensemble.size
    if n < 8:
        raise EmptyEnsembleError(f"split-chain check needs at least 8 samples, got {n}")
    half = n // 2
    first = MeasureEnsemble.uniform(ensemble.samples[:half], ensemble.provenance)
    second = MeasureEnsemble.uniform(ensemble.samples[half:], ensemble.provenance)
    return compare_moments(first, second, p_list, sigma)
