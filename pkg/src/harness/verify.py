# -------------------------------------------------------------
# 验证套件: 每项检查映射到性质目录中的一个条目, 失败只记录不中断
# -------------------------------------------------------------
"""
verify_report.json 只含确定性内容 (数值、判定、容差), 同一 seed 下逐字节一致;
运行时间与系统信息写入 verify_timing.json。
"""
import hashlib
import json
import logging
import math
import os
import platform
import time
import traceback
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import psutil

from src.common.errors import ConfigError
from src.common.io_utils import write_json
from src.common.settings import LabSettings
from src.common.types import SpectralModel
from src.spectral.core import build_model, sample_states, to_grid
from src.spectral.drift import (
    DriftSpec,
    dissipativity_estimate,
    mehler_property_check,
    validate_drift,
    yosida_property_check,
    yosida_resolve,
)
from src.spectral.kernels import KernelSpec
from src.dynamics.engine import IntegratorConfig, simulate_coupled
from src.dynamics.parallel import run_paths
from src.dynamics.scans import (
    generalized_mild_convergence,
    moment_scan,
    stochastic_convolution_moments,
    strong_convergence_scan,
    two_sided_decay,
)
from src.analysis.observables import CylFunc, generator_ladder, ou_mehler_exact, semigroup_mc_many
from src.analysis.invariant import (
    PotentialSpec,
    compare_moments,
    dirichlet_form_test,
    e_concentration,
    estimate_ensemble,
    estimate_longrun,
    generator_mean_zero_test,
    invariance_test,
    pcn_sample,
    sample_gaussian_reference,
)
from src.analysis.dirichlet import DomainSpec, fk_convergence_scan, subinvariance_test
from src.harness.config import ExperimentConfig

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

PROPERTY_CATALOGUE: Dict[str, str] = {
    "ou-mehler-exactness": "Monte-Carlo P(t)φ(x) equals the Mehler closed form for the zero drift",
    "pathwise-contraction": "coupled paths separate no faster than e^{(max a_k + 1/2)t}",
    "moment-boundedness": "E‖X(t)‖^p has no upward trend in t for dissipative drifts",
    "invariant-cross-validation": "long-run, large-time ensemble and pCN estimates of ν agree",
    "invariance-identity": "∫P(t)φ dν = ∫φ dν",
    "generator-mean-zero": "∫N₀φ dν = 0",
    "dirichlet-form-identity": "∫(N₀φ)φ dν = -½∫‖C^{1/2}∇φ‖² dν",
    "yosida-family": "Yosida approximations are Lipschitz, dissipative, bounded and converge",
    "mehler-smoothing": "Mehler-smoothed drifts converge as s → 0 and stay one-sided Lipschitz",
    "generator-difference-quotient": "(P(t)φ - φ)/t → N₀φ as t → 0",
    "feynman-kac-convergence": "Feynman-Kac killing approaches exit killing as ε → 0",
    "sub-invariance": "∫_O (P^O(t)φ)² dν ≤ ∫_O φ² dν",
    "e-concentration": "ν concentrates on H¹ uniformly in the truncation level",
    "determinism": "path results and check records are independent of the worker count",
    "drift-dissipativity": "the drift under test satisfies its declared ζ₂; a violation carries a witness pair",
    "stochastic-convolution-trace": "E‖W_A(t)‖² = Tr Q_t",
    "two-sided-decay": "X(0,-s,x) - X(0,-h,x) shrinks as the start recedes",
    "strong-convergence-order": "exponential Euler has strong order one for additive noise",
    "generalized-mild-convergence": "paths from nR(n,A)x converge to the path from x",
    "plumbing": "artifact plumbing",
}

# 每个性质归入的理论主题; 不对应理论结论的检查归入 plumbing
ANCHOR_MAP: Dict[str, str] = {
    "transition-semigroups": "transition semigroup, mild form and the Kolmogorov operator N₀ on cylindrical functions",
    "ou-mehler-representation": "Ornstein–Uhlenbeck case and its Mehler representation",
    "mild-solutions": "mild and generalized mild solutions, contraction and moment estimates",
    "invariant-measure": "existence of ν through the two-sided construction, its moments and convergence",
    "kolmogorov-identities": "mean-zero and Dirichlet-form identities for N₀ under ν",
    "drift-regularisation": "Yosida approximants F_δ and their Mehler smoothing F_{δ,s}",
    "killed-semigroups": "Dirichlet semigroup on O, sub-invariance and Feynman-Kac approximation",
    "model-presets": "Nemytskii gradient, trilinear kernel and H¹ noise example models",
    "plumbing": "artifact plumbing",
}

PROPERTY_ANCHORS: Dict[str, str] = {
    "ou-mehler-exactness": "ou-mehler-representation",
    "pathwise-contraction": "mild-solutions",
    "moment-boundedness": "mild-solutions",
    "invariant-cross-validation": "invariant-measure",
    "invariance-identity": "invariant-measure",
    "generator-mean-zero": "kolmogorov-identities",
    "dirichlet-form-identity": "kolmogorov-identities",
    "yosida-family": "drift-regularisation",
    "mehler-smoothing": "drift-regularisation",
    "generator-difference-quotient": "transition-semigroups",
    "feynman-kac-convergence": "killed-semigroups",
    "sub-invariance": "killed-semigroups",
    "e-concentration": "model-presets",
    "determinism": "plumbing",
    "drift-dissipativity": "model-presets",
    "stochastic-convolution-trace": "mild-solutions",
    "two-sided-decay": "invariant-measure",
    "strong-convergence-order": "plumbing",
    "generalized-mild-convergence": "mild-solutions",
    "plumbing": "plumbing",
}


class CheckStatus(Enum):
    PASSED = "passed"
    FAILED = "failed"
    ERROR = "error"


@dataclass
class CheckRecord:
    check_id: str
    property: str
    status: CheckStatus
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    tolerance: Optional[float] = None
    details: Dict[str, Any] = field(default_factory=dict)
    error_message: Optional[str] = None
    runtime_ms: float = 0.0
    anchor: str = ""

    @property
    def passed(self) -> bool:
        return self.status is CheckStatus.PASSED

    def to_dict(self) -> Dict[str, Any]:
        """确定性字段; runtime_ms 不在其中"""
        return {
            "check_id": self.check_id,
            "property": self.property,
            "anchor": self.anchor,
            "status": self.status.value,
            "pass": self.passed,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "tolerance": self.tolerance,
            "details": self.details,
            "error_message": self.error_message,
        }


@dataclass
class VerifyReport:
    suite: str
    master_seed: int
    records: List[CheckRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def get_summary(self) -> Dict[str, Any]:
        counts = {s.value: sum(r.status is s for r in self.records) for s in CheckStatus}
        return {"total": len(self.records), **counts, "all_passed": self.passed}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "suite": self.suite,
            "master_seed": self.master_seed,
            "summary": self.get_summary(),
            "checks": [r.to_dict() for r in self.records],
        }

    def timing_dict(self) -> Dict[str, Any]:
        mem = psutil.virtual_memory()
        return {
            "suite": self.suite,
            "total_runtime_ms": sum(r.runtime_ms for r in self.records),
            "checks": {r.check_id: r.runtime_ms for r in self.records},
            "system": {
                "platform": platform.platform(),
                "python": platform.python_version(),
                "cpu_count": psutil.cpu_count(),
                "memory_total_gb": round(mem.total / 1024 ** 3, 2),
                "workers": LabSettings.NUM_WORKERS,
            },
        }


REPORT_REQUIRED_KEYS = {"version": int, "suite": str, "master_seed": int, "summary": dict, "checks": list}
CHECK_REQUIRED_KEYS = {"check_id": str, "property": str, "anchor": str, "status": str, "pass": bool, "details": dict}


def validate_report_dict(data: Dict[str, Any]) -> List[str]:
    """按发布的报告格式检查; 返回问题列表 (空表示合规)"""
    problems = []
    for key, kind in REPORT_REQUIRED_KEYS.items():
        if not isinstance(data.get(key), kind):
            problems.append(f"{key}: expected {kind.__name__}")
    for i, row in enumerate(data.get("checks") or []):
        for key, kind in CHECK_REQUIRED_KEYS.items():
            if not isinstance(row.get(key), kind):
                problems.append(f"checks[{i}].{key}: expected {kind.__name__}")
        if row.get("property") not in PROPERTY_CATALOGUE:
            problems.append(f"checks[{i}].property: {row.get('property')!r} is not in the catalogue")
        anchor = row.get("anchor")
        if anchor not in ANCHOR_MAP:
            problems.append(f"checks[{i}].anchor: {anchor!r} is not in the anchor map")
        elif PROPERTY_ANCHORS.get(row.get("property"), anchor) != anchor:
            problems.append(f"checks[{i}].anchor: {anchor!r} does not match property {row.get('property')!r}")
        if row.get("status") not in {s.value for s in CheckStatus}:
            problems.append(f"checks[{i}].status: unknown status {row.get('status')!r}")
    return problems


# --- 预算 ---
@dataclass(frozen=True)
class SuiteBudget:
    n_modes: int
    dt: float
    n_paths: int
    moment_paths: int
    moment_times: Tuple[float, ...]
    coupled_pairs: int
    longrun_t: float
    longrun_thin: int
    n_ensemble: int
    pcn_steps: int
    invariance_paths: int
    yosida_pairs: int
    mehler_samples: int
    generator_paths: int
    fk_dt: float
    fk_paths: int
    fk_eps: Tuple[float, ...]
    sub_ensemble: int
    sub_paths: int
    extras: bool


BUDGETS = {
    "fast": SuiteBudget(
        n_modes=8, dt=2e-3, n_paths=4000, moment_paths=1000, moment_times=(1.0, 2.0, 4.0, 8.0),
        coupled_pairs=32, longrun_t=100.0, longrun_thin=10, n_ensemble=2000, pcn_steps=20000,
        invariance_paths=4000, yosida_pairs=1000, mehler_samples=1000, generator_paths=8000,
        fk_dt=5e-4, fk_paths=4000, fk_eps=(0.2, 0.1, 0.05), sub_ensemble=100, sub_paths=4000, extras=False,
    ),
    "full": SuiteBudget(
        n_modes=16, dt=1e-3, n_paths=10000, moment_paths=2000, moment_times=(1.0, 2.0, 4.0, 8.0),
        coupled_pairs=32, longrun_t=400.0, longrun_thin=10, n_ensemble=5000, pcn_steps=100000,
        invariance_paths=10000, yosida_pairs=1000, mehler_samples=1000, generator_paths=20000,
        fk_dt=1e-4, fk_paths=10000, fk_eps=(0.2, 0.1, 0.05, 0.025), sub_ensemble=200, sub_paths=10000,
        extras=True,
    ),
}


def _heat(n_modes: int, noise_scale: float = 1.0) -> SpectralModel:
    return build_model("HeatDirichlet", n_modes, params={"noise_scale": noise_scale})


def _one_mode(a: float, c: float) -> SpectralModel:
    return build_model("Custom", params={"eigenvalues": [a], "noise_coeffs": [c]})


CUBIC = DriftSpec.nemytskii((0.0, 0.0, 0.0, 1.0))


def _test_functions(n_modes: int) -> List[CylFunc]:
    """五个柱函数, 频率落在低模态上 (模态数不足时折回)"""
    def h(*pairs):
        v = np.zeros(n_modes)
        for k, c in pairs:
            v[k % n_modes] += c
        return v
    return [
        CylFunc.cos(h((0, 2.0))),
        CylFunc.sin(h((0, 3.0))),
        CylFunc.cos(h((0, 1.5), (1, 2.0))),
        CylFunc.sin(h((1, 4.0)), 0.5) + CylFunc.cos(h((0, 1.0))),
        CylFunc.cos(h((0, 2.0), (2, 3.0)), 2.0),
    ]


def _gradient_potential(zeta2: float) -> PotentialSpec:
    return PotentialSpec((0.0, 0.0, 0.0, 0.0, 0.25), zeta2)


# --- 套件 ---
class VerificationSuite:
    """
    config 给定时, 与系统相关的检查在 config.model / config.drift 上运行;
    未给定时使用 HeatDirichlet + 三次 Nemytskii 漂移。
    """

    def __init__(self, suite: str = "fast", master_seed: int = LabSettings.DEFAULT_SEED,
                 sigma: float = LabSettings.SIGMA_LEVEL, config: Optional[ExperimentConfig] = None):
        if suite not in BUDGETS:
            raise ValueError(f"unknown suite {suite!r}; expected one of {sorted(BUDGETS)}")
        self.suite = suite
        self.budget = BUDGETS[suite]
        self.seed = int(master_seed)
        self.sigma = float(sigma)
        self.config = config
        if config is None:
            self.model = _heat(self.budget.n_modes)
            self.drift = CUBIC
            self.noisy_model = _heat(self.budget.n_modes, noise_scale=8.0)
        else:
            self.model = config.model
            self.drift = config.drift
            self.noisy_model = config.model
        self._pcn_cache: Dict[float, Any] = {}

    @property
    def n_modes(self) -> int:
        return self.model.n_modes

    @property
    def regular_drift(self) -> DriftSpec:
        """Yosida / Mehler 检查用的漂移: 被测漂移无非线性部分时退回三次漂移"""
        return self.drift if self.drift.has_nonlinearity else CUBIC

    def _drift_cases(self) -> List[Tuple[str, DriftSpec]]:
        cases = [("ou", DriftSpec.zero())]
        if not self.drift.is_zero:
            cases.append(("system", self.drift))
        return cases

    def _x0(self, *values: float) -> np.ndarray:
        x0 = np.zeros(self.n_modes)
        k = min(len(values), self.n_modes)
        x0[:k] = values[:k]
        return x0

    def checks(self) -> List[Tuple[str, str, Callable[[], CheckRecord]]]:
        items = [
            ("ou_exactness", "ou-mehler-exactness", self.check_ou_exactness),
            ("pathwise_contraction", "pathwise-contraction", self.check_pathwise_contraction),
            ("moment_boundedness", "moment-boundedness", self.check_moment_boundedness),
            ("invariant_cross_validation", "invariant-cross-validation", self.check_invariant_cross_validation),
            ("invariance_identity", "invariance-identity", self.check_invariance_identity),
            ("generator_mean_zero", "generator-mean-zero", self.check_generator_mean_zero),
            ("dirichlet_form_identity", "dirichlet-form-identity", self.check_dirichlet_form),
            ("yosida_family", "yosida-family", self.check_yosida_family),
            ("mehler_smoothing", "mehler-smoothing", self.check_mehler_smoothing),
            ("generator_difference_quotient", "generator-difference-quotient", self.check_generator_quotient),
            ("feynman_kac_convergence", "feynman-kac-convergence", self.check_feynman_kac),
            ("sub_invariance", "sub-invariance", self.check_subinvariance),
            ("e_concentration", "e-concentration", self.check_e_concentration),
            ("determinism", "determinism", self.check_determinism),
            ("drift_dissipativity", "drift-dissipativity", self.check_drift_dissipativity),
        ]
        if self.budget.extras:
            items += [
                ("stochastic_convolution_trace", "stochastic-convolution-trace", self.check_convolution_trace),
                ("two_sided_decay", "two-sided-decay", self.check_two_sided_decay),
                ("strong_convergence_order", "strong-convergence-order", self.check_strong_order),
                ("generalized_mild_convergence", "generalized-mild-convergence", self.check_generalized_mild),
            ]
        return items

    def check_ids(self) -> List[str]:
        return [c[0] for c in self.checks()]

    def run(self, only: Optional[List[str]] = None) -> VerifyReport:
        if only is not None:
            unknown = sorted(set(only) - set(self.check_ids()))
            if unknown:
                raise ConfigError("--checks", f"unknown check ids {unknown}; {self.suite} suite has "
                                              f"{self.check_ids()}")
        report = VerifyReport(self.suite, self.seed)
        items = [c for c in self.checks() if only is None or c[0] in only]
        logger.info(f"🚀 {self.suite} suite: {len(items)} checks, seed={self.seed}, workers={LabSettings.NUM_WORKERS}, "
                    f"model={self.model.preset_label.value}, drift={self.drift.variant.value}")
        for check_id, prop, fn in items:
            start = time.perf_counter()
            try:
                record = fn()
                record.check_id, record.property = check_id, prop
            except Exception as e:
                logger.debug(traceback.format_exc())
                record = CheckRecord(check_id, prop, CheckStatus.ERROR, error_message=f"{type(e).__name__}: {e}")
            record.anchor = PROPERTY_ANCHORS[prop]
            record.runtime_ms = (time.perf_counter() - start) * 1000.0
            icon = {"passed": "✅", "failed": "❌", "error": "⚠️"}[record.status.value]
            logger.info(f"{icon} {check_id}: {record.status.value} ({record.runtime_ms / 1000:.1f}s)")
            report.records.append(record)
        return report

    # --- 记录构造 ---
    @staticmethod
    def _record(passed: bool, lhs=None, rhs=None, tolerance=None, **details) -> CheckRecord:
        return CheckRecord("", "", CheckStatus.PASSED if passed else CheckStatus.FAILED,
                           None if lhs is None else float(lhs), None if rhs is None else float(rhs),
                           None if tolerance is None else float(tolerance), details)

    def _cfg(self, t_final: float, dt: Optional[float] = None) -> IntegratorConfig:
        return IntegratorConfig(dt=self.budget.dt if dt is None else dt, t_final=t_final)

    # --- 各项检查 ---
    def check_ou_exactness(self) -> CheckRecord:
        b = self.budget
        phis = _test_functions(self.n_modes)
        x0 = self._x0(1.0, -0.5)
        rows, worst = [], 0.0
        for t in (0.1, 1.0, 4.0):
            ests = semigroup_mc_many(self.model, DriftSpec.zero(), self._cfg(t), phis, x0, t, b.n_paths, self.seed)
            for i, (phi, est) in enumerate(zip(phis, ests)):
                exact = ou_mehler_exact(self.model, phi, x0, t)
                z = abs(est.value - exact) / est.stderr if est.stderr > 0 else 0.0
                worst = max(worst, z)
                rows.append({"observable": i, "t": t, "mc": est.value, "stderr": est.stderr, "exact": exact})
        return self._record(worst <= self.sigma, worst, self.sigma, self.sigma, rows=rows)

    def check_pathwise_contraction(self) -> CheckRecord:
        b = self.budget
        cfg = self._cfg(2.0)
        starts = sample_states(self.model, 2 * b.coupled_pairs, self.seed)
        worst_ratio, holds, rate = 0.0, True, None
        for i in range(b.coupled_pairs):
            pair = simulate_coupled(self.model, self.drift, cfg, starts[2 * i], starts[2 * i + 1], self.seed,
                                    path_id=i)
            holds &= pair.bound_holds
            rate = pair.rate_bound
            worst_ratio = max(worst_ratio, pair.to_dict()["max_ratio"])
        return self._record(holds, worst_ratio, 1.02, 0.02, rate_bound=rate, n_pairs=b.coupled_pairs)

    def check_moment_boundedness(self) -> CheckRecord:
        b = self.budget
        x0 = self._x0(1.0)
        tables = {}
        ok = True
        for name, drift in self._drift_cases():
            table = moment_scan(self.model, drift, self._cfg(max(b.moment_times)), x0, (2.0, 4.0), b.moment_times,
                                b.moment_paths, self.seed, self.sigma)
            ok &= table.passed
            tables[name] = table.to_dict()
        return self._record(ok, tables=tables)

    def _gradient_cases(self) -> List[Tuple[SpectralModel, PotentialSpec]]:
        """config 带势 U 时只检查它; 否则 ζ₂ ∈ {0, 0.5} 的四次势"""
        if self.config is not None and self.config.potential is not None:
            return [(self.model, self.config.potential)]
        model = _heat(self.budget.n_modes)
        return [(model, _gradient_potential(0.0)), (model, _gradient_potential(0.5))]

    def _pcn(self, model: SpectralModel, potential: PotentialSpec):
        key = potential.zeta2
        if key not in self._pcn_cache:
            self._pcn_cache[key] = pcn_sample(model, potential, self.budget.pcn_steps, 0.5, self.seed,
                                              burn_in=self.budget.pcn_steps // 10, thin=5)
        return self._pcn_cache[key]

    def check_invariant_cross_validation(self) -> CheckRecord:
        b = self.budget
        ok, rows = True, []
        for model, potential in self._gradient_cases():
            drift = potential.to_drift()
            longrun = estimate_longrun(model, drift, self._cfg(b.longrun_t), 2.0, b.longrun_thin, 10 ** 6, self.seed)
            ensemble = estimate_ensemble(model, drift, self._cfg(1.0), np.zeros(model.n_modes), None, b.n_ensemble,
                                         self.seed)
            pcn = self._pcn(model, potential)
            for ea, eb in ((longrun, ensemble), (longrun, pcn), (ensemble, pcn)):
                for row in compare_moments(ea, eb, (1.0, 2.0, 4.0), self.sigma):
                    ok &= row["pass"]
                    rows.append(dict(row, zeta2=potential.zeta2))
        worst = max(abs(r["diff"]) / r["combined_stderr"] for r in rows if r["combined_stderr"] > 0)
        return self._record(ok, worst, self.sigma, self.sigma, rows=rows)

    def check_invariance_identity(self) -> CheckRecord:
        b = self.budget
        phis = _test_functions(self.n_modes)
        ok, rows = True, []
        for name, drift in self._drift_cases():
            if drift.is_zero:
                ens = sample_gaussian_reference(self.model, b.n_ensemble // 4, self.seed)
            else:
                ens = estimate_ensemble(self.model, drift, self._cfg(1.0), np.zeros(self.n_modes), None,
                                        b.n_ensemble // 4, self.seed)
            for check in invariance_test(ens, self.model, drift, self._cfg(1.0), phis, 1.0, b.invariance_paths,
                                         self.seed, self.sigma):
                ok &= check.passed
                rows.append(dict(check.to_dict(), preset=name))

        # 单模 OU: a = -1/2, c = 1, φ = cos(x), ∫φ dν = e^{-1/2}
        one = _one_mode(-0.5, 1.0)
        ref = sample_gaussian_reference(one, b.n_ensemble, self.seed)
        check = invariance_test(ref, one, DriftSpec.zero(), self._cfg(1.0), [CylFunc.cos([1.0])], 1.0,
                                b.invariance_paths, self.seed, self.sigma)[0]
        analytic = math.exp(-0.5)
        lhs_se = check.extra["lhs_stderr"]
        analytic_ok = abs(check.value_lhs - analytic) <= self.sigma * lhs_se
        ok &= check.passed and analytic_ok
        return self._record(ok, check.value_lhs, analytic, self.sigma * lhs_se, rows=rows,
                            one_mode=check.to_dict())

    def check_generator_mean_zero(self) -> CheckRecord:
        model, potential = self._gradient_cases()[0]
        checks = generator_mean_zero_test(self._pcn(model, potential), model, potential.to_drift(),
                                          _test_functions(model.n_modes), self.sigma)
        worst = max(abs(c.value_lhs) / c.stderr if c.stderr > 0 else 0.0 for c in checks)
        return self._record(all(c.passed for c in checks), worst, self.sigma, self.sigma,
                            rows=[c.to_dict() for c in checks])

    def check_dirichlet_form(self) -> CheckRecord:
        model, potential = self._gradient_cases()[0]
        checks = dirichlet_form_test(self._pcn(model, potential), model, potential.to_drift(),
                                     _test_functions(model.n_modes), self.sigma)
        ok = all(c.passed for c in checks)
        # 单模 OU: a = -1, c = 2, φ = sin(x) ⇒ -(1 + e^{-2})/2
        one = _one_mode(-1.0, 2.0)
        ref = sample_gaussian_reference(one, self.budget.n_ensemble * 5, self.seed)
        one_check = dirichlet_form_test(ref, one, DriftSpec.zero(), [CylFunc.sin([1.0])], self.sigma)[0]
        analytic = -(1.0 + math.exp(-2.0)) / 2.0
        se = one_check.extra["rhs_stderr"]
        analytic_ok = abs(one_check.value_rhs - analytic) <= self.sigma * se
        ok &= one_check.passed and analytic_ok
        return self._record(ok, one_check.value_rhs, analytic, self.sigma * se,
                            rows=[c.to_dict() for c in checks], one_mode=one_check.to_dict())

    def check_yosida_family(self) -> CheckRecord:
        b = self.budget
        reports = {}
        ok = True
        for delta in (1.0, 0.1, 0.01):
            report = yosida_property_check(self.model, self.regular_drift, delta, b.yosida_pairs, self.seed)
            ok &= report.passed
            reports[str(delta)] = report.to_dict()
        # 标量见证: F(x) = -x³, x = 2, δ = 1 ⇒ x_δ = 1
        one = _one_mode(-1.0, 1.0)
        kernel = KernelSpec.rank_one(to_grid(one, [1.0]).values)
        x_delta = float(yosida_resolve(one, DriftSpec.kernel_cubic(kernel), 1.0, [2.0], tol=1e-13).coeffs[0])
        residual = abs(x_delta + x_delta ** 3 - 2.0)
        ok &= residual <= 1e-10 and abs(x_delta - 1.0) <= 1e-8
        return self._record(ok, x_delta, 1.0, 1e-8, residual=residual, reports=reports)

    def check_mehler_smoothing(self) -> CheckRecord:
        points = sample_states(self.model, 10, self.seed)
        rows, report = mehler_property_check(self.model, self.regular_drift, 0.1, (1.0, 0.1, 0.01), points,
                                             self.budget.mehler_samples, self.seed, sigma=self.sigma)
        return self._record(report.passed, rows[-1]["error"], rows[0]["error"], None, ladder=rows,
                            report=report.to_dict())

    def check_generator_quotient(self) -> CheckRecord:
        b = self.budget
        x0 = self._x0(0.5, 0.2)
        phis = _test_functions(self.n_modes)[:2]
        ok, ladders = True, []
        for name, drift in self._drift_cases():
            for i, phi in enumerate(phis):
                rows, passed = generator_ladder(self.model, drift, self._cfg(0.1), phi, x0, (0.1, 0.03, 0.01),
                                                b.generator_paths, self.seed, self.sigma)
                ok &= passed
                ladders.append({"preset": name, "observable": i, "pass": passed, "rows": [r.to_dict() for r in rows]})
        return self._record(ok, ladders=ladders)

    def check_feynman_kac(self) -> CheckRecord:
        b = self.budget
        n = self.noisy_model.n_modes
        cfg = IntegratorConfig(dt=b.fk_dt, t_final=0.5)
        table = fk_convergence_scan(self.noisy_model, DriftSpec.zero(), cfg, DomainSpec.ball(1.0),
                                    CylFunc.constant(n), np.zeros(n), 0.5, b.fk_eps, b.fk_paths, self.seed,
                                    self.sigma)
        first, last = table.rows[0], table.rows[-1]
        return self._record(table.passed, abs(last["gap"]), abs(first["gap"]), self.sigma * last["gap_se"],
                            table=table.to_dict())

    def check_subinvariance(self) -> CheckRecord:
        b = self.budget
        model = self.noisy_model
        ensemble = estimate_ensemble(model, self.drift, self._cfg(1.0), np.zeros(model.n_modes), None,
                                     b.sub_ensemble, self.seed)
        radius = float(np.median(np.linalg.norm(ensemble.samples, axis=-1)))
        domain = DomainSpec.ball(radius)
        phis = [CylFunc.constant(model.n_modes)] + _test_functions(model.n_modes)[:2]
        ok, rows = True, []
        for t in (0.5, 1.0):
            for phi in phis:
                check = subinvariance_test(ensemble, model, self.drift, self._cfg(t), domain, phi, t, b.sub_paths,
                                           self.seed, self.sigma)
                ok &= check.passed
                rows.append(check.to_dict())
        return self._record(ok, radius=radius, rows=rows)

    def check_e_concentration(self) -> CheckRecord:
        """截断层数加倍时 H¹ 分位数不变; 固定在 H¹ 噪声预设上"""
        b = self.budget
        stats = {}
        for n in (b.n_modes, 2 * b.n_modes):
            model = build_model("ScaledIdentityHOneNoise", n, params={"beta": 3.0})
            ens = sample_gaussian_reference(model, b.n_ensemble, self.seed)
            stats[n] = e_concentration(ens, model)
            if b.extras:
                cubic = estimate_ensemble(model, CUBIC, self._cfg(16.0, dt=1e-2), np.zeros(n), 16.0,
                                          b.n_ensemble // 5, self.seed)
                stats[f"cubic_{n}"] = e_concentration(cubic, model)
        small, large = stats[b.n_modes], stats[2 * b.n_modes]
        ratio = large["h1_p95"] / small["h1_p95"]
        ok = small["finite_fraction"] == 1.0 and large["finite_fraction"] == 1.0 and 0.8 <= ratio <= 1.25
        if b.extras:
            cs, cl = stats[f"cubic_{b.n_modes}"], stats[f"cubic_{2 * b.n_modes}"]
            ok &= cs["finite_fraction"] == 1.0 and cl["finite_fraction"] == 1.0
        return self._record(ok, ratio, 1.0, 0.25, stats={str(k): v for k, v in stats.items()})

    def check_determinism(self) -> CheckRecord:
        """同一批路径与由它得到的半群估计在 1 个 worker 与多个 worker 下逐位一致"""
        cfg = self._cfg(0.2)
        n_paths = 3 * LabSettings.CHUNK_SIZE + 17
        phis = _test_functions(self.n_modes)
        x0 = self._x0(0.5, 0.2)
        saved = LabSettings.NUM_WORKERS
        paths, estimates = [], []
        try:
            for workers in (1, max(2, saved)):
                LabSettings.NUM_WORKERS = workers
                batch = run_paths(self.model, self.drift, cfg, np.zeros(self.n_modes), n_paths, self.seed,
                                  desc="Determinism")
                paths.append(hashlib.sha256(np.ascontiguousarray(batch.final).tobytes()).hexdigest())
                ests = semigroup_mc_many(self.model, self.drift, cfg, phis, x0, 0.2, n_paths, self.seed)
                text = json.dumps([e.to_dict() for e in ests], sort_keys=True)
                estimates.append(hashlib.sha256(text.encode("utf-8")).hexdigest())
        finally:
            LabSettings.NUM_WORKERS = saved
        same = paths[0] == paths[1] and estimates[0] == estimates[1]
        return self._record(same, digest=paths[0], estimates_digest=estimates[0], n_paths=n_paths)

    def check_drift_dissipativity(self) -> CheckRecord:
        """ζ̂₂ 不超过声明的 ζ₂ 且漂移不变量全部成立; 否则报告中带见证点对"""
        estimate = dissipativity_estimate(self.model, self.drift, 1000, self.seed)
        validation = validate_drift(self.model, self.drift, seed=self.seed)
        bounded = estimate.zeta2_hat <= self.drift.zeta2 + 1e-8
        if not bounded:
            logger.warning(f"⚠️ drift {self.drift.variant.value}: zeta2_hat={estimate.zeta2_hat:.6g} "
                           f"exceeds declared zeta2={self.drift.zeta2:.6g}")
        return self._record(bounded and validation.passed, estimate.zeta2_hat, self.drift.zeta2, 1e-8,
                            dissipativity=estimate.to_dict(), validation=validation.to_dict())

    # --- full 套件附加 ---
    def check_convolution_trace(self) -> CheckRecord:
        table = stochastic_convolution_moments(self.model, 0.5, self.budget.n_paths, self.seed, sigma=self.sigma)
        row = table.rows[0]
        return self._record(table.passed, row["estimate"], row["exact"], self.sigma * row["stderr"])

    def check_two_sided_decay(self) -> CheckRecord:
        table = two_sided_decay(self.model, self.drift, self._cfg(1.0), self._x0(1.0),
                                [(1.0, 0.1), (1.0, 0.3), (1.0, 0.6)], self.budget.moment_paths, self.seed, self.sigma)
        return self._record(table.passed, table=table.to_dict())

    def check_strong_order(self) -> CheckRecord:
        """积分格式本身的性质, 固定在 4 模 HeatDirichlet + 三次漂移上"""
        model = _heat(4)
        x0 = np.zeros(4)
        x0[0] = 1.0
        table = strong_convergence_scan(model, CUBIC, IntegratorConfig(dt=1e-3, t_final=0.256), x0, 4,
                                        self.budget.moment_paths, self.seed)
        return self._record(table.passed, table.diagnostics["order"], 1.0, 0.1, table=table.to_dict())

    def check_generalized_mild(self) -> CheckRecord:
        x = sample_states(self.model, 1, self.seed)[0]
        table = generalized_mild_convergence(self.model, self.drift, self._cfg(1.0), x, (1.0, 10.0, 100.0, 1000.0),
                                             self.seed, 64)
        return self._record(table.passed, table=table.to_dict())


def run_verification(suite: str, master_seed: int, out_dir: str, config: Optional[ExperimentConfig] = None,
                     only: Optional[List[str]] = None) -> VerifyReport:
    """在 config 描述的系统上运行套件并写出 verify_report.json / verify_timing.json"""
    report = VerificationSuite(suite, master_seed, config=config).run(only)
    write_json(os.path.join(out_dir, "verify_report.json"), report.to_dict())
    write_json(os.path.join(out_dir, "verify_timing.json"), report.timing_dict())
    summary = report.get_summary()
    logger.info("=" * 60)
    logger.info(f"📊 {summary['passed']}/{summary['total']} passed, {summary['failed']} failed, "
                f"{summary['error']} errors")
    logger.info("=" * 60)
    return report
