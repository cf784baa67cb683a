# -------------------------------------------------------------
# 实验配置: YAML/JSON 读入, 逐字段校验 (带字段路径与行号), 构造模型对象
# -------------------------------------------------------------
"""
配置文件的每个键见 configs/schema.yaml。JSON 是 YAML 的子集, 两种格式走同一个 yaml.safe_load。
所有段落 (以及跨段引用: 柱函数模式数、核网格、ε < r) 在任何计算之前校验完毕。
"""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from src.common.errors import ConfigError, DomainError, DriftError, LabError, ModelError
from src.common.settings import LabSettings
from src.common.types import PresetLabel, SpectralModel
from src.spectral.core import build_model, to_grid
from src.spectral.drift import DriftSpec
from src.spectral.kernels import KernelForm, KernelSpec, load_kernel
from src.dynamics.engine import IntegratorConfig, Scheme
from src.analysis.invariant import PotentialSpec
from src.analysis.observables import CylFunc, parse_cylfunc
from src.analysis.dirichlet import DomainShape, DomainSpec, KillingConfig, Monitoring

logger = logging.getLogger(__name__)

DRIFT_VARIANTS = ("zero", "linear", "nemytskii_gradient", "kernel_cubic", "gradient_potential")
INVARIANT_METHODS = ("longrun", "ensemble", "pcn", "gaussian")
OUTPUT_FORMATS = ("csv", "json")


# --- 行号索引 ---
def _line_index(node, prefix: str = "", index: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """dotted path -> 1-based 行号"""
    index = {} if index is None else index
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)
    return index


class _Reader:
    """带字段路径的字典读取器"""

    def __init__(self, data: Any, path: str, lines: Dict[str, int]):
        if data is None:
            data = {}
        self.path = path
        self.lines = lines
        if not isinstance(data, Mapping):
            self.fail("", f"expected a mapping, got {type(data).__name__}")
        self.data = data

    def _full(self, key: str) -> str:
        if not key:
            return self.path
        return f"{self.path}.{key}" if self.path else key

    def line(self, key: str) -> Optional[int]:
        full = self._full(key)
        while full:
            if full in self.lines:
                return self.lines[full]
            full = full.rsplit(".", 1)[0] if "." in full else ""
        return None

    def fail(self, key: str, message: str):
        raise ConfigError(self._full(key), message, self.line(key))

    def has(self, key: str) -> bool:
        return key in self.data and self.data[key] is not None

    def check_keys(self, allowed: Sequence[str]):
        for key in self.data:
            if key not in allowed:
                self.fail(str(key), f"unknown key; allowed: {', '.join(allowed)}")

    def section(self, key: str) -> "_Reader":
        return _Reader(self.data.get(key), self._full(key), self.lines)

    def get(self, key: str, kind, default: Any = None, required: bool = False, choices: Sequence = ()):
        if not self.has(key):
            if required:
                self.fail(key, "missing required field")
            return default
        value = self.data[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                out = value
            elif kind is int:
                if isinstance(value, bool) or float(value) != int(value):
                    raise TypeError
                out = int(value)
            elif kind is float:
                if isinstance(value, bool):
                    raise TypeError
                out = float(value)
            else:
                out = kind(value)
        except (TypeError, ValueError):
            self.fail(key, f"expected {kind.__name__}, got {value!r}")
        if choices and out not in choices:
            self.fail(key, f"must be one of {', '.join(map(str, choices))}, got {out!r}")
        return out

    def positive(self, key: str, kind, default: Any = None, required: bool = False, strict: bool = True):
        value = self.get(key, kind, default, required)
        if value is not None and (value <= 0 if strict else value < 0):
            self.fail(key, f"must be {'> 0' if strict else '>= 0'}, got {value}")
        return value

    def floats(self, key: str, default: Optional[Sequence[float]] = None, required: bool = False) -> Optional[List[float]]:
        if not self.has(key):
            if required:
                self.fail(key, "missing required field")
            return None if default is None else list(default)
        value = self.data[key]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)):
            self.fail(key, f"expected a list of numbers, got {value!r}")
        out = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.fail(f"{key}[{i}]", f"expected a number, got {v!r}")
            out.append(float(v))
        return out

    def strings(self, key: str, default: Sequence[str] = ()) -> List[str]:
        if not self.has(key):
            return list(default)
        value = self.data[key]
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            self.fail(key, "expected a list of strings")
        return list(value)


# --- 段落 ---
@dataclass(frozen=True)
class ModelSection:
    preset: str
    n_modes: Optional[int] = None
    grid_size: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DriftSection:
    variant: str = "zero"
    zeta2: float = 0.0
    poly_coeffs: Tuple[float, ...] = ()
    phi_coeffs: Tuple[float, ...] = ()
    kernel: Dict[str, Any] = field(default_factory=dict)
    zeta: Optional[float] = None


@dataclass(frozen=True)
class MCSection:
    n_paths: int = 1000
    master_seed: int = LabSettings.DEFAULT_SEED
    path_ids: Tuple[int, ...] = (0,)


@dataclass(frozen=True)
class DomainSection:
    shape: str = "ball"
    radius: float = 1.0
    center: Optional[Tuple[float, ...]] = None
    normal: Optional[Tuple[float, ...]] = None
    offset: float = 0.0
    eps_list: Tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class OutputSection:
    directory: str = "outputs"
    formats: Tuple[str, ...] = OUTPUT_FORMATS


@dataclass(frozen=True)
class SemigroupSection:
    x0: Tuple[float, ...] = ()
    t_list: Tuple[float, ...] = (0.1, 1.0)
    generator_t_list: Tuple[float, ...] = ()


@dataclass(frozen=True)
class InvariantSection:
    methods: Tuple[str, ...] = ("longrun", "ensemble")
    burn_in: float = 2.0
    thin: int = 10
    n_keep: int = 2000
    t_large: Optional[float] = None
    n_samples: int = 2000
    pcn_steps: int = 20000
    pcn_step_size: float = 0.3
    pcn_burn_in: int = 1000
    pcn_thin: int = 5
    p_list: Tuple[float, ...] = (1.0, 2.0, 4.0)
    invariance_t: float = 1.0


@dataclass(frozen=True)
class YosidaSection:
    deltas: Tuple[float, ...] = (1.0, 0.1, 0.01)
    n_pairs: int = 1000
    s_list: Tuple[float, ...] = (1.0, 0.1, 0.01)
    n_points: int = 10
    n_smoothing_samples: int = 1000


@dataclass(frozen=True)
class DirichletSection:
    x0: Tuple[float, ...] = ()
    t: float = 0.5
    subinvariance_t: Tuple[float, ...] = (0.5, 1.0)
    ensemble_size: int = 200
    monitoring: str = "GridExit"
    epsilon: Optional[float] = None


@dataclass(frozen=True)
class VerifySection:
    suite: str = "fast"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """校验后的配置; model / drift / observables / domain 已在读入时构造好"""
    model_section: ModelSection
    drift_section: DriftSection
    integrator: IntegratorConfig
    mc: MCSection
    output: OutputSection
    observable_texts: Tuple[str, ...]
    domain_section: Optional[DomainSection]
    semigroup: SemigroupSection
    invariant: InvariantSection
    yosida: YosidaSection
    dirichlet: DirichletSection
    verify: VerifySection
    model: SpectralModel
    drift: DriftSpec
    potential: Optional[PotentialSpec]
    observables: Tuple[CylFunc, ...]
    domain: Optional[DomainSpec]
    killing: Optional[KillingConfig] = None
    source: Optional[str] = None

    @property
    def master_seed(self) -> int:
        return self.mc.master_seed

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if int(seed) < 0 or int(seed) >= 2 ** 64:
                raise ConfigError("mc.master_seed", f"seed must be an unsigned 64-bit integer, got {seed}")
            cfg = replace(cfg, mc=replace(cfg.mc, master_seed=int(seed)))
        if out_dir is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=str(out_dir)))
        return cfg

    def state(self, coeffs: Sequence[float], field_path: str) -> np.ndarray:
        """短列表补零到 n_modes"""
        coeffs = list(coeffs)
        if len(coeffs) > self.model.n_modes:
            raise ConfigError(field_path, f"has {len(coeffs)} entries, model has {self.model.n_modes} modes")
        out = np.zeros(self.model.n_modes)
        out[:len(coeffs)] = coeffs
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": {"preset": self.model.preset_label.value, "n_modes": self.model.n_modes,
                      "grid_size": self.model.grid_size, "params": dict(self.model_section.params)},
            "drift": self.drift.to_dict(),
            "integrator": self.integrator.to_dict(),
            "mc": {"n_paths": self.mc.n_paths, "master_seed": self.mc.master_seed, "path_ids": list(self.mc.path_ids)},
            "observables": list(self.observable_texts),
            "domain": None if self.domain is None else dict(self.domain.to_dict(),
                                                           eps_list=list(self.domain_section.eps_list)),
        }


# --- 各段解析 ---
def _read_model(r: _Reader) -> ModelSection:
    r.check_keys(("preset", "n_modes", "grid_size", "params"))
    preset = r.get("preset", str, required=True)
    try:
        PresetLabel.parse(preset)
    except (ValueError, LabError) as e:
        r.fail("preset", str(e))
    params = r.data.get("params") or {}
    if not isinstance(params, Mapping):
        r.fail("params", "expected a mapping")
    return ModelSection(
        preset=preset,
        n_modes=r.positive("n_modes", int),
        grid_size=r.positive("grid_size", int),
        params=dict(params),
    )


def _read_drift(r: _Reader) -> DriftSection:
    r.check_keys(("variant", "zeta2", "poly_coeffs", "phi_coeffs", "kernel", "zeta"))
    variant = r.get("variant", str, "zero", choices=DRIFT_VARIANTS)
    kernel = r.data.get("kernel") or {}
    if not isinstance(kernel, Mapping):
        r.fail("kernel", "expected a mapping")
    section = DriftSection(
        variant=variant,
        zeta2=r.get("zeta2", float, 0.0),
        poly_coeffs=tuple(r.floats("poly_coeffs", ()) or ()),
        phi_coeffs=tuple(r.floats("phi_coeffs", ()) or ()),
        kernel=dict(kernel),
        zeta=r.get("zeta", float),
    )
    if variant == "nemytskii_gradient" and not section.poly_coeffs:
        r.fail("poly_coeffs", "nemytskii_gradient drift needs the coefficients of φ′")
    if variant == "gradient_potential" and not section.phi_coeffs:
        r.fail("phi_coeffs", "gradient_potential drift needs the coefficients of φ")
    if variant == "kernel_cubic" and not kernel:
        r.fail("kernel", "kernel_cubic drift needs a kernel section")
    return section


def _read_integrator(r: _Reader) -> IntegratorConfig:
    r.check_keys(("dt", "t_final", "scheme", "record_every"))
    scheme = r.get("scheme", str, Scheme.EXPONENTIAL_EULER.value, choices=[s.value for s in Scheme])
    try:
        return IntegratorConfig(
            dt=r.positive("dt", float, required=True),
            t_final=r.positive("t_final", float, required=True, strict=False),
            scheme=Scheme(scheme),
            record_every=r.positive("record_every", int, 1),
        )
    except ModelError as e:
        r.fail("", str(e))


def _read_mc(r: _Reader) -> MCSection:
    r.check_keys(("n_paths", "master_seed", "path_ids"))
    seed = r.get("master_seed", int, LabSettings.DEFAULT_SEED)
    if not 0 <= seed < 2 ** 64:
        r.fail("master_seed", f"must be an unsigned 64-bit integer, got {seed}")
    ids = r.floats("path_ids", (0,))
    if any(i < 0 or i != int(i) for i in ids):
        r.fail("path_ids", "path ids must be nonnegative integers")
    return MCSection(
        n_paths=r.positive("n_paths", int, 1000),
        master_seed=seed,
        path_ids=tuple(int(i) for i in ids),
    )


def _read_domain(r: _Reader) -> DomainSection:
    r.check_keys(("shape", "radius", "center", "normal", "offset", "eps_list"))
    shape = r.get("shape", str, "ball", choices=[s.value for s in DomainShape])
    eps = r.floats("eps_list", (0.2, 0.1, 0.05, 0.025))
    if any(e <= 0 for e in eps):
        r.fail("eps_list", "every epsilon must be > 0")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        r.fail("eps_list", f"epsilon ladder must be strictly decreasing, got {eps}")
    center = r.floats("center")
    normal = r.floats("normal")
    if shape == "half_space" and normal is None:
        r.fail("normal", "half_space domain needs a normal vector")
    return DomainSection(
        shape=shape,
        radius=r.positive("radius", float, 1.0),
        center=None if center is None else tuple(center),
        normal=None if normal is None else tuple(normal),
        offset=r.get("offset", float, 0.0),
        eps_list=tuple(eps),
    )


def _read_output(r: _Reader) -> OutputSection:
    r.check_keys(("directory", "formats"))
    formats = r.strings("formats", OUTPUT_FORMATS)
    for i, f in enumerate(formats):
        if f not in OUTPUT_FORMATS:
            r.fail(f"formats[{i}]", f"unknown format {f!r}; allowed: {', '.join(OUTPUT_FORMATS)}")
    return OutputSection(directory=r.get("directory", str, "outputs"), formats=tuple(formats))


def _read_semigroup(r: _Reader) -> SemigroupSection:
    r.check_keys(("x0", "t_list", "generator_t_list"))
    t_list = r.floats("t_list", (0.1, 1.0))
    if any(t < 0 for t in t_list):
        r.fail("t_list", "times must be >= 0")
    gen = r.floats("generator_t_list", ())
    if any(t <= 0 for t in gen):
        r.fail("generator_t_list", "difference-quotient times must be > 0")
    return SemigroupSection(x0=tuple(r.floats("x0", ())), t_list=tuple(t_list), generator_t_list=tuple(gen))


def _read_invariant(r: _Reader) -> InvariantSection:
    r.check_keys(("methods", "burn_in", "thin", "n_keep", "t_large", "n_samples", "pcn_steps", "pcn_step_size",
                  "pcn_burn_in", "pcn_thin", "p_list", "invariance_t"))
    methods = r.strings("methods", ("longrun", "ensemble"))
    for i, m in enumerate(methods):
        if m not in INVARIANT_METHODS:
            r.fail(f"methods[{i}]", f"unknown method {m!r}; allowed: {', '.join(INVARIANT_METHODS)}")
    step = r.get("pcn_step_size", float, 0.3)
    if not 0 < step < 1:
        r.fail("pcn_step_size", f"must lie in (0, 1), got {step}")
    p_list = r.floats("p_list", (1.0, 2.0, 4.0))
    if any(p < 1 or p > 8 for p in p_list):
        r.fail("p_list", "moment orders must lie in [1, 8]")
    return InvariantSection(
        methods=tuple(methods),
        burn_in=r.positive("burn_in", float, 2.0, strict=False),
        thin=r.positive("thin", int, 10),
        n_keep=r.positive("n_keep", int, 2000),
        t_large=r.positive("t_large", float, None, strict=False),
        n_samples=r.positive("n_samples", int, 2000),
        pcn_steps=r.positive("pcn_steps", int, 20000),
        pcn_step_size=step,
        pcn_burn_in=r.positive("pcn_burn_in", int, 1000, strict=False),
        pcn_thin=r.positive("pcn_thin", int, 5),
        p_list=tuple(p_list),
        invariance_t=r.positive("invariance_t", float, 1.0, strict=False),
    )


def _read_yosida(r: _Reader) -> YosidaSection:
    r.check_keys(("deltas", "n_pairs", "s_list", "n_points", "n_smoothing_samples"))
    deltas = r.floats("deltas", (1.0, 0.1, 0.01))
    s_list = r.floats("s_list", (1.0, 0.1, 0.01))
    if any(d <= 0 for d in deltas):
        r.fail("deltas", "every delta must be > 0")
    if any(s <= 0 for s in s_list):
        r.fail("s_list", "every s must be > 0")
    return YosidaSection(
        deltas=tuple(deltas),
        n_pairs=r.positive("n_pairs", int, 1000),
        s_list=tuple(s_list),
        n_points=r.positive("n_points", int, 10),
        n_smoothing_samples=r.positive("n_smoothing_samples", int, 1000),
    )


def _read_dirichlet(r: _Reader) -> DirichletSection:
    r.check_keys(("x0", "t", "subinvariance_t", "ensemble_size", "monitoring", "epsilon"))
    sub_t = r.floats("subinvariance_t", (0.5, 1.0))
    if any(t < 0 for t in sub_t):
        r.fail("subinvariance_t", "times must be >= 0")
    return DirichletSection(
        x0=tuple(r.floats("x0", ())),
        t=r.positive("t", float, 0.5, strict=False),
        subinvariance_t=tuple(sub_t),
        ensemble_size=r.positive("ensemble_size", int, 200),
        monitoring=r.get("monitoring", str, "GridExit", choices=[m.value for m in Monitoring]),
        epsilon=r.positive("epsilon", float),
    )


# --- 构造 ---
def _resolve_path(path: str, base: Optional[str]) -> str:
    if os.path.isabs(path) or base is None:
        return path
    return os.path.join(os.path.dirname(os.path.abspath(base)), path)


def _build_kernel(r: _Reader, model: SpectralModel, source: Optional[str]) -> KernelSpec:
    r.check_keys(("form", "factor_coeffs", "factor_values", "file"))
    form = r.get("form", str, KernelForm.RANK_ONE.value, choices=[f.value for f in KernelForm])
    try:
        if r.has("file"):
            kernel = load_kernel(_resolve_path(r.get("file", str), source))
        elif form == KernelForm.FULL_TENSOR.value:
            r.fail("file", "full_tensor kernels are read from a KTEN file")
        elif r.has("factor_values"):
            kernel = KernelSpec.rank_one(np.asarray(r.floats("factor_values")))
        elif r.has("factor_coeffs"):
            coeffs = r.floats("factor_coeffs")
            if len(coeffs) > model.n_modes:
                r.fail("factor_coeffs", f"has {len(coeffs)} entries, model has {model.n_modes} modes")
            padded = np.zeros(model.n_modes)
            padded[:len(coeffs)] = coeffs
            kernel = KernelSpec.rank_one(to_grid(model, padded).values)
        else:
            r.fail("", "rank_one kernel needs factor_coeffs, factor_values or file")
        kernel.check_model(model)
    except (DriftError, OSError) as e:
        r.fail("", str(e))
    return kernel


def _build_drift(r: _Reader, section: DriftSection, model: SpectralModel,
                 source: Optional[str]) -> Tuple[DriftSpec, Optional[PotentialSpec]]:
    try:
        if section.variant == "zero":
            return DriftSpec.zero(), None
        if section.variant == "linear":
            return DriftSpec.linear(section.zeta2), None
        if section.variant == "nemytskii_gradient":
            return DriftSpec.nemytskii(section.poly_coeffs, section.zeta2, zeta=section.zeta), None
        if section.variant == "kernel_cubic":
            kernel = _build_kernel(r.section("kernel"), model, source)
            return DriftSpec.kernel_cubic(kernel, section.zeta2, zeta=section.zeta), None
        potential = PotentialSpec(section.phi_coeffs, section.zeta2)
        return potential.to_drift(), potential
    except DriftError as e:
        r.fail("", str(e))


def load_experiment_config(path: str) -> ExperimentConfig:
    """读入并校验配置文件; 任何问题都以 ConfigError 报告 (字段路径 + 行号)"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read config {path}: {e}")
    return parse_experiment_config(text, source=path)


def parse_experiment_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
        lines = _line_index(yaml.compose(text)) if data is not None else {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError("<file>", f"not valid YAML/JSON: {e}", None if mark is None else mark.line + 1)
    root = _Reader(data, "", lines)
    root.check_keys(("model", "drift", "integrator", "mc", "domain", "observables", "output",
                     "semigroup", "invariant", "yosida", "dirichlet", "verify"))
    if not root.has("model"):
        root.fail("model", "missing required section")
    if not root.has("integrator"):
        root.fail("integrator", "missing required section")

    model_section = _read_model(root.section("model"))
    drift_section = _read_drift(root.section("drift"))
    integrator = _read_integrator(root.section("integrator"))
    mc = _read_mc(root.section("mc"))
    output = _read_output(root.section("output"))
    domain_section = _read_domain(root.section("domain")) if root.has("domain") else None
    semigroup = _read_semigroup(root.section("semigroup"))
    invariant = _read_invariant(root.section("invariant"))
    yosida = _read_yosida(root.section("yosida"))
    dirichlet = _read_dirichlet(root.section("dirichlet"))
    verify_r = root.section("verify")
    verify_r.check_keys(("suite",))
    verify = VerifySection(suite=verify_r.get("suite", str, "fast", choices=("fast", "full")))

    # 引用校验: 在构造出的模型上
    mr = root.section("model")
    try:
        model = build_model(model_section.preset, model_section.n_modes, model_section.grid_size,
                            {k: (_resolve_path(v, source) if k == "spectrum_csv" else v)
                             for k, v in model_section.params.items()})
    except ModelError as e:
        message = str(e)
        key = "params.beta" if "beta" in message else ("grid_size" if "grid" in message else "")
        mr.fail(key, message)

    drift, potential = _build_drift(root.section("drift"), drift_section, model, source)

    obs_texts = root.strings("observables", ())
    observables = []
    for i, text_i in enumerate(obs_texts):
        field_path = f"observables[{i}]"
        try:
            observables.append(parse_cylfunc(text_i, model.n_modes, field_path))
        except ConfigError as e:
            raise ConfigError(e.field_path, str(e).split("] ", 1)[-1], lines.get(field_path))

    domain = None
    if domain_section is not None:
        dr = root.section("domain")
        try:
            if domain_section.shape == DomainShape.BALL.value:
                center = None
                if domain_section.center is not None:
                    center = _pad(dr, "center", domain_section.center, model.n_modes)
                domain = DomainSpec.ball(domain_section.radius, center)
            else:
                domain = DomainSpec.half_space(_pad(dr, "normal", domain_section.normal, model.n_modes),
                                               domain_section.offset)
            for eps in domain_section.eps_list:
                domain.check_epsilon(eps)
        except DomainError as e:
            dr.fail("eps_list" if "epsilon" in str(e) else "", str(e))

    killing = None
    if domain is not None:
        # ε 缺省取 eps_list 最细一级
        eps = dirichlet.epsilon
        if eps is None and domain_section.eps_list:
            eps = min(domain_section.eps_list)
        if eps is not None:
            try:
                killing = KillingConfig(eps, Monitoring(dirichlet.monitoring))
                killing.check_domain(domain)
            except DomainError as e:
                root.section("dirichlet").fail("epsilon", str(e))
    elif dirichlet.epsilon is not None:
        root.section("dirichlet").fail("epsilon", "needs a domain section")

    cfg = ExperimentConfig(
        model_section=model_section, drift_section=drift_section, integrator=integrator, mc=mc, output=output,
        observable_texts=tuple(obs_texts), domain_section=domain_section, semigroup=semigroup,
        invariant=invariant, yosida=yosida, dirichlet=dirichlet, verify=verify,
        model=model, drift=drift, potential=potential, observables=tuple(observables), domain=domain,
        killing=killing, source=source,
    )
    for key, coeffs in (("semigroup.x0", semigroup.x0), ("dirichlet.x0", dirichlet.x0)):
        if len(coeffs) > model.n_modes:
            raise ConfigError(key, f"has {len(coeffs)} entries, model has {model.n_modes} modes", lines.get(key))
    logger.debug(f"config loaded: {model!r}, drift={drift.variant.value}, {len(observables)} observables")
    return cfg


def _pad(r: _Reader, key: str, values: Sequence[float], n_modes: int) -> np.ndarray:
    if len(values) > n_modes:
        r.fail(key, f"has {len(values)} entries, model has {n_modes} modes")
    out = np.zeros(n_modes)
    out[:len(values)] = values
    return out
