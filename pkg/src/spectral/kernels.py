# -------------------------------------------------------------
# 三线性核 V(f, g, h) 与 KTEN 二进制张量文件
# -------------------------------------------------------------
"""
V(f,g,h)(ξ) = ∫∫∫ K(ξ,η₁,η₂,η₃) f(η₁) g(η₂) h(η₃) dη, 在 M 点网格上做求积。

RankOneProduct:  K = -k⊗k⊗k⊗k, 于是 V(f,g,h) = -⟨k,f⟩⟨k,g⟩⟨k,h⟩ k
FullTensor:      K 以 M⁴ 数组给出, 要求对称且非正
"""
import logging
import os
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np

from src.common.errors import DriftError
from src.common.types import SpectralModel, StateLike, StateVector
from src.spectral.core import analyze, synthesize

logger = logging.getLogger(__name__)

KTEN_MAGIC = b"KTEN"
KTEN_HEADER = np.dtype([("magic", "S4"), ("m", "<u4"), ("n", "<u8")])
SYMMETRY_TOL = 1e-12


class KernelForm(Enum):
    RANK_ONE = "rank_one"
    FULL_TENSOR = "full_tensor"


@dataclass(frozen=True, eq=False)
class KernelSpec:
    form: KernelForm
    factor: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    sign: int = -1

    def __post_init__(self):
        form = KernelForm(self.form)
        object.__setattr__(self, "form", form)
        if self.sign != -1:
            raise DriftError("only negative kernels (sign = -1) are supported")
        if form is KernelForm.RANK_ONE:
            if self.factor is None:
                raise DriftError("RankOneProduct kernel needs a factor field")
            factor = np.array(self.factor, dtype=float)
            if factor.ndim != 1 or not np.all(np.isfinite(factor)):
                raise DriftError("kernel factor must be a finite 1-d grid field")
            factor.flags.writeable = False
            object.__setattr__(self, "factor", factor)
        else:
            if self.values is None:
                raise DriftError("FullTensor kernel needs tensor values")
            values = np.array(self.values, dtype=float)
            _check_full_tensor(values)
            values.flags.writeable = False
            object.__setattr__(self, "values", values)

    @classmethod
    def rank_one(cls, factor) -> "KernelSpec":
        return cls(KernelForm.RANK_ONE, factor=factor)

    @classmethod
    def full_tensor(cls, values) -> "KernelSpec":
        return cls(KernelForm.FULL_TENSOR, values=values)

    @property
    def grid_size(self) -> int:
        if self.form is KernelForm.RANK_ONE:
            return int(self.factor.shape[0])
        return int(self.values.shape[0])

    def check_model(self, model: SpectralModel):
        if self.grid_size != model.grid_size:
            raise DriftError(f"kernel grid size {self.grid_size} != model grid_size {model.grid_size}")

    @cached_property
    def _coeff_cache(self):
        return {}

    def factor_coeffs(self, model: SpectralModel) -> np.ndarray:
        """kc = from_grid(k), 使 ⟨k, f⟩ = kc · f 对截断空间中的 f 精确成立"""
        self.check_model(model)
        key = (model.n_modes, model.grid_size)
        if key not in self._coeff_cache:
            self._coeff_cache[key] = analyze(model, self.factor)
        return self._coeff_cache[key]

    def to_full_tensor(self) -> "KernelSpec":
        if self.form is KernelForm.FULL_TENSOR:
            return self
        k = self.factor
        return KernelSpec.full_tensor(-np.einsum("i,j,k,l->ijkl", k, k, k, k))

    def __repr__(self) -> str:
        return f"KernelSpec(form={self.form.value}, M={self.grid_size})"


def _check_full_tensor(values: np.ndarray):
    if values.ndim != 4 or len(set(values.shape)) != 1:
        raise DriftError(f"FullTensor kernel must have shape (M, M, M, M), got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DriftError("FullTensor kernel has non-finite entries")
    if np.any(values > 0):
        raise DriftError("FullTensor kernel must be nonpositive")
    scale = max(1.0, float(np.abs(values).max()))
    # (01) 与 (0123) 生成全部 S₄
    for axes in ((1, 0, 2, 3), (1, 2, 3, 0)):
        if np.abs(values - values.transpose(axes)).max() > SYMMETRY_TOL * scale:
            raise DriftError(f"FullTensor kernel is not symmetric under axis permutation {axes}")


# --- 求值 ---
def kernel_apply_batch(model: SpectralModel, kernel: KernelSpec,
                       f: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """V(f,g,h) 的系数, 输入输出形状 (B, N)"""
    kernel.check_model(model)
    f, g, h = (np.atleast_2d(np.asarray(arr, dtype=float)) for arr in (f, g, h))
    if kernel.form is KernelForm.RANK_ONE:
        kc = kernel.factor_coeffs(model)
        prod = (f * kc).sum(axis=-1) * (g * kc).sum(axis=-1) * (h * kc).sum(axis=-1)
        return -prod[:, None] * kc
    w = model.grid_weight
    fg, gg, hg = synthesize(model, f), synthesize(model, g), synthesize(model, h)
    grid = w ** 3 * np.einsum("ijkl,bj,bk,bl->bi", kernel.values, fg, gg, hg)
    return analyze(model, grid)


def kernel_apply(model: SpectralModel, kernel: KernelSpec, f: StateLike, g: StateLike, h: StateLike) -> StateVector:
    out = kernel_apply_batch(
        model, kernel,
        model.coeffs_of(f, "f")[None, :], model.coeffs_of(g, "g")[None, :], model.coeffs_of(h, "h")[None, :],
    )
    return StateVector(out[0])


# --- KTEN 文件 ---
def save_kernel(path: str, kernel: KernelSpec) -> str:
    """16 字节头 (magic 'KTEN', u32 M, u64 负载字节数) + float64 行主序"""
    values = kernel.to_full_tensor().values
    m = values.shape[0]
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes(order="C")
    header = np.array([(KTEN_MAGIC, m, len(payload))], dtype=KTEN_HEADER)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(payload)
    logger.info(f"💾 saved kernel tensor M={m} to {path}")
    return path


def load_kernel(path: str) -> KernelSpec:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < KTEN_HEADER.itemsize:
        raise DriftError(f"{path}: truncated KTEN header")
    header = np.frombuffer(raw[:KTEN_HEADER.itemsize], dtype=KTEN_HEADER)[0]
    if bytes(header["magic"]) != KTEN_MAGIC:
        raise DriftError(f"{path}: bad magic {bytes(header['magic'])!r}, expected {KTEN_MAGIC!r}")
    m, n_bytes = int(header["m"]), int(header["n"])
    if n_bytes != 8 * m ** 4 or len(raw) - KTEN_HEADER.itemsize != n_bytes:
        raise DriftError(f"{path}: payload length {len(raw) - KTEN_HEADER.itemsize} inconsistent with M={m}")
    values = np.frombuffer(raw[KTEN_HEADER.itemsize:], dtype="<f8").reshape(m, m, m, m)
    return KernelSpec.full_tensor(values.astype(float))
