import numpy as np
import pytest

from src.common.settings import LabSettings
from src.spectral.core import build_model
from src.spectral.drift import DriftSpec

# Monte-Carlo 断言统一用 4 倍标准误带
SE_BAND = 4.0


@pytest.fixture(autouse=True)
def serial_runtime(monkeypatch):
    """测试默认单进程、无进度条; 需要多进程的测试自行覆盖"""
    monkeypatch.setattr(LabSettings, "NUM_WORKERS", 1)
    monkeypatch.setattr(LabSettings, "SHOW_PROGRESS", False)


@pytest.fixture
def heat4():
    return build_model("HeatDirichlet", 4)


@pytest.fixture
def heat8():
    return build_model("HeatDirichlet", 8)


@pytest.fixture
def cubic():
    return DriftSpec.nemytskii((0.0, 0.0, 0.0, 1.0))


def one_mode(a: float, c: float):
    return build_model("Custom", params={"eigenvalues": [a], "noise_coeffs": [c]})


def unit(n: int, k: int, value: float = 1.0) -> np.ndarray:
    v = np.zeros(n)
    v[k] = value
    return v
