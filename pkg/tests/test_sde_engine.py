import numpy as np
import pytest

from src.common.errors import ModelError
from src.common.settings import LabSettings
from src.spectral.core import build_model, sample_states
from src.spectral.drift import DriftSpec
from src.dynamics.engine import IntegratorConfig, Scheme, simulate_coupled, simulate_path, step
from src.dynamics.noise import NoiseStream, standard_normals, uniforms
from src.dynamics.parallel import run_paths
from src.dynamics.scans import (
    moment_scan,
    ou_two_sided_exact,
    stochastic_convolution_moments,
    strong_convergence_scan,
    two_sided_decay,
)

from tests.conftest import SE_BAND, unit


# --- 噪声 ---
def test_noise_window_matches_single_steps():
    window = standard_normals(7, 3, 10, 5, 6)
    singles = np.stack([standard_normals(7, 3, 10 + i, 1, 6)[0] for i in range(5)])
    np.testing.assert_array_equal(window, singles)


def test_noise_streams_are_distinct_per_path_and_seed():
    a = standard_normals(1, 0, 0, 4, 4)
    assert not np.array_equal(a, standard_normals(1, 1, 0, 4, 4))
    assert not np.array_equal(a, standard_normals(2, 0, 0, 4, 4))


def test_uniforms_lie_in_open_interval():
    u = uniforms(0, 0, 0, 1000, 4)
    assert u.min() > 0.0 and u.max() < 1.0


def test_path_id_range_is_enforced():
    with pytest.raises(ModelError):
        standard_normals(0, -1, 0, 1, 1)


# --- 积分器配置 ---
def test_integrator_config_validation():
    with pytest.raises(ModelError, match="whole number"):
        IntegratorConfig(dt=0.3, t_final=1.0)
    with pytest.raises(ModelError):
        IntegratorConfig(dt=0.0, t_final=1.0)
    with pytest.raises(ModelError):
        IntegratorConfig(dt=0.1, t_final=1.0, record_every=0)
    cfg = IntegratorConfig(dt=0.1, t_final=1.0, scheme="semi_implicit")
    assert cfg.scheme is Scheme.SEMI_IMPLICIT and cfg.n_steps == 10


def test_with_horizon_divides_the_new_time():
    cfg = IntegratorConfig(dt=0.04, t_final=0.4)
    short = cfg.with_horizon(0.1)
    assert short.n_steps == 3
    assert short.dt * short.n_steps == pytest.approx(0.1)
    assert cfg.with_horizon(0.0).n_steps == 0


# --- 单路径 ---
def test_trajectory_rows_and_determinism(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=1.0, record_every=5)
    x0 = unit(4, 0)
    a = simulate_path(heat4, cubic, cfg, x0, master_seed=3, path_id=2)
    b = simulate_path(heat4, cubic, cfg, x0, master_seed=3, path_id=2)
    assert len(a) == 100 // 5 + 1
    np.testing.assert_array_equal(a.states, b.states)
    assert list(next(a.rows()))[:2] == [0.0, 1.0]
    assert len(a.header(4)) == len(next(a.rows()))


def test_noiseless_linear_flow_is_exact():
    model = build_model("HeatDirichlet", 3, params={"noise_scale": 0.0})
    cfg = IntegratorConfig(dt=0.01, t_final=0.5)
    x0 = np.array([1.0, -2.0, 0.5])
    traj = simulate_path(model, DriftSpec.zero(), cfg, x0)
    np.testing.assert_allclose(traj.states[-1], np.exp(model.eigenvalues * 0.5) * x0, rtol=1e-12)


def test_single_step_matches_batch(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=0.01)
    x0 = np.array([0.3, 0.1, -0.2, 0.05])
    one = step(heat4, cubic, cfg, x0, NoiseStream(master_seed=5, path_id=4))
    traj = simulate_path(heat4, cubic, cfg, x0, master_seed=5, path_id=4)
    np.testing.assert_allclose(one.coeffs, traj.states[-1], rtol=1e-12)


def test_coupled_paths_contract(heat4, cubic):
    cfg = IntegratorConfig(dt=1e-3, t_final=2.0, record_every=10)
    starts = sample_states(heat4, 8, seed=1)
    for i in range(4):
        result = simulate_coupled(heat4, cubic, cfg, starts[2 * i], starts[2 * i + 1], master_seed=0, path_id=i)
        assert result.bound_holds
        assert result.rate_bound == pytest.approx(heat4.max_eigenvalue + 0.5)


def test_coupled_identical_starts_stay_together(heat4, cubic):
    cfg = IntegratorConfig(dt=1e-2, t_final=0.5)
    x = np.array([0.2, 0.0, 0.1, 0.0])
    result = simulate_coupled(heat4, cubic, cfg, x, x)
    assert result.bound_holds
    assert np.all(result.separation == 0)


# --- 批量与并行 ---
def test_paths_are_independent_of_batching(heat4, cubic, monkeypatch):
    cfg = IntegratorConfig(dt=0.01, t_final=0.2)
    x0 = np.zeros(4)
    full = run_paths(heat4, cubic, cfg, x0, 20, master_seed=9)
    tail = run_paths(heat4, cubic, cfg, x0, 5, master_seed=9, path_offset=15)
    np.testing.assert_array_equal(full.final[15:], tail.final)

    monkeypatch.setattr(LabSettings, "CHUNK_SIZE", 3)
    rechunked = run_paths(heat4, cubic, cfg, x0, 20, master_seed=9)
    np.testing.assert_array_equal(full.final, rechunked.final)


def test_worker_count_does_not_change_results(heat4, cubic, monkeypatch):
    cfg = IntegratorConfig(dt=0.01, t_final=0.1)
    monkeypatch.setattr(LabSettings, "CHUNK_SIZE", 8)
    serial = run_paths(heat4, cubic, cfg, np.zeros(4), 40, master_seed=1)
    monkeypatch.setattr(LabSettings, "NUM_WORKERS", 3)
    parallel = run_paths(heat4, cubic, cfg, np.zeros(4), 40, master_seed=1)
    np.testing.assert_array_equal(serial.final, parallel.final)


def test_divergent_paths_are_flagged():
    model = build_model("HeatDirichlet", 2)
    explosive = DriftSpec.nemytskii((0.0, 0.0, 0.0, -1.0))
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    batch = run_paths(model, explosive, cfg, np.array([20.0, 0.0]), 4, master_seed=0)
    assert batch.n_discarded == 4
    assert np.all(np.isnan(batch.final))
    assert np.all(batch.divergence_step > 0)


# --- 扫描 ---
def test_stochastic_convolution_trace(heat4):
    table = stochastic_convolution_moments(heat4, 0.5, 4000, seed=0, sigma=SE_BAND)
    assert table.passed, table.rows


def test_moment_scan_is_flat_for_dissipative_drift(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=4.0)
    table = moment_scan(heat4, cubic, cfg, unit(4, 0), (2.0, 4.0), (1.0, 2.0, 4.0), 400, seed=0, sigma=SE_BAND)
    assert table.passed, table.diagnostics
    assert len(table.rows) == 6


def test_moment_scan_needs_enough_paths(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    with pytest.raises(ModelError, match="n_paths"):
        moment_scan(heat4, cubic, cfg, np.zeros(4), (2.0,), (1.0,), 50, seed=0)


def test_two_sided_decay_matches_ou_closed_form(heat4):
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    x0 = unit(4, 0)
    pairs = [(0.2, 0.1), (0.4, 0.3), (0.7, 0.6)]
    table = two_sided_decay(heat4, DriftSpec.zero(), cfg, x0, pairs, 2000, seed=0, sigma=SE_BAND)
    assert table.passed, table.diagnostics
    for row in table.rows:
        exact = ou_two_sided_exact(heat4, x0, row["s"], row["h"])
        assert abs(row["estimate"] - exact) <= SE_BAND * row["stderr"] + 1e-12


def test_two_sided_decay_compares_only_within_a_start_or_lag(heat4):
    # 同一 h 不同 s: 差值随 s 增大, 不构成衰减序列
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    x0 = unit(4, 0)
    mixed = two_sided_decay(heat4, DriftSpec.zero(), cfg, x0, [(0.2, 0.1), (0.8, 0.1)], 2000, seed=1, sigma=SE_BAND)
    assert mixed.rows[0]["estimate"] < mixed.rows[1]["estimate"]
    assert mixed.passed, mixed.diagnostics

    table = two_sided_decay(heat4, DriftSpec.zero(), cfg, x0, [(0.8, 0.1), (0.8, 0.4), (0.2, 0.1)], 2000,
                            seed=1, sigma=SE_BAND)
    assert table.passed, table.diagnostics
    assert table.diagnostics["s=0.8"]["decay_rate"] < 0
    assert "s=0.2" not in table.diagnostics
    for row in table.rows:
        exact = ou_two_sided_exact(heat4, x0, row["s"], row["h"])
        assert abs(row["estimate"] - exact) <= SE_BAND * row["stderr"] + 1e-12


def test_strong_order_of_exponential_euler():
    model = build_model("HeatDirichlet", 4)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.128)
    table = strong_convergence_scan(model, DriftSpec.nemytskii((0.0, 0.0, 0.0, 1.0)), cfg, unit(4, 0),
                                    levels=3, n_paths=200, seed=0)
    assert table.diagnostics["order"] >= 0.9
    assert table.passed


def test_strong_scan_needs_divisible_steps(heat4, cubic):
    with pytest.raises(ModelError, match="divisible"):
        strong_convergence_scan(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1), np.zeros(4), 3, 10, 0)
