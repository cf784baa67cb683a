import numpy as np
import pytest

from src.common.errors import DomainError
from src.spectral.core import build_model
from src.spectral.drift import DriftSpec
from src.dynamics.engine import IntegratorConfig
from src.analysis.dirichlet import (
    DomainSpec,
    KillingConfig,
    Monitoring,
    distance_to_complement,
    fk_contraction_test,
    fk_convergence_scan,
    killed_estimates,
    killed_exit,
    killed_fk,
    killed_measure_test,
    killed_semigroup,
    subinvariance_test,
    survival_curve,
    v_eps,
)
from src.analysis.invariant import sample_gaussian_reference
from src.analysis.observables import CylFunc, parse_cylfunc

from tests.conftest import SE_BAND, unit


@pytest.fixture
def noisy4():
    return build_model("HeatDirichlet", 4, params={"noise_scale": 8.0})


# --- 区域 ---
def test_ball_potential_values():
    ball = DomainSpec.ball(1.0)
    assert v_eps(ball, 0.2, [0.0, 0.0]) == 0.0
    assert v_eps(ball, 0.2, [0.9, 0.0]) == pytest.approx(0.5)
    assert v_eps(ball, 0.2, [1.5, 0.0]) == 1.0
    assert distance_to_complement(ball, [0.0, 0.6]) == pytest.approx(0.4)
    assert distance_to_complement(ball, [0.0, 2.0]) == 0.0


def test_epsilon_must_fit_inside_the_ball():
    ball = DomainSpec.ball(0.5)
    with pytest.raises(DomainError, match="radius"):
        ball.check_epsilon(0.5)
    with pytest.raises(DomainError):
        ball.check_epsilon(-0.1)
    assert ball.check_epsilon(0.1) == 0.1


def test_half_space_signed_distance():
    half = DomainSpec.half_space([2.0, 0.0], 1.0)
    np.testing.assert_allclose(half.signed_distance_batch(np.array([[0.0, 0.0], [1.0, 3.0]])), [0.5, -0.5])
    assert half.contains(np.array([0.0, 5.0]))
    assert not half.contains(np.array([0.5, 0.0]))
    assert v_eps(half, 1.0, [0.0, 0.0]) == pytest.approx(0.5)


def test_half_space_needs_nonzero_normal():
    with pytest.raises(DomainError):
        DomainSpec.half_space([0.0, 0.0], 1.0)


def test_domain_dimension_is_checked(heat4, cubic):
    ball = DomainSpec.ball(1.0, center=[0.0, 0.0])
    with pytest.raises(DomainError):
        killed_exit(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1), ball, CylFunc.sin(unit(4, 0)),
                    np.zeros(4), 0.1, 10, seed=0)


def test_killing_config():
    cfg = KillingConfig(0.1, "GridExit")
    assert cfg.monitoring is Monitoring.GRID_EXIT
    with pytest.raises(DomainError):
        cfg.check_domain(DomainSpec.ball(0.05))
    with pytest.raises(DomainError):
        KillingConfig(0.0)


def test_killed_semigroup_follows_monitoring(noisy4, cubic):
    cfg = IntegratorConfig(dt=1e-3, t_final=0.1)
    ball = DomainSpec.ball(1.0)
    phi = parse_cylfunc("cos(h=0:1)", 4)
    grid = killed_semigroup(noisy4, cubic, cfg, ball, KillingConfig(0.1, "GridExit"), phi, np.zeros(4), 0.1, 200, 2)
    fk = killed_semigroup(noisy4, cubic, cfg, ball, KillingConfig(0.1, "FeynmanKac"), phi, np.zeros(4), 0.1, 200, 2)
    assert grid.value == killed_exit(noisy4, cubic, cfg, ball, phi, np.zeros(4), 0.1, 200, seed=2).value
    assert fk.value == killed_fk(noisy4, cubic, cfg, ball, 0.1, phi, np.zeros(4), 0.1, 200, seed=2).value
    assert grid.epsilon is None and fk.epsilon == 0.1
    assert grid.value != fk.value
    with pytest.raises(DomainError):
        killed_semigroup(noisy4, cubic, cfg, DomainSpec.ball(0.05), KillingConfig(0.1), phi, np.zeros(4), 0.1, 10, 0)


# --- 杀死半群 ---
def test_killed_estimates_at_time_zero(heat4, cubic):
    phi = parse_cylfunc("cos(h=0:1)", 4)
    x = unit(4, 0, 0.3)
    exit_est, fk, _ = killed_estimates(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1), DomainSpec.ball(1.0),
                                       phi, x, 0.0, (0.2, 0.1), 10, seed=0)
    assert exit_est.value == pytest.approx(np.cos(0.3))
    assert exit_est.survival_fraction == 1.0
    assert [e.value for e in fk] == pytest.approx([np.cos(0.3)] * 2)


def test_start_outside_domain_is_rejected(heat4, cubic):
    with pytest.raises(DomainError, match="outside"):
        killed_exit(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1), DomainSpec.ball(1.0),
                    CylFunc.sin(unit(4, 0)), unit(4, 0, 2.0), 0.1, 10, seed=0)


def test_killed_constant_is_survival_probability(noisy4, cubic):
    cfg = IntegratorConfig(dt=1e-3, t_final=0.2)
    est = killed_exit(noisy4, cubic, cfg, DomainSpec.ball(1.0), CylFunc.constant(4), np.zeros(4), 0.2, 1000, seed=3)
    assert est.value == pytest.approx(est.survival_fraction)
    assert 0.0 < est.survival_fraction < 1.0


def test_epsilon_ladder_must_decrease(noisy4, cubic):
    with pytest.raises(DomainError, match="decreasing"):
        fk_convergence_scan(noisy4, cubic, IntegratorConfig(dt=1e-3, t_final=0.1), DomainSpec.ball(1.0),
                            CylFunc.constant(4), np.zeros(4), 0.1, (0.1, 0.2), 100, seed=0)


@pytest.mark.slow
def test_feynman_kac_converges_to_exit_estimate(noisy4, cubic):
    cfg = IntegratorConfig(dt=1e-4, t_final=0.1)
    eps = (0.4, 0.2, 0.1)
    table = fk_convergence_scan(noisy4, cubic, cfg, DomainSpec.ball(1.0), parse_cylfunc("cos(h=0:1)", 4),
                                np.zeros(4), 0.1, eps, 1000, seed=4, sigma=SE_BAND)
    assert [r["eps"] for r in table.rows] == list(eps)
    assert table.passed, table.to_dict()
    assert 0 < table.diagnostics["survival_fraction"] <= 1


def test_survival_curve_is_monotone(noisy4, cubic):
    cfg = IntegratorConfig(dt=1e-3, t_final=0.2)
    table = survival_curve(noisy4, cubic, cfg, DomainSpec.ball(1.0), np.zeros(4), (0.0, 0.05, 0.1, 0.2), 500, seed=5)
    survival = [r["survival"] for r in table.rows]
    assert survival[0] == 1.0
    assert all(b <= a for a, b in zip(survival, survival[1:]))
    assert table.passed
    assert table.columns == ["t", "survival", "stderr", "n_paths"]


# --- 测度层面 ---
def test_subinvariance_on_gaussian_sample(heat4):
    ens = sample_gaussian_reference(heat4, 200, seed=6)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.05)
    check = subinvariance_test(ens, heat4, DriftSpec.zero(), cfg, DomainSpec.ball(0.3),
                               parse_cylfunc("cos(h=0:1)", 4), 0.05, 2000, seed=7, sigma=SE_BAND)
    assert check.passed, check.to_dict()
    assert 0 < check.extra["nu_O"] < 1


def test_fk_contraction_on_gaussian_sample(heat4):
    ens = sample_gaussian_reference(heat4, 200, seed=8)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.05)
    check = fk_contraction_test(ens, heat4, DriftSpec.zero(), cfg, DomainSpec.ball(0.3), 0.1,
                                parse_cylfunc("sin(h=0:1)", 4), 0.05, 2000, seed=9, sigma=SE_BAND)
    assert check.passed, check.to_dict()
    assert check.extra["epsilon"] == 0.1


def test_killed_measure_test_follows_monitoring(heat4):
    ens = sample_gaussian_reference(heat4, 100, seed=10)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.05)
    phi = parse_cylfunc("cos(h=0:1)", 4)
    args = (ens, heat4, DriftSpec.zero(), cfg, DomainSpec.ball(0.3))
    grid = killed_measure_test(*args, KillingConfig(0.1, "GridExit"), phi, 0.05, 500, 11, sigma=SE_BAND)
    fk = killed_measure_test(*args, KillingConfig(0.1, "FeynmanKac"), phi, 0.05, 500, 11, sigma=SE_BAND)
    assert grid.test == "subinvariance" and "nu_O" in grid.extra
    assert fk.test == "fk_contraction" and fk.extra["epsilon"] == 0.1
