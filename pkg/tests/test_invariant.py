import numpy as np
import pytest

from src.common.errors import DriftError, EmptyEnsembleError, ModelError
from src.spectral.core import build_model, covariance_Qinf, sample_states
from src.spectral.drift import DriftSpec, drift_eval_batch
from src.dynamics.engine import IntegratorConfig
from src.analysis.invariant import (
    MeasureEnsemble,
    PotentialSpec,
    Provenance,
    compare_moments,
    default_mixing_time,
    dirichlet_form_test,
    e_concentration,
    estimate_ensemble,
    estimate_longrun,
    generator_mean_zero_test,
    invariance_test,
    moment_report,
    pcn_sample,
    sample_gaussian_reference,
    split_chain_check,
)
from src.analysis.observables import CylFunc, cyl_eval_batch, parse_cylfunc

from tests.conftest import SE_BAND, one_mode


# --- 样本云 ---
def test_ensemble_weights_must_sum_to_one():
    with pytest.raises(ModelError, match="sum"):
        MeasureEnsemble(np.zeros((2, 3)), np.array([0.5, 0.4]), Provenance.PCN)


def test_empty_ensemble():
    with pytest.raises(EmptyEnsembleError):
        MeasureEnsemble.uniform(np.zeros((0, 3)), Provenance.LONG_RUN)


def test_gaussian_reference_trace(heat4):
    ens = sample_gaussian_reference(heat4, 20000, seed=0)
    assert ens.provenance is Provenance.CLOSED_FORM_GAUSSIAN
    m, se = ens.mean_and_se((ens.samples ** 2).sum(axis=-1))
    assert abs(m - covariance_Qinf(heat4).variances.sum()) <= SE_BAND * se


# --- 一维闭式 ---
def test_cosine_integral_under_unit_gaussian():
    # a = -1/2, c = 1: ν = N(0, 1), ∫cos dν = e^{-1/2}
    model = one_mode(-0.5, 1.0)
    ens = sample_gaussian_reference(model, 40000, seed=1)
    m, se = ens.mean_and_se(cyl_eval_batch(CylFunc.cos([1.0]), ens.samples))
    assert abs(m - np.exp(-0.5)) <= SE_BAND * se


def test_dirichlet_form_one_mode_value():
    # a = -1, c = 2: ∫(N₀ sin) sin dν = -(1 + e^{-2})/2
    model = one_mode(-1.0, 2.0)
    ens = sample_gaussian_reference(model, 40000, seed=2)
    (check,) = dirichlet_form_test(ens, model, DriftSpec.zero(), [CylFunc.sin([1.0])], sigma=SE_BAND)
    assert check.passed
    target = -(1.0 + np.exp(-2.0)) / 2.0
    assert target == pytest.approx(-0.567668, abs=1e-6)
    assert abs(check.value_lhs - target) <= SE_BAND * 0.01
    assert abs(check.value_rhs - target) <= SE_BAND * check.extra["rhs_stderr"]


def test_generator_mean_zero_under_gaussian(heat4):
    ens = sample_gaussian_reference(heat4, 20000, seed=3)
    phis = [parse_cylfunc("sin(h=0:1)", 4), parse_cylfunc("cos(h=0:1,1:2)", 4)]
    checks = generator_mean_zero_test(ens, heat4, DriftSpec.zero(), phis, sigma=SE_BAND)
    assert all(c.passed for c in checks), [c.to_dict() for c in checks]


def test_invariance_of_gaussian_under_ou(heat4):
    ens = sample_gaussian_reference(heat4, 1000, seed=4)
    cfg = IntegratorConfig(dt=0.01, t_final=0.1)
    checks = invariance_test(ens, heat4, DriftSpec.zero(), cfg, [parse_cylfunc("cos(h=0:1)", 4)], 0.1, 2000,
                             seed=5, sigma=SE_BAND)
    assert checks[0].passed, checks[0].to_dict()
    assert "lhs_stderr" in checks[0].extra


def test_invariance_at_time_zero_is_trivial(heat4):
    ens = sample_gaussian_reference(heat4, 50, seed=4)
    cfg = IntegratorConfig(dt=0.01, t_final=0.1)
    (check,) = invariance_test(ens, heat4, DriftSpec.zero(), cfg, [CylFunc.sin([1.0, 0, 0, 0])], 0.0, 10, seed=0)
    assert check.passed and check.value_lhs == check.value_rhs


# --- 势函数与 pCN ---
def test_potential_drift_is_minus_gradient(heat4, cubic):
    potential = PotentialSpec(phi_coeffs=(0.0, 0.0, 0.0, 0.0, 0.25), zeta2=0.5)
    X = sample_states(heat4, 5, seed=0)
    expected = drift_eval_batch(heat4, cubic, X) - 0.5 * X
    np.testing.assert_allclose(drift_eval_batch(heat4, potential.to_drift(), X), expected, atol=1e-12)


def test_potential_must_be_convex():
    with pytest.raises(DriftError):
        PotentialSpec(phi_coeffs=(0.0, 0.0, -1.0))


def test_pcn_needs_scalar_noise():
    model = build_model("ScaledIdentityHOneNoise", 4, params={"beta": 3.0})
    with pytest.raises(ModelError, match="C = c"):
        pcn_sample(model, PotentialSpec(), 10, 0.3, seed=0)


def test_pcn_step_size_range(heat4):
    with pytest.raises(ModelError):
        pcn_sample(heat4, PotentialSpec(), 10, 1.0, seed=0)


def test_pcn_with_zero_potential_targets_the_gaussian(heat4):
    ens = pcn_sample(heat4, PotentialSpec(), 6000, 0.5, seed=7, burn_in=200)
    assert ens.provenance is Provenance.PCN
    assert ens.acceptance_rate == pytest.approx(1.0)
    m, se = ens.mean_and_se((ens.samples ** 2).sum(axis=-1))
    assert abs(m - covariance_Qinf(heat4).variances.sum()) <= SE_BAND * se
    assert all(row["pass"] for row in split_chain_check(ens, (2.0,), sigma=SE_BAND))


def test_split_chain_flags_a_level_shift():
    rng = np.random.default_rng(0)
    n = 2000
    level = np.where(np.arange(n) < n // 2, 1.0, 3.0)
    shifted = MeasureEnsemble.uniform(level[:, None] + 0.1 * rng.standard_normal((n, 2)), Provenance.LONG_RUN)
    assert not any(row["pass"] for row in split_chain_check(shifted, (1.0, 2.0)))

    flat = MeasureEnsemble.uniform(1.0 + 0.1 * rng.standard_normal((n, 2)), Provenance.LONG_RUN)
    rows = split_chain_check(flat, (1.0, 2.0), sigma=SE_BAND)
    assert all(row["pass"] for row in rows)
    assert rows[0]["a_source"] == rows[0]["b_source"] == "LongRun"


def test_pcn_potential_shrinks_second_moment(heat4):
    free = pcn_sample(heat4, PotentialSpec(), 4000, 0.4, seed=8, burn_in=200)
    confined = pcn_sample(heat4, PotentialSpec(phi_coeffs=(0.0, 0.0, 5.0)), 4000, 0.4, seed=8, burn_in=200)
    second = lambda ens: ens.mean_and_se((ens.samples ** 2).sum(axis=-1))[0]
    assert second(confined) < second(free)
    assert 0.05 <= confined.acceptance_rate <= 1.0


# --- 估计器 ---
def test_longrun_burn_in_must_leave_samples(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    with pytest.raises(EmptyEnsembleError):
        estimate_longrun(heat4, cubic, cfg, burn_in=1.0, thin=1, n_keep=10, seed=0)


def test_longrun_sample_count(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=2.0)
    ens = estimate_longrun(heat4, cubic, cfg, burn_in=1.0, thin=5, n_keep=15, seed=0)
    assert ens.size == 15
    assert ens.provenance is Provenance.LONG_RUN
    assert ens.ess > 0


def test_mixing_time_of_heat_equation(heat4):
    assert default_mixing_time(heat4, DriftSpec.zero()) == pytest.approx(8.0 / np.pi ** 2)


def test_ensemble_matches_gaussian_for_zero_drift(heat4):
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    ens = estimate_ensemble(heat4, DriftSpec.zero(), cfg, np.zeros(4), 2.0, 4000, seed=1)
    ref = sample_gaussian_reference(heat4, 4000, seed=2)
    rows = compare_moments(ens, ref, (2.0, 4.0), sigma=SE_BAND)
    assert {"p", "a", "b", "diff", "combined_stderr", "pass", "a_source", "b_source"} <= set(rows[0])
    assert rows[0]["a_source"] == "LargeTimeEnsemble"
    assert all(r["pass"] for r in rows), rows


def test_moment_report_order_range(heat4):
    ens = sample_gaussian_reference(heat4, 10, seed=0)
    with pytest.raises(ModelError):
        moment_report(ens, (0.5,))


def test_e_concentration_on_gaussian(heat4):
    diag = e_concentration(sample_gaussian_reference(heat4, 500, seed=0), heat4)
    assert diag["finite_fraction"] == pytest.approx(1.0)
    assert 0 < diag["sup_p95"] < np.inf
    assert 0 < diag["h1_p95"] < np.inf
