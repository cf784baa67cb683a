import numpy as np
import pytest

from src.common.errors import ConfigError, DriftError, ModelError
from src.spectral.drift import DriftSpec
from src.dynamics.engine import IntegratorConfig
from src.analysis.observables import (
    CylFunc,
    TrigKind,
    apply_N0,
    carre_du_champ_batch,
    cyl_eval,
    cyl_grad,
    generator_diff_quotient,
    generator_ladder,
    ou_mehler_exact,
    parse_cylfunc,
    semigroup_mc,
    semigroup_mc_many,
)

from tests.conftest import SE_BAND, one_mode, unit


# --- 解析 ---
def test_parse_two_terms():
    phi = parse_cylfunc("2*sin(h=0:1,2:0.5) - cos(h=1:1)", 4)
    assert len(phi.terms) == 2
    first, second = phi.terms
    assert first.amplitude == 2.0 and first.kind is TrigKind.SIN
    np.testing.assert_array_equal(first.freq, [1.0, 0.0, 0.5, 0.0])
    assert second.amplitude == -1.0 and second.kind is TrigKind.COS
    np.testing.assert_array_equal(second.freq, [0.0, 1.0, 0.0, 0.0])


def test_parse_constant_and_bare_amplitude():
    assert cyl_eval(parse_cylfunc("cos(h=)", 3), [5.0, -1.0, 2.0]) == pytest.approx(1.0)
    phi = parse_cylfunc("0.5 sin(0:2)", 2)
    assert cyl_eval(phi, [0.25, 9.0]) == pytest.approx(0.5 * np.sin(0.5))


def test_parse_rejects_out_of_range_mode():
    with pytest.raises(ConfigError, match="out of range"):
        parse_cylfunc("sin(h=4:1)", 4, field_path="observables[0]")


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_cylfunc("tan(h=0:1)", 4)


def test_cylfunc_mode_mismatch(heat4):
    with pytest.raises(ModelError):
        cyl_grad(heat4, CylFunc.sin(unit(3, 0)), np.zeros(4))


# --- 求值与导数 ---
def test_sum_and_gradient():
    phi = CylFunc.sin([1.0, 0.0]) + CylFunc.cos([0.0, 2.0], amplitude=3.0)
    x = np.array([0.3, -0.2])
    assert cyl_eval(phi, x) == pytest.approx(np.sin(0.3) + 3.0 * np.cos(-0.4))
    assert phi.sup_bound == 4.0
    model = one_mode(-1.0, 1.0)
    g = cyl_grad(model, CylFunc.cos([2.0]), [0.1]).coeffs
    assert g[0] == pytest.approx(-2.0 * np.sin(0.2))


def test_N0_matches_closed_form_on_one_mode():
    model = one_mode(-1.0, 2.0)
    phi = CylFunc.sin([1.0])
    for x in (-0.7, 0.0, 1.3):
        # ½·c·(-sin x) + a x cos x
        assert apply_N0(model, DriftSpec.zero(), phi, [x]) == pytest.approx(-np.sin(x) - x * np.cos(x))
        expected = -np.sin(x) + (-1.0 + 0.3) * x * np.cos(x)
        assert apply_N0(model, DriftSpec.linear(0.3), phi, [x]) == pytest.approx(expected)


def test_carre_du_champ(heat4):
    phi = CylFunc.sin([1.0, 0.0, 2.0, 0.0])
    X = np.array([[0.1, 0.0, 0.2, 0.0], [0.0, 1.0, 0.0, 1.0]])
    theta = X @ np.array([1.0, 0.0, 2.0, 0.0])
    np.testing.assert_allclose(carre_du_champ_batch(heat4, phi, X), 5.0 * np.cos(theta) ** 2)


# --- Mehler ---
def test_mehler_at_time_zero_is_the_observable(heat4):
    phi = parse_cylfunc("sin(h=0:1,1:-1) + 0.5*cos(h=2:3)", 4)
    x = np.array([0.2, 0.4, -0.1, 0.0])
    assert ou_mehler_exact(heat4, phi, x, 0.0) == pytest.approx(cyl_eval(phi, x))


def test_mehler_refuses_nonzero_drift(heat4, cubic):
    with pytest.raises(DriftError):
        ou_mehler_exact(heat4, CylFunc.sin(unit(4, 0)), np.zeros(4), 0.1, drift=cubic)


def test_mehler_one_mode_large_time():
    # t → ∞: ∫cos dN(0, ½) = e^{-1/4}
    model = one_mode(-1.0, 1.0)
    assert ou_mehler_exact(model, CylFunc.cos([1.0]), [3.0], 40.0) == pytest.approx(np.exp(-0.25), abs=1e-12)


def test_monte_carlo_agrees_with_mehler(heat4):
    cfg = IntegratorConfig(dt=0.01, t_final=0.1)
    phis = [parse_cylfunc("cos(h=0:1)", 4), parse_cylfunc("sin(h=0:1,1:1)", 4)]
    x = unit(4, 0, 0.5)
    estimates = semigroup_mc_many(heat4, DriftSpec.zero(), cfg, phis, x, 0.1, 4000, seed=0)
    for phi, est in zip(phis, estimates):
        exact = ou_mehler_exact(heat4, phi, x, 0.1)
        assert abs(est.value - exact) <= SE_BAND * est.stderr, (phi.label(), est.to_dict(), exact)
        assert est.n_paths == 4000 and est.n_discarded == 0


def test_semigroup_at_time_zero(heat4, cubic):
    cfg = IntegratorConfig(dt=0.01, t_final=0.1)
    phi = CylFunc.sin(unit(4, 1))
    est = semigroup_mc(heat4, cubic, cfg, phi, unit(4, 1, 0.7), 0.0, 10, seed=0)
    assert est.value == pytest.approx(np.sin(0.7))
    assert est.stderr == 0.0


def test_semigroup_needs_two_paths(heat4, cubic):
    with pytest.raises(ModelError):
        semigroup_mc(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1), CylFunc.sin(unit(4, 0)),
                     np.zeros(4), 0.1, 1, seed=0)


# --- 生成元 ---
def test_exact_quotient_approaches_N0(heat4):
    cfg = IntegratorConfig(dt=1e-3, t_final=0.1)
    phi = parse_cylfunc("sin(h=0:1)", 4)
    x = unit(4, 0, 0.8)
    rows, _ = generator_ladder(heat4, DriftSpec.zero(), cfg, phi, x, (0.1, 0.01, 0.001), 200, seed=1)
    gaps = [abs(r.exact_quotient - r.n0_value) for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.05 * abs(rows[2].n0_value)


def test_generator_quotient_with_cubic_drift(heat4, cubic):
    cfg = IntegratorConfig(dt=1e-3, t_final=0.005)
    phi = parse_cylfunc("cos(h=0:1)", 4)
    q = generator_diff_quotient(heat4, cubic, cfg, phi, unit(4, 0, 0.5), 0.005, 20000, seed=2)
    assert q.exact_quotient is None
    # 有限 t 的偏差 O(t) 另加统计误差
    assert q.error <= SE_BAND * q.stderr + 0.1 * max(1.0, abs(q.n0_value))


def test_generator_rejects_nonpositive_time(heat4, cubic):
    with pytest.raises(ModelError):
        generator_diff_quotient(heat4, cubic, IntegratorConfig(dt=0.01, t_final=0.1),
                                CylFunc.sin(unit(4, 0)), np.zeros(4), 0.0, 10, seed=0)
