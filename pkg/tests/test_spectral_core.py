import numpy as np
import pytest

from src.common.errors import ModelError
from src.common.types import StateVector
from src.spectral.core import (
    build_model,
    covariance_Qinf,
    eval_at,
    from_grid,
    norms,
    qt_variances,
    resolvent_mollify,
    sample_states,
    semigroup_apply,
    to_grid,
)

from tests.conftest import unit


def test_heat_dirichlet_spectrum():
    model = build_model("HeatDirichlet", 3, params={"noise_scale": 2.0})
    k = np.arange(1, 4)
    np.testing.assert_allclose(model.eigenvalues, -(k * np.pi) ** 2)
    np.testing.assert_allclose(model.noise_coeffs, 2.0)
    assert model.grid_size == 9
    assert model.max_eigenvalue == pytest.approx(-np.pi ** 2)


def test_h1_noise_preset_rejects_small_beta():
    with pytest.raises(ModelError, match="beta > 2"):
        build_model("ScaledIdentityHOneNoise", 4, params={"beta": 1.0})


def test_h1_noise_preset_coefficients():
    model = build_model("ScaledIdentityHOneNoise", 4, params={"beta": 3.0})
    k = np.arange(1, 5)
    np.testing.assert_allclose(model.eigenvalues, -0.5)
    np.testing.assert_allclose(model.noise_coeffs, (k * np.pi) ** -6.0)


def test_grid_must_resolve_twice_the_modes():
    with pytest.raises(ModelError, match="alias"):
        build_model("HeatDirichlet", 8, grid_size=15)


def test_unknown_preset():
    with pytest.raises(ModelError, match="unknown preset"):
        build_model("Laplace", 4)


def test_custom_spectrum_from_csv(tmp_path):
    path = tmp_path / "spectrum.csv"
    path.write_text("a_k,c_k\n# comment\n-1.0,0.5\n-4.0,0.25\n", encoding="utf-8")
    model = build_model("Custom", params={"spectrum_csv": str(path)})
    assert model.n_modes == 2
    np.testing.assert_allclose(model.eigenvalues, [-1.0, -4.0])
    np.testing.assert_allclose(model.noise_coeffs, [0.5, 0.25])


def test_custom_spectrum_needs_negative_eigenvalues():
    with pytest.raises(ModelError, match="strictly negative"):
        build_model("Custom", params={"eigenvalues": [-1.0, 0.0], "noise_coeffs": [1.0, 1.0]})


def test_grid_transform_inverts_on_modes(heat4):
    v = np.array([0.3, -1.2, 0.7, 0.05])
    np.testing.assert_allclose(from_grid(heat4, to_grid(heat4, v)).coeffs, v, atol=1e-13)


def test_grid_values_match_sine_series(heat4):
    v = np.array([1.0, 0.0, -0.5, 0.25])
    np.testing.assert_allclose(to_grid(heat4, v).values, eval_at(heat4, v, heat4.grid_nodes), atol=1e-12)


def test_semigroup_and_covariances(heat4):
    x = np.ones(4)
    t = 0.05
    np.testing.assert_allclose(semigroup_apply(heat4, t, x).coeffs, np.exp(heat4.eigenvalues * t))
    assert np.all(qt_variances(heat4, 0.0) == 0.0)
    np.testing.assert_allclose(qt_variances(heat4, 50.0), covariance_Qinf(heat4).variances, rtol=1e-12)
    with pytest.raises(ModelError):
        qt_variances(heat4, -1.0)


def test_resolvent_mollifier_approaches_identity(heat4):
    x = np.array([1.0, -1.0, 0.5, 2.0])
    gaps = [np.linalg.norm(resolvent_mollify(heat4, n, x).coeffs - x) for n in (1.0, 10.0, 1e3, 1e6)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3


def test_norms_of_a_single_mode(heat4):
    result = norms(heat4, StateVector(unit(4, 2)))
    assert result["l2"] == pytest.approx(1.0)
    assert result["h1"] == pytest.approx(3 * np.pi)
    assert 0 < result["sup_grid"] <= np.sqrt(2.0) + 1e-12


def test_sample_states_is_seeded(heat4):
    a = sample_states(heat4, 5, seed=11)
    b = sample_states(heat4, 5, seed=11)
    assert a.shape == (5, 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_states(heat4, 5, seed=12))
