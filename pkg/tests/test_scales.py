import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.scales import (
    PhaseSpaceGrid, PhysicalParams, QuantityKind, auto_grid, derive_scales, epsilon_scaling,
    from_dimensionless, initial_gaussian, quadratic_envelope, to_dimensionless,
)

from .conftest import toy


def test_toy_frequency(toy_params):
    assert_allclose(toy_params.omega, 0.1, rtol=1e-12)
    assert toy_params.mu == 1.0


def test_representative_scales(representative):
    scales = derive_scales(representative, 40.0)
    assert_allclose(scales.omega, 1.134e-3, rtol=2e-3)
    assert_allclose(scales.sigma_r, 40e-9 * math.sqrt(2.0), rtol=1e-12)
    assert_allclose(scales.sigma_p * scales.sigma_r, representative.hbar / 2.0, rtol=1e-12)
    # ωt ≈ 0.045，ε 约为 0.047
    assert 0.04 < scales.epsilon < 0.055


def test_epsilon_is_linear_in_time(representative):
    e1 = derive_scales(representative, 10.0).epsilon
    e2 = derive_scales(representative, 20.0).epsilon
    assert_allclose(e2 / e1, 2.0, rtol=1e-12)


def test_epsilon_scaling_exponents(representative):
    slopes = epsilon_scaling(representative, 40.0)
    # ε ∝ ħ² m ω² t / (L σ_p³)，ω² ∝ G m / L³，σ_p ∝ 1/σ_r
    expected = {"m": 2.0, "sigma_r": 3.0, "t": 1.0, "L": -4.0, "G": 1.0}
    for name, value in expected.items():
        assert_allclose(slopes[name], value, atol=1e-9)


@pytest.mark.parametrize("kind", list(QuantityKind))
def test_dimensionless_inverse(toy_params, kind):
    scales = derive_scales(toy_params)
    value = np.array([0.3, -1.7, 12.5])
    assert_allclose(from_dimensionless(to_dimensionless(value, kind, scales), kind, scales), value)


def test_dimensionless_units(toy_params):
    scales = derive_scales(toy_params)
    assert_allclose(to_dimensionless(math.sqrt(5.0), "position", scales), 1.0)
    assert_allclose(to_dimensionless(math.sqrt(0.2), "momentum", scales), 1.0)
    assert_allclose(to_dimensionless(10.0, "time", scales), 1.0)
    with pytest.raises(ValueError):
        to_dimensionless(1.0, "energy", scales)


def test_params_reject_wide_packet():
    with pytest.raises(ValueError):
        toy(sigma=20.0)


@pytest.mark.parametrize("field", ["m", "L", "sigma", "G", "hbar"])
def test_params_reject_nonpositive(field):
    with pytest.raises(ValueError):
        toy(**{field: 0.0})


def test_with_coupling_scales_omega_squared(toy_params):
    stronger = toy_params.with_coupling(4.0)
    assert_allclose(stronger.omega, 2.0 * toy_params.omega)


@pytest.mark.parametrize("n", [0, 63, 100])
def test_grid_requires_power_of_two(n):
    with pytest.raises(ValueError):
        PhaseSpaceGrid(r_min=-1.0, r_max=1.0, p_min=-1.0, p_max=1.0, n_r=n, n_p=64)


def test_grid_rejects_empty_range():
    with pytest.raises(ValueError):
        PhaseSpaceGrid(r_min=1.0, r_max=1.0, p_min=-1.0, p_max=1.0, n_r=64, n_p=64)


def test_grid_axes_are_half_open():
    grid = PhaseSpaceGrid(r_min=-1.0, r_max=1.0, p_min=0.0, p_max=4.0, n_r=64, n_p=128)
    assert grid.r[0] == -1.0
    assert grid.r[-1] < 1.0
    assert_allclose(grid.dr, 2.0 / 64)
    assert_allclose(grid.cell, grid.dr * grid.dp)
    R, P = grid.mesh()
    assert R.shape == (64, 128)


def test_quadratic_envelope_at_zero(toy_params):
    mean_r, std_r, mean_p, std_p = quadratic_envelope(toy_params, [0.0])
    assert_allclose(mean_r, 0.0, atol=1e-15)
    assert_allclose(std_r, 0.5 * math.sqrt(2.0))
    assert_allclose(std_r * std_p, 0.5)


def test_auto_grid_covers_envelope(toy_params):
    grid = auto_grid(toy_params, 1.0, n_r=512, n_p=128)
    mean_r, std_r, mean_p, std_p = quadratic_envelope(toy_params, [1.0])
    assert grid.r_min < mean_r[0] - 7.9 * std_r[0]
    assert grid.r_max > mean_r[0] + 7.9 * std_r[0]
    assert grid.p_min < mean_p[0] - 7.9 * std_p[0]


def test_auto_grid_momentum_spread_is_independent(representative):
    narrow = auto_grid(representative, 40.0)
    wide = auto_grid(representative, 40.0, p_spread=16.0)
    assert (wide.r_min, wide.r_max) == (narrow.r_min, narrow.r_max)
    mean_r, std_r, mean_p, std_p = quadratic_envelope(representative, [40.0])
    assert wide.p_min < mean_p[0] - 15.9 * std_p[0]
    assert wide.p_max - wide.p_min > 1.8 * (narrow.p_max - narrow.p_min)


def test_initial_gaussian_normalized(toy_params, toy_grid):
    state = initial_gaussian(derive_scales(toy_params), toy_grid)
    assert_allclose(state.norm(), 1.0, rtol=1e-12)
    assert state.t == 0.0


def test_initial_gaussian_rejects_narrow_grid(toy_params):
    grid = PhaseSpaceGrid(r_min=-1.0, r_max=1.0, p_min=-5.0, p_max=5.0, n_r=256, n_p=64)
    with pytest.raises(ValueError):
        initial_gaussian(derive_scales(toy_params), grid)


def test_initial_gaussian_rejects_coarse_grid(toy_params):
    grid = PhaseSpaceGrid(r_min=-40.0, r_max=40.0, p_min=-5.0, p_max=5.0, n_r=64, n_p=64)
    with pytest.raises(ValueError):
        initial_gaussian(derive_scales(toy_params), grid)
