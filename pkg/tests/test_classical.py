import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.classical import (
    FockBasis, GaussianDensity, evolve_classical, min_eigenvalue, nonquantumness_witness,
    resolve_sigma_convention, short_time_lambda, stormer_verlet, subspace_block,
    subspace_rate_oracle, weyl_fock_matrix,
)
from src.core.quantum import moments
from src.core.scales import auto_grid, derive_scales

from .conftest import spec_of


def test_stormer_verlet_is_time_reversible():
    r = np.linspace(-1.0, 1.0, 11)
    p = np.zeros_like(r)

    def force(x):
        return -x

    r1, p1 = stormer_verlet(r, p, force, 1.0, 2.0, 400)
    r0, p0 = stormer_verlet(r1, p1, force, 1.0, -2.0, 400)
    assert_allclose(r0, r, atol=1e-12)
    assert_allclose(p0, p, atol=1e-12)
    # 谐振子：r(t) = r cos t
    assert_allclose(r1, r * math.cos(2.0), rtol=1e-4)


def test_gaussian_density_normalized(toy_params, field_grid):
    f = GaussianDensity.from_scales(derive_scales(toy_params)).on_grid(field_grid, 1.0)
    assert_allclose(f.norm(), 1.0, rtol=1e-10)
    assert f.origin == "classical"
    m = moments(f)
    assert_allclose(m.var_r, 0.5, rtol=1e-8)
    assert_allclose(m.var_p, 0.5, rtol=1e-8)


def test_evolve_classical_preserves_norm(toy_params, field_grid):
    f0 = GaussianDensity.from_scales(derive_scales(toy_params)).on_grid(field_grid, 1.0)
    f = evolve_classical(f0, spec_of(toy_params), 1.0)
    assert f.t == 1.0
    assert_allclose(f.norm(), 1.0, rtol=1e-8)
    assert f.values.min() >= 0.0


def test_evolve_classical_zero_duration(toy_params, field_grid):
    f0 = GaussianDensity.from_scales(derive_scales(toy_params)).on_grid(field_grid, 1.0)
    f = evolve_classical(f0, spec_of(toy_params), 0.0)
    assert np.array_equal(f.values, f0.values)
    with pytest.raises(ValueError):
        evolve_classical(replace(f0, t=1.0), spec_of(toy_params), 0.5)


def test_interpolated_initial_field(toy_params, field_grid):
    analytic = GaussianDensity.from_scales(derive_scales(toy_params)).on_grid(field_grid, 1.0)
    sampled = replace(analytic, density=None)
    spec = spec_of(toy_params)
    a = evolve_classical(analytic, spec, 1.0)
    b = evolve_classical(sampled, spec, 1.0)
    assert np.max(np.abs(a.values - b.values)) < 1e-3 * a.max_abs()


class TestFockBasis:
    def test_orthonormal(self, toy_params):
        basis = FockBasis.for_scales(derive_scales(toy_params), dim=8)
        r = np.linspace(-12.0, 12.0, 4001)
        chi = basis.wavefunctions(r)
        overlap = chi.conj() @ chi.T * (r[1] - r[0])
        assert_allclose(overlap, np.eye(8), atol=1e-10)

    def test_ground_state_matches_initial_packet(self, toy_params):
        scales = derive_scales(toy_params)
        basis = FockBasis.for_scales(scales)
        assert_allclose(basis.ell ** 2, 2.0 * scales.sigma_r ** 2)

    def test_invalid(self):
        with pytest.raises(ValueError):
            FockBasis(dim=0, ell=1.0, mu=1.0, hbar=1.0)
        with pytest.raises(ValueError):
            FockBasis(dim=3, ell=-1.0, mu=1.0, hbar=1.0)


class TestWeylMatrix:
    @pytest.fixture
    def setup(self, representative):
        params = representative
        t_max = 1.0
        scales = derive_scales(params, t_max)
        grid = auto_grid(params, t_max, n_r=128, n_p=128)
        f0 = GaussianDensity.from_scales(scales).on_grid(grid, params.hbar)
        basis = FockBasis.for_scales(scales, dim=6)
        return params, f0, basis

    def test_initial_state_is_ground_state(self, setup):
        params, f0, basis = setup
        w = weyl_fock_matrix(f0, basis)
        assert_allclose(w.rho[0, 0].real, 1.0, atol=1e-8)
        assert_allclose(w.trace, 1.0, atol=1e-8)
        assert w.leakage < 1e-8
        assert abs(nonquantumness_witness(w)) < 1e-8
        assert_allclose(w.rho, w.rho.conj().T, atol=1e-14)

    def test_hbar_mismatch(self, setup):
        _, f0, basis = setup
        with pytest.raises(ValueError):
            weyl_fock_matrix(f0, replace(basis, hbar=2.0 * basis.hbar))

    @pytest.mark.parametrize("t", [0.5, 1.0])
    def test_negative_eigenvalue_grows_linearly(self, setup, t):
        params, f0, basis = setup
        f = evolve_classical(f0, spec_of(params), t)
        w = weyl_fock_matrix(f, basis.centered_on(moments(f)))
        block = subspace_block(w)
        convention = resolve_sigma_convention(params)["chosen"]
        assert block.value < 0.0
        assert_allclose(block.value, short_time_lambda(params, t, convention), rtol=0.1)
        assert min_eigenvalue(w) <= block.value + 1e-15

    def test_quadratic_dynamics_stays_positive(self, setup):
        params, f0, basis = setup
        quadratic = params.model_copy(update={"N": 2})
        f = evolve_classical(f0, spec_of(quadratic), 1.0)
        w = weyl_fock_matrix(f, basis.centered_on(moments(f)))
        assert min_eigenvalue(w) > -1e-8


def test_short_time_lambda_conventions(representative):
    single = short_time_lambda(representative, 1.0, "single")
    relative = short_time_lambda(representative, 1.0, "relative")
    assert single < 0.0
    assert_allclose(relative / single, 2.0 ** 1.5)
    with pytest.raises(ValueError):
        short_time_lambda(representative, 1.0, "other")


def test_short_time_lambda_validity_window(representative):
    with pytest.raises(ValueError):
        short_time_lambda(representative, 0.06 / representative.omega, "single")


def test_subspace_oracle_is_imaginary(toy_params):
    rate = subspace_rate_oracle(toy_params)
    assert abs(rate.real) < 1e-12 * abs(rate.imag)
    resolved = resolve_sigma_convention(toy_params)
    assert resolved["chosen"] in ("single", "relative")
    assert_allclose(resolved["oracle"], abs(rate))

