import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from src.core.config import settings
from src.core.errors import NumericalAbort
from src.core.quantum import WignerField, evolve_quantum, wigner_of
from src.core.scales import PhaseSpaceGrid, derive_scales, initial_gaussian
from src.core.witness import (
    ASYMPTOTIC_Z, MAX_DELTA, MIN_ANGLES, QuadratureSample, QuadratureTransform, SampleBatch, WitnessConfig,
    dimensionless_field, direct_witness, estimate_witness, measure_c_gamma, optimize_center, pattern_function,
    pattern_profile, pattern_profile_norm, pattern_values, perturbative_wigner, radon_marginal,
    sample_complexity, sample_homodyne, sample_homodyne_state, tomographic_witness, vacuum_field,
)
from src.services.run_config import GridConfig

from .conftest import fock1_field, spec_of


def smoothed_fock1(delta: float) -> float:
    """|1⟩ 的 Wigner 函数与宽度 Δ 的高斯窗卷积后在原点的值"""
    a = 1.0 + 1.0 / (2.0 * delta ** 2)
    return (2.0 - a) / (2.0 * math.pi * delta ** 2 * a ** 2)


def smoothed_vacuum(delta: float) -> float:
    return 1.0 / (math.pi * (1.0 + 2.0 * delta ** 2))


def dawson_kernel_reference(z: float) -> float:
    """1 − 2zD(z) = e^{−2z²} − 2z∫₀^z e^{−2zs}(e^{s²} − 1) ds，无相消"""
    upper = min(z, 60.0 / z)
    value, _ = integrate.quad(lambda s: math.exp(-2.0 * z * s) * math.expm1(s * s), 0.0, upper,
                              epsabs=0.0, epsrel=1e-12, limit=200)
    return math.exp(-2.0 * z * z) - 2.0 * z * value


class TestWitnessConfig:
    @pytest.mark.parametrize("delta", [0.0, -0.1, MAX_DELTA, 1.0])
    def test_rejects_inadmissible_width(self, delta):
        with pytest.raises(ValueError):
            WitnessConfig(delta=delta)

    def test_quadrature_offset(self):
        cfg = WitnessConfig(delta=0.2, center=(1.0, 2.0))
        assert_allclose(cfg.quadrature_offset(0.0), 1.0)
        assert_allclose(cfg.quadrature_offset(math.pi / 2), 2.0)

    def test_sample_angle_range(self):
        with pytest.raises(ValueError):
            QuadratureSample(phi=math.pi, x=0.0)


class TestPatternFunction:
    def test_value_at_origin(self):
        assert_allclose(pattern_function(0.0, 0.3), 1.0 / (2.0 * math.pi * 0.09))

    def test_far_tail_is_finite(self):
        y = np.array([10.0, 1e3, 1e6])
        values = pattern_function(y, 0.05)
        assert np.all(np.isfinite(values))
        # Γ_Δ(y) → −1/(2πy²)
        assert_allclose(values, -1.0 / (2.0 * math.pi * y ** 2), rtol=1e-3)

    @pytest.mark.parametrize("u", [6.0, 20.0, 1e3])
    def test_matches_reference_integral(self, u):
        expected = dawson_kernel_reference(u / math.sqrt(2.0)) / (2.0 * math.pi)
        assert_allclose(pattern_profile(u), expected, rtol=1e-9)
        assert_allclose(pattern_function(u * 0.04, 0.04), expected / 0.04 ** 2, rtol=1e-9)

    def test_series_branch_is_continuous(self):
        u = math.sqrt(2.0) * ASYMPTOTIC_Z * np.array([1.0 - 1e-12, 1.0])
        below, above = pattern_profile(u)
        assert_allclose(below, above, rtol=1e-10)

    def test_even(self):
        y = np.linspace(0.0, 3.0, 31)
        assert_allclose(pattern_function(y, 0.2), pattern_function(-y, 0.2))

    def test_profile_norm(self):
        # ∫f² = (1/2π)∫k²e^{−k²}/4 dk
        assert_allclose(pattern_profile_norm(), math.sqrt(math.pi) / (16.0 * math.pi), rtol=1e-8)


def test_dimensionless_field_preserves_norm(toy_params, field_grid):
    from src.core.classical import GaussianDensity
    scales = derive_scales(toy_params)
    f = GaussianDensity.from_scales(scales).on_grid(field_grid, 1.0)
    scaled = dimensionless_field(f, scales)
    assert scaled.units == "dimensionless"
    assert_allclose(scaled.norm(), f.norm(), rtol=1e-12)
    assert_allclose(scaled.grid.r_max, field_grid.r_max / scales.xunit)
    assert dimensionless_field(scaled, scales) is scaled
    # 解析密度一并换算
    assert_allclose(scaled.density(0.0, 0.0), f.density(0.0, 0.0) * scales.xunit * scales.punit)


class TestDirectWitness:
    def test_vacuum(self, unit_grid):
        cfg = WitnessConfig(delta=0.3)
        assert_allclose(direct_witness(vacuum_field(unit_grid), cfg), smoothed_vacuum(0.3), rtol=1e-8)

    @pytest.mark.parametrize("delta", [0.2, 0.3, 0.5])
    def test_fock_state_is_negative(self, unit_grid, delta):
        value = direct_witness(fock1_field(unit_grid), WitnessConfig(delta=delta))
        assert value < 0.0
        assert_allclose(value, smoothed_fock1(delta), rtol=1e-6)

    def test_resampling_on_coarse_grid(self):
        coarse = PhaseSpaceGrid(r_min=-8.0, r_max=8.0, p_min=-8.0, p_max=8.0, n_r=64, n_p=64)
        value = direct_witness(fock1_field(coarse), WitnessConfig(delta=0.2))
        assert_allclose(value, smoothed_fock1(0.2), rtol=2e-2)

    def test_window_must_fit(self, unit_grid):
        with pytest.raises(ValueError):
            direct_witness(vacuum_field(unit_grid), WitnessConfig(delta=0.3, center=(7.0, 0.0)))

    def test_requires_dimensionless_field(self, unit_grid):
        f = vacuum_field(unit_grid)
        si = WignerField(values=f.values, grid=f.grid, t=0.0)
        with pytest.raises(ValueError):
            direct_witness(si, WitnessConfig(delta=0.3))


class TestRadonMarginal:
    @pytest.mark.parametrize("phi", [0.0, 0.7, math.pi / 2, 2.5])
    def test_fock_marginal_is_rotation_invariant(self, unit_grid, phi):
        m = radon_marginal(fock1_field(unit_grid), phi, n_x=512, n_s=512)
        expected = 2.0 * m.x ** 2 * np.exp(-m.x ** 2) / math.sqrt(math.pi)
        assert_allclose(m.mass(), 1.0, rtol=1e-10)
        assert np.max(np.abs(m.density - expected)) < 1e-4

    def test_edge_mass_aborts(self):
        grid = PhaseSpaceGrid(r_min=-2.0, r_max=2.0, p_min=-2.0, p_max=2.0, n_r=64, n_p=64)
        with pytest.raises(NumericalAbort):
            radon_marginal(vacuum_field(grid), 0.3)


def test_tomographic_matches_direct(unit_grid):
    field = fock1_field(unit_grid)
    cfg = WitnessConfig(delta=0.3, center=(0.1, -0.2))
    tomo = tomographic_witness(field, cfg, n_phi=64, n_x=1024, n_s=512)
    assert_allclose(tomo, direct_witness(field, cfg), rtol=1e-3, atol=1e-4)


@pytest.mark.parametrize("delta", [0.05, 0.3])
def test_tomographic_vacuum(unit_grid, delta):
    tomo = tomographic_witness(vacuum_field(unit_grid), WitnessConfig(delta=delta), n_phi=8, n_s=512)
    assert_allclose(tomo, smoothed_vacuum(delta), rtol=2e-3)


def test_c_gamma_of_vacuum(unit_grid):
    cfg = WitnessConfig(delta=0.2)
    c = measure_c_gamma(vacuum_field(unit_grid), cfg, n_phi=16, n_x=1024, n_s=512)
    assert_allclose(c, pattern_profile_norm() / math.sqrt(math.pi), rtol=1e-3)


@pytest.mark.slow
def test_vacuum_calibration(unit_grid):
    field = vacuum_field(unit_grid)
    batch = sample_homodyne(field, 1_000_000, 11, n_phi=16, n_x=2048, n_s=1024)
    for delta in (0.02, 0.04, 0.08):
        cfg = WitnessConfig(delta=delta)
        est = estimate_witness(batch, cfg)
        assert abs(est.estimate - smoothed_vacuum(delta)) < 3.0 * est.standard_error
        variance = float(np.var(pattern_values(batch, cfg), ddof=1))
        model = measure_c_gamma(field, cfg, n_phi=16, n_x=2048, n_s=1024) / delta ** 3
        assert 0.5 < variance / model < 2.0


class TestSampling:
    @pytest.fixture
    def fock(self, unit_grid):
        return fock1_field(unit_grid)

    def draw(self, field, count=20_000, seed=5):
        return sample_homodyne(field, count, seed, n_phi=32, n_x=512, n_s=512, chunk_size=4096)

    def test_reproducible(self, fock):
        a = self.draw(fock)
        b = self.draw(fock)
        assert np.array_equal(a.phi, b.phi)
        assert np.array_equal(a.x, b.x)
        c = self.draw(fock, seed=6)
        assert not np.array_equal(a.x, c.x)

    def test_independent_of_thread_count(self, fock, monkeypatch):
        a = self.draw(fock)
        monkeypatch.setattr(settings, "max_workers", 1)
        b = self.draw(fock)
        assert np.array_equal(a.x, b.x)

    def test_sample_ranges(self, fock):
        batch = self.draw(fock)
        assert len(batch) == 20_000
        assert np.all((batch.phi >= 0.0) & (batch.phi < math.pi))
        # |1⟩：⟨x²⟩ = 3/2
        assert_allclose(np.mean(batch.x ** 2), 1.5, rtol=0.05)
        frame = batch.to_frame()
        assert list(frame.columns) == ["phi", "x"]
        assert isinstance(next(iter(batch)), QuadratureSample)

    def test_estimate_is_consistent(self, fock):
        cfg = WitnessConfig(delta=0.3)
        est = estimate_witness(self.draw(fock, count=50_000), cfg)
        assert est.standard_error > 0.0
        assert abs(est.estimate - smoothed_fock1(0.3)) < 5.0 * est.standard_error
        assert est.estimate < 0.0

    def test_estimate_needs_samples(self):
        batch = SampleBatch(phi=np.zeros(10), x=np.zeros(10), seed=0)
        with pytest.raises(ValueError):
            estimate_witness(batch, WitnessConfig(delta=0.3))

    def test_negative_marginal_aborts(self, unit_grid):
        R, P = unit_grid.mesh()
        # 归一化但边缘分布出现负值的场
        values = (2.0 * R ** 2 - 1.5) * np.exp(-R ** 2 - P ** 2) / math.pi
        values = values / (np.sum(values) * unit_grid.cell)
        bad = WignerField(values=values, grid=unit_grid, t=0.0, hbar=1.0, units="dimensionless")
        with pytest.raises(NumericalAbort):
            sample_homodyne(bad, 1000, 0, n_phi=8, n_x=256, n_s=256)


class TestQuadratureTransform:
    @pytest.fixture
    def initial(self, toy_params, toy_grid):
        scales = derive_scales(toy_params)
        return initial_gaussian(scales, toy_grid), scales

    def test_moments_in_oscillator_units(self, initial):
        transform = QuadratureTransform(*initial)
        # σ̃_r² = 0.1, σ̃_p² = 2.5
        assert_allclose(np.diag(transform.cov), [0.1, 2.5], rtol=1e-6)
        assert abs(transform.cov[0, 1]) < 1e-8
        assert transform.angles_required() == MIN_ANGLES

    @pytest.mark.parametrize("phi", [0.0, 0.3, math.pi / 4, 1.2, math.pi / 2, 2.5])
    def test_gaussian_marginal(self, initial, phi):
        m = QuadratureTransform(*initial).marginal(phi, n_x=512)
        var = 0.1 * math.cos(phi) ** 2 + 2.5 * math.sin(phi) ** 2
        expected = np.exp(-m.x ** 2 / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
        assert_allclose(m.mass(), 1.0, rtol=1e-12)
        assert np.max(np.abs(m.density - expected)) < 1e-6 * expected.max()

    @pytest.mark.parametrize("phi", [0.4, 1.9, 2.8])
    def test_matches_radon_marginal(self, toy_params, toy_grid, field_grid, phi):
        scales = derive_scales(toy_params)
        state = evolve_quantum(initial_gaussian(scales, toy_grid), spec_of(toy_params), 1.0)[-1]
        field = dimensionless_field(wigner_of(state, field_grid), scales)
        exact = QuadratureTransform(state, scales).marginal(phi, n_x=1024)
        projected = radon_marginal(field, phi, n_x=1024, n_s=1024)
        assert np.max(np.abs(projected.at(exact.x) - exact.density)) < 1e-2 * exact.density.max()

    def test_sampling(self, initial, monkeypatch):
        transform = QuadratureTransform(*initial)
        a = sample_homodyne_state(transform, 50_000, 3, chunk_size=8192)
        b = sample_homodyne_state(transform, 50_000, 3, chunk_size=8192)
        assert np.array_equal(a.x, b.x)
        monkeypatch.setattr(settings, "max_workers", 1)
        assert np.array_equal(a.x, sample_homodyne_state(transform, 50_000, 3, chunk_size=8192).x)
        # φ 均匀时 ⟨x²⟩ = (σ̃_r² + σ̃_p²)/2
        assert_allclose(np.mean(a.x ** 2), 1.3, rtol=0.03)

    def test_c_gamma_matches_field(self, initial, field_grid):
        state, scales = initial
        cfg = WitnessConfig(delta=0.1)
        field = dimensionless_field(wigner_of(state, field_grid), scales)
        from_state = measure_c_gamma(QuadratureTransform(state, scales), cfg, n_phi=64)
        assert_allclose(from_state, measure_c_gamma(field, cfg, n_phi=64), rtol=1e-2)


class TestSampleComplexity:
    def test_formula(self):
        cfg = WitnessConfig(delta=0.1)
        assert_allclose(sample_complexity(cfg, -1e-3, 0.05), (0.05 / 1e-3) / 1e-6)

    @pytest.mark.parametrize("value, c", [(0.0, 0.1), (1e-3, 0.1), (-1e-3, 0.0)])
    def test_invalid(self, value, c):
        with pytest.raises(ValueError):
            sample_complexity(WitnessConfig(delta=0.1), value, c)


class TestPerturbativeEstimate:
    def test_representative_tail(self, representative):
        est = perturbative_wigner(representative, 40.0)
        assert 0.04 < est.epsilon < 0.055
        assert est.u_tail < -math.sqrt(3.0)
        assert est.w_tail < 0.0
        assert 0.0 < est.delta_star < MAX_DELTA
        assert_allclose(est.delta_opt, 0.5 * est.delta_star)
        assert est.n_opt < 0.0
        assert est.n_opt > est.w_tail

    def test_representative_numbers(self, representative):
        est = perturbative_wigner(representative, 40.0)
        assert -0.63 < est.p0 < -0.21
        assert 0.02 < est.delta_star < 0.08
        assert -1e-3 < est.w_tail < -1e-5
        assert -1e-3 < est.n_opt < -1e-5
        # 取 C_Γ ~ 0.1 时所需样本量在 10¹¹ 量级
        required = sample_complexity(WitnessConfig(delta=est.delta_opt), est.n_opt, 0.1)
        assert 1e10 <= required <= 1e12

    def test_small_epsilon_has_no_negativity(self, representative):
        est = perturbative_wigner(representative, 0.1)
        assert est.w_tail > 0.0
        assert est.delta_star == 0.0

    def test_out_of_range(self, representative):
        with pytest.raises(ValueError):
            perturbative_wigner(representative, 500.0)


def test_optimize_center_finds_fock_minimum(unit_grid):
    field = fock1_field(unit_grid)
    cfg, value = optimize_center(field, 0.3, start=(0.2, -0.1))
    assert_allclose(cfg.center, (0.0, 0.0), atol=1e-2)
    assert value <= direct_witness(field, WitnessConfig(delta=0.3, center=(0.2, -0.1)))
    assert_allclose(value, smoothed_fock1(0.3), rtol=1e-4)


@pytest.mark.slow
def test_inflated_coupling_is_detected(representative):
    # G×8、t=64 s 时 ε≈0.6，负性在 10⁷ 个样本内可达 5σ
    params = representative.with_coupling(8.0)
    scales = derive_scales(params, 64.0)
    state_grid, field_grid = GridConfig(n_r=4096, n_p=2048, stride=4, spread=7.5).resolve(params, 64.0)
    state = evolve_quantum(initial_gaussian(scales, state_grid), spec_of(params), 64.0)[-1]
    field = dimensionless_field(wigner_of(state, field_grid), scales)
    cfg, direct = optimize_center(field, 0.04)
    assert direct < 0.0

    batch = sample_homodyne_state(QuadratureTransform(state, scales), 10_000_000, 2024)
    est = estimate_witness(batch, cfg)
    assert est.estimate < -5.0 * est.standard_error
    assert abs(est.estimate - direct) < 5.0 * est.standard_error
