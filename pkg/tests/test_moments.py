import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from src.core.errors import NumericalAbort
from src.core.moments import (
    CORRELATORS, EnsembleConfig, c_witness, ehrenfest_rate, ensemble_2d, swap_labels, verlet_2d,
)
from src.core.quantum import MomentSet, evolve_quantum, moments
from src.core.scales import PhysicalParams, auto_grid, derive_scales, initial_gaussian

from .conftest import spec_of, toy


@pytest.fixture
def planar():
    """ω = 1 的平面参数"""
    return PhysicalParams(m=1.0, L=1.0, sigma=0.005, G=0.25, hbar=1e-6)


def quantum_trajectory(params, times):
    grid = auto_grid(params, times[-1], n_r=512, n_p=128)
    state0 = initial_gaussian(derive_scales(params), grid)
    return [moments(s) for s in evolve_quantum(state0, spec_of(params), times[-1], checkpoints=times)]


def test_c_witness_formula(toy_params):
    m = MomentSet(mean_r=0.3, mean_p=-0.2, var_r=0.5, var_p=0.5, cov_rp=0.0, mu3_p=0.0)
    p = toy_params
    expected = 0.04 / p.m - 0.25 * p.m * p.omega ** 2 * (0.3 - 0.5 * p.L) ** 2
    assert_allclose(c_witness([m], p), [expected])
    assert_allclose(ehrenfest_rate(m, p), -1.5 * p.omega ** 2 / p.L * (0.5 + 0.09) * -0.2)
    assert ehrenfest_rate(m, toy(theta=0.0)) == 0.0


def test_c_is_conserved_without_cubic_term():
    params = toy(theta=0.0)
    c = c_witness(quantum_trajectory(params, [0.0, 0.5, 1.0]), params)
    assert np.ptp(c) < 1e-6 * abs(c[0])


def test_c_follows_ehrenfest_rate(toy_params):
    times = list(np.linspace(0.0, 2.0, 21))
    trajectory = quantum_trajectory(toy_params, times)
    c = c_witness(trajectory, toy_params)
    rate = np.array([ehrenfest_rate(m, toy_params) for m in trajectory])
    numeric = np.gradient(c, np.array(times), edge_order=2)
    assert np.all(rate[1:] > 0.0)
    assert_allclose(numeric[2:-2], rate[2:-2], rtol=1e-2, atol=1e-2 * np.max(np.abs(rate)))


class TestEnsembleConfig:
    base = dict(widths=(0.005, 0.1, 0.005, 0.1), t_final=0.3005)

    @pytest.mark.parametrize("override", [
        {"n_traj": 999},
        {"order": 4},
        {"widths": (0.005, 0.0, 0.005, 0.1)},
        {"t_final": 0.0},
        {"dt": -1.0},
        {"bootstrap": 5},
        {"unknown": 1},
    ])
    def test_rejects(self, override):
        with pytest.raises(ValidationError):
            EnsembleConfig(**{**self.base, **override})

    def test_steps(self, planar):
        assert EnsembleConfig(**self.base).n_steps(planar) == 301
        assert EnsembleConfig(**{**self.base, "t_final": 0.05}).n_steps(planar) == 200
        assert EnsembleConfig(**{**self.base, "dt": 0.1}).n_steps(planar) == 4

    def test_swap_labels_is_involution(self):
        cfg = EnsembleConfig(t_final=0.3, widths=(0.001, 0.002, 0.003, 0.004), momenta=(1.0, 2.0, 3.0, 4.0))
        swapped = swap_labels(cfg)
        assert swapped.widths == (0.003, 0.004, 0.001, 0.002)
        assert swapped.momenta == (-3.0, 4.0, -1.0, 2.0)
        assert swap_labels(swapped) == cfg


def test_verlet_detects_collision(planar):
    r1 = np.zeros((1, 2))
    r2 = np.zeros((1, 2))
    v1 = np.array([[5.0, 0.0]])
    v2 = np.array([[-5.0, 0.0]])
    with pytest.raises(NumericalAbort):
        verlet_2d(r1, r2, v1, v2, planar, 3, 1.0, 100)


def test_wide_ensemble_rejected(planar):
    cfg = EnsembleConfig(widths=(0.5, 0.1, 0.005, 0.1), t_final=0.3, n_traj=1000, bootstrap=10)
    with pytest.raises(ValueError):
        ensemble_2d(cfg, planar)


def test_quadratic_ensemble_has_no_connected_correlation(planar):
    cfg = EnsembleConfig(n_traj=2000, order=2, widths=(0.005, 0.1, 0.005, 0.1), t_final=0.316227766,
                         bootstrap=20, seed=4)
    report = ensemble_2d(cfg, planar)
    assert report.n_traj == 2000
    assert report.energy_drift < 1e-6
    for name in CORRELATORS:
        assert report.errors[name] > 0.0
        assert report.significance(name) < 5.0
    again = ensemble_2d(cfg, planar)
    assert again.values == report.values
    text = report.to_text()
    assert "order = 2" in text
    assert "seed = 4" in text


@pytest.mark.slow
def test_cubic_ensemble_resolves_cross_correlation(planar):
    cfg = EnsembleConfig(n_traj=100_000, order=3, widths=(0.005, 0.1, 0.005, 0.1), t_final=0.316227766,
                         bootstrap=50, seed=11)
    report = ensemble_2d(cfg, planar)
    assert report.significance("x1_y2sq") > 5.0
    assert report.significance("x2_y1sq") > 5.0

    # 交换标号并镜像 x：⟨x₁'y₂'²⟩ = −⟨x₂y₁²⟩
    mirrored = ensemble_2d(swap_labels(cfg), planar)
    diff = mirrored.values["x1_y2sq"] + report.values["x2_y1sq"]
    err = np.hypot(mirrored.errors["x1_y2sq"], report.errors["x2_y1sq"])
    assert abs(diff) < 4.0 * err
