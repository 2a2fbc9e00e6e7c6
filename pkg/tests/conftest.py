import math

import numpy as np
import pytest

from src.core.config import settings
from src.core.potential import PotentialSpec
from src.core.quantum import WignerField
from src.core.scales import PhaseSpaceGrid, PhysicalParams, auto_grid, derive_scales

# 玩具单位：ħ=1, m=2, σ=0.5, L=50, G=156.25 → ω=0.1, μ=1
TOY = dict(m=2.0, L=50.0, sigma=0.5, G=156.25, hbar=1.0)


@pytest.fixture(autouse=True)
def _quiet_settings(monkeypatch):
    monkeypatch.setattr(settings, "progress", False)
    monkeypatch.setattr(settings, "max_workers", 2)


@pytest.fixture
def toy_params():
    return PhysicalParams(**TOY)


def toy(**overrides) -> PhysicalParams:
    return PhysicalParams(**{**TOY, **overrides})


@pytest.fixture
def representative():
    return PhysicalParams.representative()


@pytest.fixture
def toy_grid(toy_params):
    return auto_grid(toy_params, 1.0, n_r=512, n_p=128)


@pytest.fixture
def field_grid(toy_grid):
    """场网格：位置取波函数网格的每 4 个点"""
    return PhaseSpaceGrid(r_min=toy_grid.r_min, r_max=toy_grid.r_max,
                          p_min=toy_grid.p_min, p_max=toy_grid.p_max, n_r=128, n_p=128)


@pytest.fixture
def unit_grid():
    """无量纲坐标下的 [-8, 8)² 网格"""
    return PhaseSpaceGrid(r_min=-8.0, r_max=8.0, p_min=-8.0, p_max=8.0, n_r=256, n_p=256)


def fock1_field(grid: PhaseSpaceGrid) -> WignerField:
    """|1⟩ 的无量纲 Wigner 函数 (2ρ² − 1)e^{−ρ²}/π"""
    R, P = grid.mesh()
    rho2 = R ** 2 + P ** 2
    values = (2.0 * rho2 - 1.0) * np.exp(-rho2) / math.pi
    return WignerField(values=values, grid=grid, t=0.0, origin="quantum", hbar=1.0, units="dimensionless")


def spec_of(params: PhysicalParams, kind: str = "truncated") -> PotentialSpec:
    return PotentialSpec.from_params(params, kind)
