"""物理参数、导出尺度、无量纲单位、相空间网格与初始态"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Union
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import constants, special

from .logger import logger

# sigma/L 超过该值时截断展开失去意义
MAX_SIGMA_OVER_L = 0.2
# 初始态被网格截掉的概率上限
CLIP_TOLERANCE = 1e-12


class PhysicalParams(BaseModel):
    """两球体系的物理参数（SI单位）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    m: float  # 单个球的质量 (kg)
    L: float  # 初始球心距 (m)
    sigma: float  # 单粒子高斯宽度 (m)
    pbar: float = 0.0  # 初始相对动量均值 (kg·m/s)
    G: float = constants.G
    hbar: float = constants.hbar
    N: int = 3  # 势能截断阶数
    theta: float = 1.0  # 三次项开关

    @field_validator("m", "L", "sigma", "G", "hbar")
    @classmethod
    def _positive(cls, value: float, info) -> float:
        if not math.isfinite(value) or value <= 0:
            raise ValueError(f"{info.field_name} 必须为有限正数: {value}")
        return value

    @field_validator("pbar", "theta")
    @classmethod
    def _finite(cls, value: float, info) -> float:
        if not math.isfinite(value):
            raise ValueError(f"{info.field_name} 必须为有限数: {value}")
        return value

    @field_validator("N")
    @classmethod
    def _order(cls, value: int) -> int:
        if value < 0:
            raise ValueError(f"截断阶数不能为负: {value}")
        return value

    @model_validator(mode="after")
    def _narrow_packet(self):
        if self.sigma / self.L > MAX_SIGMA_OVER_L:
            raise ValueError(f"sigma/L = {self.sigma / self.L:.3g} 超过 {MAX_SIGMA_OVER_L}，截断展开不成立")
        return self

    @property
    def omega(self) -> float:
        """引力耦合频率 ω = √(4Gm/L³)"""
        return math.sqrt(4.0 * self.G * self.m / self.L ** 3)

    @property
    def mu(self) -> float:
        """约化质量 m/2"""
        return 0.5 * self.m

    @classmethod
    def representative(cls, **overrides) -> "PhysicalParams":
        """代表性实验参数：m=0.5 pg, L=470 nm, σ=40 nm"""
        values = dict(m=0.5e-15, L=470e-9, sigma=40e-9, pbar=0.0, N=3, theta=1.0)
        values.update(overrides)
        return cls(**values)

    def with_coupling(self, factor: float) -> "PhysicalParams":
        """按 factor 放大 G（等价于 ω² 放大 factor 倍）"""
        if not math.isfinite(factor) or factor <= 0:
            raise ValueError(f"耦合放大因子必须为正: {factor}")
        return self.model_copy(update={"G": self.G * factor})


@dataclass(frozen=True)
class DerivedScales:
    """由 PhysicalParams 导出的尺度"""
    params: PhysicalParams
    omega: float
    mu: float
    sigma_r: float
    sigma_R: float
    sigma_p: float
    xunit: float
    punit: float
    epsilon: float
    t_ref: float

    @property
    def hbar(self) -> float:
        return self.params.hbar

    def to_dict(self) -> Dict[str, float]:
        """转换为字典"""
        return {
            "omega": self.omega,
            "mu": self.mu,
            "sigma_r": self.sigma_r,
            "sigma_R": self.sigma_R,
            "sigma_p": self.sigma_p,
            "xunit": self.xunit,
            "punit": self.punit,
            "epsilon": self.epsilon,
            "t_ref": self.t_ref,
        }


def derive_scales(params: PhysicalParams, t_ref: float = 0.0) -> DerivedScales:
    """计算导出尺度；epsilon 在参考时间 t_ref 处取值"""
    if not math.isfinite(t_ref) or t_ref < 0:
        raise ValueError(f"参考时间必须为非负有限数: {t_ref}")

    omega = params.omega
    sigma_r = params.sigma * math.sqrt(2.0)
    sigma_p = params.hbar / (2.0 * sigma_r)
    epsilon = params.hbar ** 2 * params.m * omega ** 2 * t_ref / (16.0 * params.L * sigma_p ** 3)

    scales = DerivedScales(
        params=params,
        omega=omega,
        mu=params.mu,
        sigma_r=sigma_r,
        sigma_R=params.sigma / math.sqrt(2.0),
        sigma_p=sigma_p,
        xunit=math.sqrt(params.hbar / (params.m * omega)),
        punit=math.sqrt(params.m * params.hbar * omega),
        epsilon=epsilon,
        t_ref=t_ref,
    )
    for name, value in scales.to_dict().items():
        if not math.isfinite(value):
            raise ValueError(f"导出尺度 {name} 非有限: {value}")
    return scales


def epsilon_scaling(params: PhysicalParams, t: float, factor: float = 1.1) -> Dict[str, float]:
    """ε 对 m、σ_r、t、L、G 的对数斜率（有限差分）"""
    base = derive_scales(params, t).epsilon
    log_f = math.log(factor)
    variants = {
        "m": (params.model_copy(update={"m": params.m * factor}), t),
        "sigma_r": (params.model_copy(update={"sigma": params.sigma * factor}), t),
        "t": (params, t * factor),
        "L": (params.model_copy(update={"L": params.L * factor}), t),
        "G": (params.with_coupling(factor), t),
    }
    return {
        name: math.log(derive_scales(p, tt).epsilon / base) / log_f
        for name, (p, tt) in variants.items()
    }


class QuantityKind(str, Enum):
    """可无量纲化的物理量"""
    POSITION = "position"
    MOMENTUM = "momentum"
    TIME = "time"


def _unit(kind: Union[str, QuantityKind], scales: DerivedScales) -> float:
    try:
        kind = QuantityKind(kind)
    except ValueError:
        raise ValueError(f"未知的物理量类型: {kind}") from None
    if kind is QuantityKind.POSITION:
        return scales.xunit
    if kind is QuantityKind.MOMENTUM:
        return scales.punit
    return 1.0 / scales.omega


def to_dimensionless(value, kind: Union[str, QuantityKind], scales: DerivedScales):
    """SI → 无量纲（位置/√(ħ/mω)，动量/√(mħω)，时间·ω）"""
    return value / _unit(kind, scales)


def from_dimensionless(value, kind: Union[str, QuantityKind], scales: DerivedScales):
    """无量纲 → SI"""
    return value * _unit(kind, scales)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class PhaseSpaceGrid(BaseModel):
    """相空间网格；两轴均为左闭右开的均匀采样"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    r_min: float
    r_max: float
    p_min: float
    p_max: float
    n_r: int = 512
    n_p: int = 512

    @field_validator("n_r", "n_p")
    @classmethod
    def _points(cls, value: int, info) -> int:
        if value < 64 or not _is_power_of_two(value):
            raise ValueError(f"{info.field_name} 必须是不小于64的2的幂: {value}")
        return value

    @model_validator(mode="after")
    def _bounds(self):
        for lo, hi, axis in ((self.r_min, self.r_max, "r"), (self.p_min, self.p_max, "p")):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"{axis} 轴范围无效: [{lo}, {hi}]")
        return self

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / self.n_r

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def r(self) -> np.ndarray:
        return self.r_min + self.dr * np.arange(self.n_r)

    @property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p)

    @property
    def cell(self) -> float:
        return self.dr * self.dp

    def mesh(self):
        """返回 (R, P) 网格，形状 n_r×n_p"""
        return np.meshgrid(self.r, self.p, indexing="ij")

    def with_points(self, n_r: Optional[int] = None, n_p: Optional[int] = None) -> "PhaseSpaceGrid":
        return PhaseSpaceGrid(
            r_min=self.r_min, r_max=self.r_max, p_min=self.p_min, p_max=self.p_max,
            n_r=n_r or self.n_r, n_p=n_p or self.n_p,
        )

    def dimensionless(self, scales: DerivedScales) -> "PhaseSpaceGrid":
        """换算为无量纲坐标下的同一网格"""
        return PhaseSpaceGrid(
            r_min=self.r_min / scales.xunit, r_max=self.r_max / scales.xunit,
            p_min=self.p_min / scales.punit, p_max=self.p_max / scales.punit,
            n_r=self.n_r, n_p=self.n_p,
        )

    def descriptor(self) -> tuple:
        return (self.r_min, self.r_max, self.p_min, self.p_max)


def quadratic_envelope(params: PhysicalParams, times: Sequence[float]):
    """二次势下相对坐标的均值和标准差轨迹（线性项保留）

    返回 (mean_r, std_r, mean_p, std_p)，每个都是与 times 等长的数组。
    """
    t = np.asarray(times, dtype=float)
    omega = params.omega
    m = params.m
    sigma_r = params.sigma * math.sqrt(2.0)
    sigma_p = params.hbar / (2.0 * sigma_r)

    ch = np.cosh(omega * t)
    sh = np.sinh(omega * t)
    # r̈ = ω²(r − L/2)
    mean_r = 0.5 * params.L * (1.0 - ch) + 2.0 * params.pbar / (m * omega) * sh
    mean_p = -0.25 * m * omega * params.L * sh + params.pbar * ch

    s_rp = 2.0 / (m * omega) * sh
    s_pr = 0.5 * m * omega * sh
    var_r = ch ** 2 * sigma_r ** 2 + s_rp ** 2 * sigma_p ** 2
    var_p = s_pr ** 2 * sigma_r ** 2 + ch ** 2 * sigma_p ** 2
    return mean_r, np.sqrt(var_r), mean_p, np.sqrt(var_p)


def auto_grid(params: PhysicalParams, t_final: float, n_r: int = 2048, n_p: int = 512,
              spread: float = 8.0, p_spread: Optional[float] = None) -> PhaseSpaceGrid:
    """按 [0, t_final] 上包络自动确定网格范围：位置取 ±spread 个标准差，动量取 ±p_spread 个

    p_spread 省略时与 spread 相同。动量方向不受碰撞约束，可以放得更宽，
    以容纳三次项产生的非高斯动量尾部。
    """
    if p_spread is None:
        p_spread = spread
    if t_final < 0:
        raise ValueError(f"终止时间不能为负: {t_final}")
    times = np.linspace(0.0, t_final, 65)
    mean_r, std_r, mean_p, std_p = quadratic_envelope(params, times)

    r_min = float(np.min(mean_r - spread * std_r))
    r_max = float(np.max(mean_r + spread * std_r))
    p_min = float(np.min(mean_p - p_spread * std_p))
    p_max = float(np.max(mean_p + p_spread * std_p))
    if r_min <= -params.L:
        raise ValueError(f"网格进入碰撞区域: r_min={r_min:.3e}, L={params.L:.3e}")

    grid = PhaseSpaceGrid(r_min=r_min, r_max=r_max, p_min=p_min, p_max=p_max, n_r=n_r, n_p=n_p)
    logger.debug(f"自动网格: r∈[{r_min:.3e}, {r_max:.3e}], p∈[{p_min:.3e}, {p_max:.3e}], n_r={n_r}, n_p={n_p}")
    return grid


@dataclass(frozen=True)
class WavefunctionState:
    """相对坐标纯态在位置网格上的振幅"""
    psi: np.ndarray
    grid: PhaseSpaceGrid
    t: float = 0.0
    hbar: float = constants.hbar

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex)
        if psi.shape != (self.grid.n_r,):
            raise ValueError(f"波函数长度 {psi.shape} 与网格点数 {self.grid.n_r} 不符")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density) * self.grid.dr)


def initial_gaussian(scales: DerivedScales, grid: PhaseSpaceGrid) -> WavefunctionState:
    """初始相对坐标高斯态：中心 r=0，宽度 σ√2，动量均值 pbar"""
    params = scales.params
    sigma_r = scales.sigma_r

    # 网格外的概率质量
    clipped = 0.5 * special.erfc(grid.r_max / (math.sqrt(2.0) * sigma_r)) \
        + 0.5 * special.erfc(-grid.r_min / (math.sqrt(2.0) * sigma_r))
    if clipped > CLIP_TOLERANCE:
        raise ValueError(f"网格过窄，初始态被截断的概率为 {clipped:.3e}")

    # Wigner 变换要求动量带宽在 ±πħ/(2Δr) 以内
    band = math.pi * params.hbar / (2.0 * grid.dr)
    if abs(params.pbar) + 8.0 * scales.sigma_p > band:
        raise ValueError(f"网格间距过大，无法分辨动量 (|pbar|+8σ_p={abs(params.pbar) + 8 * scales.sigma_p:.3e}, 带宽={band:.3e})")

    r = grid.r
    psi = np.exp(-r ** 2 / (4.0 * sigma_r ** 2) + 1j * params.pbar * r / params.hbar)
    psi = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dr)
    return WavefunctionState(psi=psi, grid=grid, t=0.0, hbar=params.hbar)
