"""Wigner 负性见证：高斯窗、模式函数、Radon 边缘分布、随机正交采样与样本量估计

本模块只在无量纲坐标下工作：r̃ = r/√(ħ/mω)，p̃ = p/√(mħω)，[r̃, p̃] = i。
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, NamedTuple, Optional, Sequence, Tuple, Union
import math

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import fft as sfft
from scipy import integrate, ndimage, optimize, signal, special
from scipy.interpolate import RectBivariateSpline

from .config import settings
from .errors import NumericalAbort
from .logger import logger
from .quantum import WignerField, moments, wigner_min
from .scales import DerivedScales, PhaseSpaceGrid, PhysicalParams, WavefunctionState, derive_scales
from ..utils.grid_utils import fixed_chunks

MAX_DELTA = 1.0 / math.sqrt(2.0)
# |z| 不小于此值时 1 − 2zD(z) 改用渐近级数
ASYMPTOTIC_Z = 10.0
ASYMPTOTIC_TERMS = 12
# (2k+1)!!
_SERIES_COEFFS = special.factorial2(2 * np.arange(ASYMPTOTIC_TERMS) + 1)
# 窗函数截断半径（以 Δ 计）
WINDOW_RADIUS = 8.0
# 边缘分布负值：低于此值中止，介于此值与 0 之间截断为 0
MARGINAL_FLOOR = -1e-9
# 边缘分布积分与场归一化允许的离散误差
MARGINAL_MASS_TOLERANCE = 1e-3
# 场支撑触及网格边缘的判据
EDGE_FRACTION = 1e-9
SAMPLE_CHUNK = 100_000
MIN_SAMPLES = 100
# 微扰估计的适用范围
MAX_EPSILON = 0.2
# 微扰极小搜索范围（以 σ_p 计）
TAIL_SEARCH = 10.0
# 纯态边缘分布：态支撑（以标准差计）与输出范围（以投影标准差计）
SUPPORT_SIGMAS = 8.0
TABLE_SPAN = 10.0
# 最窄方向的角宽度内至少放置的角度表数
ANGLES_PER_WIDTH = 8
MIN_ANGLES = 256


class WitnessConfig(BaseModel):
    """窗宽 Δ 与窗中心 (r̃₀, p̃₀)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float
    center: Tuple[float, float] = (0.0, 0.0)

    @field_validator("delta")
    @classmethod
    def _admissible(cls, value: float) -> float:
        # Δ ≥ 1/√2 时窗函数本身是合法量子态，见证失效
        if not (0.0 < value < MAX_DELTA):
            raise ValueError(f"窗宽必须满足 0 < Δ < 1/√2: {value}")
        return value

    @field_validator("center")
    @classmethod
    def _finite_center(cls, value):
        if not all(math.isfinite(v) for v in value):
            raise ValueError(f"窗中心必须是有限值: {value}")
        return value

    def quadrature_offset(self, phi):
        """x_φ(r̃₀, p̃₀)"""
        r0, p0 = self.center
        return r0 * np.cos(phi) + p0 * np.sin(phi)


@dataclass(frozen=True)
class QuadratureSample:
    phi: float
    x: float

    def __post_init__(self):
        if not (0.0 <= self.phi < math.pi):
            raise ValueError(f"正交角必须在 [0, π) 内: {self.phi}")


@dataclass(frozen=True)
class SampleBatch:
    """一批随机正交测量，按生成顺序存储"""
    phi: np.ndarray
    x: np.ndarray
    seed: int

    def __len__(self) -> int:
        return int(self.phi.shape[0])

    def __iter__(self) -> Iterator[QuadratureSample]:
        for phi, x in zip(self.phi, self.x):
            yield QuadratureSample(float(phi), float(x))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"phi": self.phi, "x": self.x})


class WitnessEstimate(NamedTuple):
    estimate: float
    standard_error: float


@dataclass(frozen=True)
class RadonMarginal:
    """正交分量 x_φ 的边缘分布 p(x|φ)"""
    phi: float
    x: np.ndarray
    density: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> float:
        return float(integrate.trapezoid(self.density, self.x))

    def at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.density, left=0.0, right=0.0)


@dataclass(frozen=True)
class PerturbativeEstimate:
    """一阶 Moyal 修正给出的量级估计（无量纲单位）"""
    epsilon: float
    sigma_r: float
    sigma_p: float
    u_tail: float
    p0: float
    w_tail: float
    delta_star: float
    delta_opt: float
    n_opt: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < MAX_DELTA):
        raise ValueError(f"窗宽必须满足 0 < Δ < 1/√2: {delta}")


def _require_dimensionless(field: WignerField) -> None:
    if field.units != "dimensionless":
        raise ValueError("见证计算需要无量纲场，请先调用 dimensionless_field")


def dimensionless_field(field: WignerField, scales: DerivedScales) -> WignerField:
    """SI 场换算到无量纲坐标，∬W̃ dr̃ dp̃ 保持不变"""
    if field.units == "dimensionless":
        return field
    jac = scales.xunit * scales.punit
    density = None
    if field.density is not None:
        base = field.density

        def density(r, p):
            return base(np.asarray(r) * scales.xunit, np.asarray(p) * scales.punit) * jac

    return WignerField(
        values=field.values * jac, grid=field.grid.dimensionless(scales), t=field.t,
        origin=field.origin, hbar=1.0, units="dimensionless", density=density,
    )


def vacuum_field(grid: PhaseSpaceGrid) -> WignerField:
    """真空态 W = e^{−r̃²−p̃²}/π，用于标定"""
    R, P = grid.mesh()
    values = np.exp(-R ** 2 - P ** 2) / math.pi
    return WignerField(values=values, grid=grid, t=0.0, origin="quantum", hbar=1.0, units="dimensionless")


def _dawson_kernel(z):
    """1 − 2z·D(z)；|z| ≥ ASYMPTOTIC_Z 时用 −w Σ (2k+1)!! wᵏ，w = 1/(2z²)"""
    z = np.asarray(z, dtype=float)
    flat = np.atleast_1d(z)
    out = np.empty_like(flat)
    far = np.abs(flat) >= ASYMPTOTIC_Z
    near = flat[~far]
    out[~far] = 1.0 - 2.0 * near * special.dawsn(near)
    if np.any(far):
        w = 0.5 / flat[far] ** 2
        series = np.zeros_like(w)
        for coeff in _SERIES_COEFFS[::-1]:
            series = series * w + coeff
        out[far] = -w * series
    return out.reshape(z.shape)


def pattern_profile(u):
    """Γ_Δ(y) = Δ⁻² f(y/Δ) 中的无量纲轮廓 f(u) = [1 − 2zD(z)]/(2π)，z = u/√2

    f 是 |k|e^{−k²/2}/2 的傅里叶逆变换，D 为 Dawson 函数。
    """
    return _dawson_kernel(np.asarray(u, dtype=float) / math.sqrt(2.0)) / (2.0 * math.pi)


def pattern_function(y, delta: float):
    """Γ_Δ(y) = Δ⁻² f(y/Δ)，满足 ∫dφ/π ∫dx p(x|φ) Γ_Δ(x − x_φ) = ∬G_Δ·W"""
    _check_delta(delta)
    return pattern_profile(np.asarray(y, dtype=float) / delta) / delta ** 2


@lru_cache(maxsize=1)
def pattern_profile_norm() -> float:
    """∫f(u)² du"""
    value, _ = integrate.quad(lambda u: float(pattern_profile(u)) ** 2, -np.inf, np.inf, limit=200)
    return float(value)


def _edge_check(field: WignerField) -> None:
    v = np.abs(field.values)
    total = float(v.sum())
    if total == 0:
        raise ValueError("场恒为零")
    edge = float(v[:2].sum() + v[-2:].sum() + v[2:-2, :2].sum() + v[2:-2, -2:].sum())
    if edge > EDGE_FRACTION * total:
        raise NumericalAbort(f"场支撑触及网格边缘（边缘占比 {edge / total:.3e}），旋转后会丢失质量")


def _projection_extent(grid: PhaseSpaceGrid, phi: float):
    corners_r = np.array([grid.r_min, grid.r_min, grid.r_max, grid.r_max])
    corners_p = np.array([grid.p_min, grid.p_max, grid.p_min, grid.p_max])
    c, s = math.cos(phi), math.sin(phi)
    x = corners_r * c + corners_p * s
    w = -corners_r * s + corners_p * c
    return (float(x.min()), float(x.max())), (float(w.min()), float(w.max()))


def _rotated_marginal(field: WignerField, phi: float, n_x: int, n_s: int) -> RadonMarginal:
    grid = field.grid
    (x_lo, x_hi), (s_lo, s_hi) = _projection_extent(grid, phi)
    x = np.linspace(x_lo, x_hi, n_x)
    s = np.linspace(s_lo, s_hi, n_s)
    X, S = np.meshgrid(x, s, indexing="ij")
    c, sn = math.cos(phi), math.sin(phi)
    r = X * c - S * sn
    p = X * sn + S * c
    i = (r - grid.r_min) / grid.dr
    j = (p - grid.p_min) / grid.dp
    values = ndimage.map_coordinates(field.values, [i, j], order=3, mode="constant", cval=0.0)
    density = integrate.trapezoid(values, s, axis=1)
    return RadonMarginal(phi=phi, x=x, density=density)


def radon_marginal(field: WignerField, phi: float, n_x: int = 1024, n_s: int = 1024) -> RadonMarginal:
    """p(x|φ) = ∫W(x cosφ − s sinφ, x sinφ + s cosφ) ds"""
    _require_dimensionless(field)
    _edge_check(field)
    marginal = _rotated_marginal(field, float(phi), n_x, n_s)
    norm = field.norm()
    mass = marginal.mass()
    if abs(mass - norm) > MARGINAL_MASS_TOLERANCE * abs(norm):
        raise NumericalAbort(f"φ={phi:.4f} 处边缘分布质量 {mass:.6f} 与场归一化 {norm:.6f} 不符，分辨率不足")
    return RadonMarginal(phi=marginal.phi, x=marginal.x, density=marginal.density * (norm / mass))


def _power_of_two_at_least(value: float) -> int:
    if value <= 1.0:
        return 1
    return 2 ** int(math.ceil(math.log2(value)))


class QuadratureTransform:
    """纯态正交分量 x_φ = r̃cosφ + p̃sinφ 的精确分布 p(x|φ) = |⟨x|e^{−iφ(r̃²+p̃²)/2}|ψ⟩|²

    振子传播子把 p(x|φ) 写成 |∫e^{ir²cotφ/2} e^{−ixr/sinφ} ψ(r) dr|²/(2π|sinφ|)。
    |cotφ| ≤ 1 时在位置表象求积，否则在动量表象中以 φ − π/2 求积；
    积分由线性调频 z 变换直接在输出网格上求值。
    波函数先补零、再做傅里叶插值，使二次相位与输出频率在网格上都不混叠。
    """

    def __init__(self, state: WavefunctionState, scales: DerivedScales, span: float = TABLE_SPAN):
        m = moments(state)
        xu, pu = scales.xunit, scales.punit
        self.mean = np.array([m.mean_r / xu, m.mean_p / pu])
        cross = m.cov_rp / (xu * pu)
        self.cov = np.array([[m.var_r / xu ** 2, cross], [cross, m.var_p / pu ** 2]])
        self.span = span
        low, high = np.linalg.eigvalsh(self.cov)
        self.s_min, self.s_max = math.sqrt(low), math.sqrt(high)

        grid = state.grid
        dr = grid.dr / xu
        n = grid.n_r
        r_reach = abs(self.mean[0]) + SUPPORT_SIGMAS * math.sqrt(self.cov[0, 0])
        p_reach = abs(self.mean[1]) + SUPPORT_SIGMAS * math.sqrt(self.cov[1, 1])
        x_reach = float(np.hypot(*self.mean)) + span * self.s_max
        need = r_reach + p_reach + math.sqrt(2.0) * x_reach
        pad = _power_of_two_at_least(need / (n * dr))
        refine = _power_of_two_at_least(need * dr / (2.0 * math.pi))

        psi = np.zeros(n * pad, dtype=complex)
        offset = (n * pad - n) // 2
        psi[offset:offset + n] = state.psi * math.sqrt(xu)
        r0 = grid.r_min / xu - offset * dr
        if refine > 1:
            psi = signal.resample(psi, psi.size * refine)
            dr /= refine
        self.r = r0 + dr * np.arange(psi.size)
        self.psi = psi

        p = 2.0 * math.pi * sfft.fftfreq(psi.size, d=dr)
        psi_hat = dr / math.sqrt(2.0 * math.pi) * np.exp(-1j * p * r0) * sfft.fft(psi)
        self.p = sfft.fftshift(p)
        self.psi_hat = sfft.fftshift(psi_hat)
        logger.debug(f"正交变换: {psi.size} 点 (补零 ×{pad}, 细化 ×{refine}), 压缩比 {self.s_max / self.s_min:.1f}")

    def angles_required(self) -> int:
        """最窄方向的角宽度约为 s_min/s_max，其中放置 ANGLES_PER_WIDTH 张表"""
        ratio = self.s_max / self.s_min
        return max(MIN_ANGLES, _power_of_two_at_least(ANGLES_PER_WIDTH * math.pi * ratio))

    def projected(self, phi: float) -> Tuple[float, float]:
        """x_φ 的均值与标准差"""
        c, s = math.cos(phi), math.sin(phi)
        center = self.mean[0] * c + self.mean[1] * s
        var = c * c * self.cov[0, 0] + 2.0 * c * s * self.cov[0, 1] + s * s * self.cov[1, 1]
        return float(center), math.sqrt(var)

    def marginal(self, phi: float, n_x: int = 1024) -> RadonMarginal:
        center, width = self.projected(phi)
        x = np.linspace(center - self.span * width, center + self.span * width, n_x)
        if abs(math.cos(phi)) <= abs(math.sin(phi)):
            coords, amplitude, angle = self.r, self.psi, phi
        else:
            coords, amplitude, angle = self.p, self.psi_hat, phi - 0.5 * math.pi
        sn = math.sin(angle)
        h = float(coords[1] - coords[0])
        g = amplitude * np.exp(0.5j * (math.cos(angle) / sn) * coords ** 2)
        omega0 = x[0] / sn
        d_omega = (x[1] - x[0]) / sn
        values = signal.czt(g, m=n_x, w=np.exp(-1j * d_omega * h), a=np.exp(1j * omega0 * h)) * h
        density = np.abs(values) ** 2 / (2.0 * math.pi * abs(sn))
        marginal = RadonMarginal(phi=float(phi), x=x, density=density)
        mass = marginal.mass()
        if abs(mass - 1.0) > MARGINAL_MASS_TOLERANCE:
            raise NumericalAbort(f"φ={phi:.4f} 处纯态边缘分布质量 {mass:.6f}，分辨率不足")
        return RadonMarginal(phi=marginal.phi, x=x, density=density / mass)


MarginalSource = Union[WignerField, QuadratureTransform]


def _marginal_builder(source: MarginalSource, n_x: int, n_s: int) -> Callable[[float], RadonMarginal]:
    if isinstance(source, QuadratureTransform):
        return lambda phi: source.marginal(phi, n_x)
    return lambda phi: radon_marginal(source, phi, n_x=n_x, n_s=n_s)


def _window(cfg: WitnessConfig, R, P):
    r0, p0 = cfg.center
    d2 = cfg.delta ** 2
    return np.exp(-((R - r0) ** 2 + (P - p0) ** 2) / (2.0 * d2)) / (2.0 * math.pi * d2)


def direct_witness(field: WignerField, cfg: WitnessConfig) -> float:
    """𝒩 = ∬G_Δ·W，网格间距大于 Δ/2 时先在窗口支撑上重采样"""
    _require_dimensionless(field)
    grid = field.grid
    r0, p0 = cfg.center
    reach = WINDOW_RADIUS * cfg.delta
    if (r0 - reach < grid.r_min or r0 + reach > grid.r_max
            or p0 - reach < grid.p_min or p0 + reach > grid.p_max):
        raise ValueError(f"窗口 {cfg.center}±{reach:.3g} 超出场网格")

    if grid.dr <= 0.5 * cfg.delta and grid.dp <= 0.5 * cfg.delta:
        R, P = grid.mesh()
        return float(np.sum(_window(cfg, R, P) * field.values) * grid.cell)

    h = cfg.delta / 8.0
    n = int(math.ceil(2.0 * reach / h)) + 1
    r = np.linspace(r0 - reach, r0 + reach, n)
    p = np.linspace(p0 - reach, p0 + reach, n)
    if field.density is not None:
        R, P = np.meshgrid(r, p, indexing="ij")
        local = field.density(R, P)
    else:
        spline = RectBivariateSpline(grid.r, grid.p, field.values, kx=3, ky=3)
        local = spline(r, p)
        # 插值不得制造原场没有的负值
        if float(field.values.min()) >= 0.0:
            local = np.clip(local, 0.0, None)
        R, P = np.meshgrid(r, p, indexing="ij")
    weights = _window(cfg, R, P) * local
    return float(integrate.trapezoid(integrate.trapezoid(weights, p, axis=1), r))


def _marginal_points(field: WignerField, delta: float, n_x: int) -> int:
    (x_lo, x_hi), _ = _projection_extent(field.grid, math.pi / 4)
    return max(n_x, int(math.ceil((x_hi - x_lo) / (delta / 8.0))) + 1)


def tomographic_witness(field: WignerField, cfg: WitnessConfig, n_phi: int = 64,
                        n_x: int = 1024, n_s: int = 1024) -> float:
    """角度积分形式 ∫dφ/π ∫dx p(x|φ) Γ_Δ(x − x_φ(r̃₀, p̃₀))"""
    points = _marginal_points(field, cfg.delta, n_x)
    phis = (np.arange(n_phi) + 0.5) * math.pi / n_phi

    def one(phi: float) -> float:
        m = radon_marginal(field, phi, n_x=points, n_s=n_s)
        y = m.x - cfg.quadrature_offset(phi)
        return float(integrate.trapezoid(m.density * pattern_function(y, cfg.delta), m.x))

    values = Parallel(n_jobs=settings.max_workers, prefer="threads")(delayed(one)(phi) for phi in phis)
    return float(np.mean(values))


def measure_c_gamma(source: MarginalSource, cfg: WitnessConfig, n_phi: Optional[int] = None,
                    n_x: int = 1024, n_s: int = 1024) -> float:
    """C_Γ = ⟨p(x_φ(r̃₀, p̃₀)|φ)⟩_φ · ∫f²

    source 为无量纲场（默认 64 个角）或 QuadratureTransform（默认按压缩比取角数）。
    """
    if n_phi is None:
        n_phi = source.angles_required() if isinstance(source, QuadratureTransform) else 64
    build = _marginal_builder(source, n_x, n_s)
    phis = (np.arange(n_phi) + 0.5) * math.pi / n_phi

    def one(phi: float) -> float:
        return float(build(phi).at(cfg.quadrature_offset(phi)))

    values = Parallel(n_jobs=settings.max_workers, prefer="threads")(delayed(one)(phi) for phi in phis)
    c_gamma = float(np.mean(values)) * pattern_profile_norm()
    logger.debug(f"C_Γ = {c_gamma:.4g} (Δ={cfg.delta}, {n_phi} 个角)")
    return c_gamma


class _QuadratureTables:
    """等角度边缘分布表；格内密度线性，反函数按格内二次 CDF 精确求解"""

    def __init__(self, marginals: Sequence[RadonMarginal]):
        n_x = marginals[0].x.size
        self.x0 = np.array([m.x[0] for m in marginals])
        self.dx = np.array([m.dx for m in marginals])
        density = np.empty((len(marginals), n_x))
        for k, m in enumerate(marginals):
            row = m.density
            low = float(row.min())
            if low < MARGINAL_FLOOR:
                raise NumericalAbort(f"φ={m.phi:.4f} 处边缘分布为负: {low:.3e}")
            if low < 0.0:
                logger.warning(f"φ={m.phi:.4f} 处边缘分布有微小负值 {low:.3e}，已截断为 0")
                row = np.clip(row, 0.0, None)
            density[k] = row
        cdf = np.concatenate(
            [np.zeros((len(marginals), 1)), np.cumsum(0.5 * (density[:, 1:] + density[:, :-1]), axis=1)], axis=1,
        )
        cdf /= cdf[:, -1:]
        self.density = density
        self.n_x = n_x
        # 第 k 行平移 2k 后整体单调，一次 searchsorted 即可定位各行的格
        self.flat = (cdf + 2.0 * np.arange(len(marginals))[:, None]).ravel()

    def __len__(self) -> int:
        return int(self.x0.size)

    def draw(self, k: np.ndarray, u: np.ndarray) -> np.ndarray:
        base = k * self.n_x
        pos = np.searchsorted(self.flat, u + 2.0 * k, side="right") - 1
        j = np.clip(pos - base, 0, self.n_x - 2)
        c0 = self.flat[base + j] - 2.0 * k
        c1 = self.flat[base + j + 1] - 2.0 * k
        width = c1 - c0
        v = np.clip(np.where(width > 0, (u - c0) / np.where(width > 0, width, 1.0), 0.5), 0.0, 1.0)
        a = self.density[k, j]
        b = self.density[k, j + 1]
        # 密度 a→b 线性时格内 CDF 为二次式，取数值稳定的根
        root = a + np.sqrt((1.0 - v) * a * a + v * b * b)
        t = np.where(root > 0, v * (a + b) / np.where(root > 0, root, 1.0), v)
        return self.x0[k] + (j + t) * self.dx[k]


def _draw_chunk(tables: _QuadratureTables, child: np.random.SeedSequence, count: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(child))
    n_phi = len(tables)
    phi = math.pi * rng.random(count)
    u_mix = rng.random(count)
    u_x = rng.random(count)

    # 相邻两张角度表按线性权重混合
    pos = phi / (math.pi / n_phi)
    k = np.minimum(np.floor(pos).astype(int), n_phi - 1)
    k = k + (u_mix < pos - k)
    # p(x|π) = p(−x|0)
    mirrored = k == n_phi
    x = tables.draw(np.where(mirrored, 0, k), u_x)
    return phi, np.where(mirrored, -x, x)


def _sample_tables(tables: _QuadratureTables, count: int, seed: int, chunk_size: int) -> SampleBatch:
    chunks = fixed_chunks(count, chunk_size)
    children = np.random.SeedSequence(seed).spawn(len(chunks))
    parts = Parallel(n_jobs=settings.max_workers, prefer="threads")(
        delayed(_draw_chunk)(tables, child, length) for child, (_, length) in zip(children, chunks)
    )
    phi = np.concatenate([part[0] for part in parts])
    x = np.concatenate([part[1] for part in parts])
    logger.info(f"正交采样完成: {count} 个样本, {len(tables)} 个角, seed={seed}")
    return SampleBatch(phi=phi, x=x, seed=seed)


def _build_tables(build: Callable[[float], RadonMarginal], n_phi: int) -> _QuadratureTables:
    phis = np.arange(n_phi) * math.pi / n_phi
    marginals = Parallel(n_jobs=settings.max_workers, prefer="threads")(delayed(build)(phi) for phi in phis)
    return _QuadratureTables(marginals)


def sample_homodyne(field: WignerField, count: int, seed: int, n_phi: int = 256,
                    n_x: int = 1024, n_s: int = 1024, chunk_size: int = SAMPLE_CHUNK) -> SampleBatch:
    """均匀随机 φ ∈ [0, π) 与 x ~ p(x|φ) 的采样；同一 seed 给出同一序列，与线程数无关"""
    if count < 1:
        raise ValueError(f"样本数必须为正: {count}")
    tables = _build_tables(_marginal_builder(field, n_x, n_s), n_phi)
    return _sample_tables(tables, count, seed, chunk_size)


def sample_homodyne_state(transform: QuadratureTransform, count: int, seed: int, n_phi: Optional[int] = None,
                          n_x: int = 1024, chunk_size: int = SAMPLE_CHUNK) -> SampleBatch:
    """纯态的随机正交采样，边缘分布取自 QuadratureTransform

    n_phi 省略时按态的压缩比选取，保证最窄方向上的角度分辨率。
    """
    if count < 1:
        raise ValueError(f"样本数必须为正: {count}")
    if n_phi is None:
        n_phi = transform.angles_required()
    tables = _build_tables(_marginal_builder(transform, n_x, 0), n_phi)
    return _sample_tables(tables, count, seed, chunk_size)


def pattern_values(samples: SampleBatch, cfg: WitnessConfig) -> np.ndarray:
    """逐样本的 Γ_Δ(x − x_φ(r̃₀, p̃₀))"""
    return pattern_function(samples.x - cfg.quadrature_offset(samples.phi), cfg.delta)


def estimate_witness(samples: SampleBatch, cfg: WitnessConfig) -> WitnessEstimate:
    """样本均值与标准误"""
    if len(samples) < MIN_SAMPLES:
        raise ValueError(f"至少需要 {MIN_SAMPLES} 个样本: {len(samples)}")
    values = pattern_values(samples, cfg)
    return WitnessEstimate(
        estimate=float(np.mean(values)),
        standard_error=float(np.std(values, ddof=1) / math.sqrt(values.size)),
    )


def sample_complexity(cfg: WitnessConfig, witness_value: float, c_gamma: float) -> float:
    """M = (C_Γ/Δ³)/𝒩²"""
    delta = cfg.delta
    if witness_value >= 0:
        raise ValueError(f"见证值必须为负: {witness_value}")
    if c_gamma <= 0:
        raise ValueError(f"C_Γ 必须为正: {c_gamma}")
    return (c_gamma / delta ** 3) / witness_value ** 2


def _tail_polynomial(u, eps: float):
    return 1.0 + eps * (u ** 3 - 3.0 * u)


def _windowed_value(p0: float, delta: float, eps: float, sigma_r: float, sigma_p: float) -> float:
    """𝒩(0, p̃₀; Δ)：有效宽度 σ_eff² = σ_p² + Δ²"""
    s_p = math.sqrt(sigma_p ** 2 + delta ** 2)
    s_r = math.sqrt(sigma_r ** 2 + delta ** 2)
    eps_eff = eps * (sigma_p / s_p) ** 3
    u = p0 / s_p
    gauss = math.exp(-0.5 * u ** 2) / (2.0 * math.pi * s_r * s_p)
    return _tail_polynomial(u, eps_eff) * gauss


def _optimized_windowed(delta: float, eps: float, sigma_r: float, sigma_p: float) -> Tuple[float, float]:
    s_p = math.sqrt(sigma_p ** 2 + delta ** 2)
    res = optimize.minimize_scalar(
        lambda p0: _windowed_value(p0, delta, eps, sigma_r, sigma_p),
        bounds=(-TAIL_SEARCH * s_p, 0.0), method="bounded", options={"xatol": 1e-10 * s_p},
    )
    return float(res.x), float(res.fun)


def perturbative_wigner(params: PhysicalParams, t: float) -> PerturbativeEstimate:
    """W_t(0,p)/W₀(0,p) ≈ 1 + ε(u³ − 3u) 的尾部极小、窗口见证与临界窗宽 Δ*

    Δ* 取在未加窗尾部位置 p̃₀ 处窗口见证变号的窗宽。
    """
    scales = derive_scales(params, t)
    eps = scales.epsilon
    if eps >= MAX_EPSILON:
        raise ValueError(f"ε={eps:.3f} 超出微扰适用范围 (< {MAX_EPSILON})")
    sigma_r = scales.sigma_r / scales.xunit
    sigma_p = scales.sigma_p / scales.punit

    res = optimize.minimize_scalar(
        lambda u: math.exp(-0.5 * u ** 2) * _tail_polynomial(u, eps),
        bounds=(-TAIL_SEARCH, 0.0), method="bounded", options={"xatol": 1e-10},
    )
    u_tail = float(res.x)
    w_tail = float(res.fun) / (2.0 * math.pi * sigma_r * sigma_p)
    p0 = u_tail * sigma_p

    def at_tail(delta: float) -> float:
        return _windowed_value(p0, delta, eps, sigma_r, sigma_p)

    tiny = 1e-9
    upper = MAX_DELTA * (1.0 - 1e-9)
    if w_tail >= 0:
        delta_star = 0.0
    elif at_tail(upper) < 0:
        delta_star = upper
    else:
        delta_star = float(optimize.bisect(at_tail, tiny, upper, xtol=1e-12))

    delta_opt = 0.5 * delta_star if delta_star > 0 else tiny
    _, n_opt = _optimized_windowed(delta_opt, eps, sigma_r, sigma_p)
    estimate = PerturbativeEstimate(
        epsilon=eps, sigma_r=sigma_r, sigma_p=sigma_p, u_tail=u_tail, p0=p0,
        w_tail=w_tail, delta_star=delta_star, delta_opt=delta_opt, n_opt=n_opt,
    )
    logger.info(f"微扰估计: ε={eps:.4f}, p̃₀={p0:.4f}, W_tail={w_tail:.3e}, Δ*={delta_star:.4f}")
    return estimate


def optimize_center(field: WignerField, delta: float, start: Optional[Tuple[float, float]] = None) -> Tuple[WitnessConfig, float]:
    """从 Wigner 极小处出发，搜索使 direct_witness 最小的窗中心"""
    _require_dimensionless(field)
    if start is None:
        found = wigner_min(field)
        start = (found.r_loc, found.p_loc)

    def objective(center):
        try:
            return direct_witness(field, WitnessConfig(delta=delta, center=(float(center[0]), float(center[1]))))
        except ValueError:
            return math.inf

    scale = max(delta, 0.5 * min(field.grid.dr, field.grid.dp))
    simplex = np.array([start, (start[0] + scale, start[1]), (start[0], start[1] + scale)])
    res = optimize.minimize(objective, np.asarray(start), method="Nelder-Mead",
                            options={"initial_simplex": simplex, "xatol": 1e-3 * delta, "fatol": 1e-12})
    cfg = WitnessConfig(delta=delta, center=(float(res.x[0]), float(res.x[1])))
    value = float(res.fun)
    logger.info(f"窗中心优化: ({cfg.center[0]:.4f}, {cfg.center[1]:.4f}), 𝒩={value:.4e}")
    return cfg, value
