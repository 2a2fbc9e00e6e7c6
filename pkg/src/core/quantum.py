"""相对坐标纯态的量子演化、Wigner 变换、矩与极小值追踪"""
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Union
import math

import numpy as np
from joblib import Parallel, delayed
from scipy import fft as sfft
from tqdm import tqdm

from .config import settings
from .errors import NumericalAbort
from .logger import logger
from .potential import PotentialSpec
from .scales import PhaseSpaceGrid, WavefunctionState
from ..utils.grid_utils import biquadratic_minimum, row_chunks

# 单步最大相位增量 (rad)
MAX_PHASE_STEP = 0.1
# 自动步长采用的相位增量
TARGET_PHASE_STEP = 0.05
# 支撑集判定阈值（相对最大值）
SUPPORT_THRESHOLD = 1e-12
# 边缘溢出判定
EDGE_POINTS = 5
EDGE_MASS = 1e-9
NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class WignerField:
    """相空间实值场：量子 Wigner 函数或经典分布 f"""
    values: np.ndarray
    grid: PhaseSpaceGrid
    t: float
    origin: str = "quantum"  # quantum | classical
    hbar: float = 1.0
    units: str = "si"  # si | dimensionless
    density: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_r, self.grid.n_p):
            raise ValueError(f"场的形状 {values.shape} 与网格 ({self.grid.n_r}, {self.grid.n_p}) 不符")
        if self.origin not in ("quantum", "classical"):
            raise ValueError(f"未知的场来源: {self.origin}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def norm(self) -> float:
        return float(np.sum(self.values) * self.grid.cell)

    def position_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=1) * self.grid.dp

    def momentum_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=0) * self.grid.dr

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values: np.ndarray, **changes) -> "WignerField":
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class MomentSet:
    """一二三阶矩（SI单位）"""
    mean_r: float
    mean_p: float
    var_r: float
    var_p: float
    cov_rp: float
    mu3_p: float
    t: float = 0.0

    @property
    def skew_p(self) -> float:
        if self.var_p <= 0:
            return 0.0
        return self.mu3_p / self.var_p ** 1.5

    @property
    def second_r(self) -> float:
        """⟨r²⟩"""
        return self.var_r + self.mean_r ** 2

    def to_dict(self) -> Dict[str, float]:
        return {
            "t": self.t,
            "mean_r": self.mean_r,
            "mean_p": self.mean_p,
            "var_r": self.var_r,
            "var_p": self.var_p,
            "cov_rp": self.cov_rp,
            "mu3_p": self.mu3_p,
            "skew_p": self.skew_p,
        }


@dataclass(frozen=True)
class WignerMinimum:
    """场的全局极小值，含亚网格修正和相对场均值的位置"""
    value: float
    r_loc: float
    p_loc: float
    raw_value: float
    r_offset: float
    p_offset: float

    def __iter__(self) -> Iterator[float]:
        return iter((self.value, self.r_loc, self.p_loc))


def momentum_axis(n: int, dr: float, hbar: float) -> np.ndarray:
    """FFT 排列的动量轴"""
    return 2.0 * math.pi * hbar * sfft.fftfreq(n, d=dr)


class SplitOperatorPropagator:
    """Strang 分裂：半步势能、整步动能、半步势能

    势能常数部分单独作为全局相位累加，避免大相位的舍入误差。
    """

    def __init__(self, grid: PhaseSpaceGrid, spec: PotentialSpec, dt: float, mu: float, hbar: float):
        self.grid = grid
        self.dt = dt
        self.hbar = hbar
        v = spec.value(grid.r)
        self.v_ref = float(spec.value(np.array([0.0]))[0])
        p = momentum_axis(grid.n_r, grid.dr, hbar)
        self._half_potential = np.exp(-0.5j * (v - self.v_ref) * dt / hbar)
        self._full_potential = self._half_potential ** 2
        self._kinetic = np.exp(-1j * p ** 2 * dt / (2.0 * mu * hbar))

    def _kinetic_step(self, psi: np.ndarray) -> np.ndarray:
        return sfft.ifft(self._kinetic * sfft.fft(psi))

    def step(self, psi: np.ndarray, n_steps: int) -> np.ndarray:
        """推进 n_steps 步，相邻半步势能合并"""
        if n_steps <= 0:
            return psi
        psi = self._half_potential * psi
        for i in range(n_steps):
            psi = self._kinetic_step(psi)
            psi = (self._full_potential if i < n_steps - 1 else self._half_potential) * psi
        return psi

    def global_phase(self, duration: float) -> complex:
        phase = math.fmod(self.v_ref * duration / self.hbar, 2.0 * math.pi)
        return complex(math.cos(phase), -math.sin(phase))


def phase_rates(state: WavefunctionState, spec: PotentialSpec, mu: float, hbar: float):
    """支撑集上动能与势能的相位变化率 (rad/s)"""
    grid = state.grid
    density = state.density
    support = density > SUPPORT_THRESHOLD * density.max()

    phi2 = np.abs(sfft.fft(state.psi)) ** 2
    p = momentum_axis(grid.n_r, grid.dr, hbar)
    p_support = p[phi2 > SUPPORT_THRESHOLD * phi2.max()]
    kinetic = float(np.max(p_support ** 2)) / (2.0 * mu * hbar)

    v = spec.value(grid.r[support])
    potential = float(np.max(v) - np.min(v)) / hbar
    return kinetic, potential


def choose_time_step(state: WavefunctionState, spec: PotentialSpec, mu: float, hbar: float,
                     phase: float = TARGET_PHASE_STEP) -> float:
    """按支撑集上的最大相位增量选择步长"""
    rate = max(phase_rates(state, spec, mu, hbar))
    if rate <= 0:
        return math.inf
    return phase / rate


def _edge_mass(psi: np.ndarray, dr: float) -> float:
    density = np.abs(psi) ** 2
    return float((np.sum(density[:EDGE_POINTS]) + np.sum(density[-EDGE_POINTS:])) * dr)


def evolve_quantum(state: WavefunctionState, spec: PotentialSpec, t_final: float,
                   dt: Optional[float] = None,
                   checkpoints: Optional[Sequence[float]] = None) -> List[WavefunctionState]:
    """分步傅里叶演化，返回各检查点的态"""
    params = spec.params
    mu, hbar = params.mu, params.hbar
    times = [t_final] if checkpoints is None else [float(t) for t in checkpoints]
    if not times:
        raise ValueError("检查点列表为空")
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError(f"检查点必须按时间递增: {times}")
    if times[0] < state.t or times[-1] > t_final + 1e-12 * max(1.0, abs(t_final)):
        raise ValueError(f"检查点超出 [{state.t}, {t_final}] 范围")

    kinetic, potential = phase_rates(state, spec, mu, hbar)
    if dt is not None:
        if dt <= 0:
            raise ValueError(f"时间步长必须为正: {dt}")
        max_phase = max(kinetic, potential) * dt
        if max_phase >= MAX_PHASE_STEP:
            raise ValueError(f"时间步长过大: 单步相位 {max_phase:.3g} rad ≥ {MAX_PHASE_STEP}")
    logger.info(f"量子演化: {len(times)} 个检查点, t_final={t_final:.4g}, 势能={spec.kind.value} N={spec.N}")

    propagators: Dict[float, SplitOperatorPropagator] = {}
    psi = np.array(state.psi)
    t_now = state.t
    results: List[WavefunctionState] = []

    for t_next in tqdm(times, desc="量子演化", disable=not settings.progress, leave=False):
        duration = t_next - t_now
        if duration > 0:
            current = WavefunctionState(psi=psi, grid=state.grid, t=t_now, hbar=hbar)
            step = dt if dt is not None else choose_time_step(current, spec, mu, hbar)
            n_steps = max(1, math.ceil(duration / step))
            h = duration / n_steps
            if h not in propagators:
                propagators[h] = SplitOperatorPropagator(state.grid, spec, h, mu, hbar)
            propagator = propagators[h]
            psi = propagator.step(psi, n_steps) * propagator.global_phase(duration)
            t_now = t_next

        norm = float(np.sum(np.abs(psi) ** 2) * state.grid.dr)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise NumericalAbort(f"t={t_now:.4g} 时范数偏离: {norm - 1.0:.3e}")
        edge = _edge_mass(psi, state.grid.dr)
        if edge > EDGE_MASS:
            raise NumericalAbort(f"网格溢出: t={t_now:.4g} 时边缘 {EDGE_POINTS} 点内的概率为 {edge:.3e}")
        results.append(WavefunctionState(psi=psi, grid=state.grid, t=t_now, hbar=hbar))

    return results


def wigner_grid(state_grid: PhaseSpaceGrid, grid: PhaseSpaceGrid, hbar: float):
    """由 y 采样导出 Wigner 场的实际网格

    返回 (行索引, 输出网格, FFT长度 M)。动量间距 dp = πħ/(M·Δr)，
    其中 Δr 为波函数网格间距。
    """
    dr = state_grid.dr
    stride = grid.dr / dr
    offset = (grid.r_min - state_grid.r_min) / dr
    if abs(stride - round(stride)) > 1e-6 or abs(offset - round(offset)) > 1e-6 or round(stride) < 1:
        raise ValueError("Wigner 网格的位置采样点必须与波函数网格重合")
    stride, offset = int(round(stride)), int(round(offset))
    rows = offset + stride * np.arange(grid.n_r)
    if rows[0] < 0 or rows[-1] >= state_grid.n_r:
        raise ValueError("Wigner 网格超出波函数网格范围")

    period = math.pi * hbar / dr
    M = max(grid.n_p, int(math.floor(period / grid.dp)))
    dp = period / M
    p_center = 0.5 * (grid.p_min + grid.p_max)
    p_min = p_center - 0.5 * grid.n_p * dp
    out = PhaseSpaceGrid(
        r_min=grid.r_min, r_max=grid.r_max, p_min=p_min, p_max=p_min + grid.n_p * dp,
        n_r=grid.n_r, n_p=grid.n_p,
    )
    return rows, out, M


def _wigner_rows(psi: np.ndarray, rows: np.ndarray, dr: float, hbar: float,
                 p_center: float, M: int, n_p: int) -> np.ndarray:
    n = psi.shape[0]
    K = n // 2
    k = np.arange(-K, K + 1)
    plus = rows[:, None] + k[None, :]
    minus = rows[:, None] - k[None, :]
    valid = (plus >= 0) & (plus < n) & (minus >= 0) & (minus < n)
    corr = np.where(valid, psi[np.clip(plus, 0, n - 1)] * np.conj(psi[np.clip(minus, 0, n - 1)]), 0.0)
    corr = corr * np.exp(-2j * p_center * k * dr / hbar)[None, :]

    # 按 k mod M 折叠；e^{-2πiqk/M} 对 k 以 M 为周期，折叠是精确的
    folded = np.zeros((rows.shape[0], M), dtype=complex)
    idx = np.mod(k, M)
    for start in range(0, k.shape[0], M):
        folded[:, idx[start:start + M]] += corr[:, start:start + M]

    spectrum = sfft.fft(folded, axis=1)
    q = np.mod(np.arange(n_p) - n_p // 2, M)
    values = spectrum[:, q] * (dr / (math.pi * hbar))
    return values


def wigner_of(state: WavefunctionState, grid: PhaseSpaceGrid) -> WignerField:
    """自相关形式的 Wigner 变换，按行并行"""
    hbar = state.hbar
    rows, out_grid, M = wigner_grid(state.grid, grid, hbar)
    dr = state.grid.dr
    p_center = 0.5 * (out_grid.p_min + out_grid.p_max)

    # 动量分布必须落在输出网格内
    phi2 = np.abs(sfft.fft(state.psi)) ** 2
    p = momentum_axis(state.grid.n_r, dr, hbar)
    phi2 = phi2 / phi2.sum()
    outside = float(np.sum(phi2[(p < out_grid.p_min) | (p >= out_grid.p_max)]))
    if outside > 1e-9:
        raise NumericalAbort(f"动量带宽被截断: 网格外概率 {outside:.3e}")
    alias = float(np.sum(phi2[np.abs(p - p_center) >= 0.5 * math.pi * hbar / dr]))
    if alias > 1e-12:
        raise NumericalAbort(f"波函数网格过粗，Wigner 变换混叠: {alias:.3e}")

    chunks = row_chunks(rows.shape[0], settings.max_workers)
    parts = Parallel(n_jobs=settings.max_workers, prefer="threads")(
        delayed(_wigner_rows)(state.psi, rows[sl], dr, hbar, p_center, M, out_grid.n_p) for sl in chunks
    )
    values = np.concatenate(parts, axis=0)

    residue = float(np.max(np.abs(values.imag)))
    scale = float(np.max(np.abs(values.real)))
    if residue > 1e-10 * scale:
        logger.warning(f"Wigner 变换虚部残差偏大: {residue:.3e} (最大值 {scale:.3e})")
    return WignerField(values=values.real, grid=out_grid, t=state.t, origin="quantum", hbar=hbar)


def _state_moments(state: WavefunctionState, hbar: float) -> MomentSet:
    grid = state.grid
    r = grid.r
    psi = state.psi
    density = np.abs(psi) ** 2 * grid.dr
    total = density.sum()
    mean_r = float(np.sum(r * density) / total)
    var_r = float(np.sum((r - mean_r) ** 2 * density) / total)

    phi = sfft.fft(psi)
    p = momentum_axis(grid.n_r, grid.dr, hbar)
    pdens = np.abs(phi) ** 2
    pdens = pdens / pdens.sum()
    mean_p = float(np.sum(p * pdens))
    dp = p - mean_p
    var_p = float(np.sum(dp ** 2 * pdens))
    mu3_p = float(np.sum(dp ** 3 * pdens))

    # ⟨(rp+pr)/2⟩ = Re⟨ψ|r p|ψ⟩
    p_psi = sfft.ifft(p * phi)
    sym = float(np.real(np.sum(np.conj(psi) * r * p_psi) * grid.dr) / total)
    return MomentSet(
        mean_r=mean_r, mean_p=mean_p, var_r=var_r, var_p=var_p,
        cov_rp=sym - mean_r * mean_p, mu3_p=mu3_p, t=state.t,
    )


def _field_moments(f: WignerField) -> MomentSet:
    R, P = f.grid.mesh()
    w = f.values * f.grid.cell
    total = w.sum()
    mean_r = float(np.sum(R * w) / total)
    mean_p = float(np.sum(P * w) / total)
    dr = R - mean_r
    dp = P - mean_p
    return MomentSet(
        mean_r=mean_r, mean_p=mean_p,
        var_r=float(np.sum(dr ** 2 * w) / total),
        var_p=float(np.sum(dp ** 2 * w) / total),
        cov_rp=float(np.sum(dr * dp * w) / total),
        mu3_p=float(np.sum(dp ** 3 * w) / total),
        t=f.t,
    )


def moments(obj: Union[WavefunctionState, WignerField]) -> MomentSet:
    """提取矩，波函数与相空间场给出一致的结果"""
    if isinstance(obj, WignerField):
        return _field_moments(obj)
    return _state_moments(obj, obj.hbar)


def energy(state: WavefunctionState, spec: PotentialSpec) -> float:
    """⟨H_r⟩，动能用约化质量，势能含常数项"""
    params = spec.params
    grid = state.grid
    density = np.abs(state.psi) ** 2 * grid.dr
    phi2 = np.abs(sfft.fft(state.psi)) ** 2
    phi2 = phi2 / phi2.sum() * density.sum()
    p = momentum_axis(grid.n_r, grid.dr, params.hbar)
    kinetic = float(np.sum(p ** 2 * phi2) / (2.0 * params.mu))
    potential = float(np.sum(spec.value(grid.r) * density))
    return kinetic + potential


def purity(field: WignerField) -> float:
    """2πħ∬W²"""
    return float(2.0 * math.pi * field.hbar * np.sum(field.values ** 2) * field.grid.cell)


def skewness_onset(state: WavefunctionState, spec: PotentialSpec, dt: float,
                   substeps: int = 32) -> float:
    """dμ₃/dt 在 t=0 处的差分估计，差分区间 [0, 2dt]"""
    mu3_0 = moments(state).mu3_p
    later = evolve_quantum(state, spec, state.t + 2.0 * dt, dt=dt / substeps,
                           checkpoints=[state.t + 2.0 * dt])[-1]
    return (moments(later).mu3_p - mu3_0) / (2.0 * dt)


def moyal_cubic_rate(field: WignerField, spec: PotentialSpec) -> np.ndarray:
    """Moyal 方程中三阶修正项 −(ħ²/24)V'''(r)∂³_p W"""
    d3 = np.gradient(np.gradient(np.gradient(field.values, field.grid.dp, axis=1),
                                 field.grid.dp, axis=1), field.grid.dp, axis=1)
    v3 = spec.third_derivative(field.grid.r)
    return -(field.hbar ** 2 / 24.0) * v3[:, None] * d3


def wigner_min(field: WignerField) -> WignerMinimum:
    """全局极小值，3×3 邻域双二次拟合做亚网格修正"""
    values = field.values
    i, j = np.unravel_index(int(np.argmin(values)), values.shape)
    raw = float(values[i, j])
    r_loc = float(field.grid.r[i])
    p_loc = float(field.grid.p[j])
    value = raw

    if 0 < i < values.shape[0] - 1 and 0 < j < values.shape[1] - 1:
        refined = biquadratic_minimum(values[i - 1:i + 2, j - 1:j + 2])
        if refined is not None:
            dx, dy, value = refined
            r_loc += dx * field.grid.dr
            p_loc += dy * field.grid.dp

    m = _field_moments(field)
    return WignerMinimum(
        value=float(value), r_loc=r_loc, p_loc=p_loc, raw_value=raw,
        r_offset=r_loc - m.mean_r, p_offset=p_loc - m.mean_p,
    )
