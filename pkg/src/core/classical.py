"""经典 Liouville 演化、Fock 基下的 Weyl 算符矩阵与非量子性见证"""
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence, Tuple, Union
import math

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg, ndimage, special

from .config import settings
from .errors import NumericalAbort
from .logger import logger
from .potential import PotentialKind, PotentialSpec
from .quantum import MomentSet, WignerField, moments
from .scales import DerivedScales, PhaseSpaceGrid, PhysicalParams
from ..utils.grid_utils import row_chunks

# 截断泄漏告警阈值
LEAKAGE_WARNING = 1e-3
# 特征线积分的步长上限 ω·h
MAX_OMEGA_STEP = 1e-4


@dataclass(frozen=True)
class GaussianDensity:
    """解析高斯相空间分布，作为经典初值 f0"""
    mean_r: float
    mean_p: float
    var_r: float
    var_p: float
    cov_rp: float = 0.0

    @classmethod
    def from_scales(cls, scales: DerivedScales) -> "GaussianDensity":
        """初始相对坐标高斯态对应的分布"""
        return cls(mean_r=0.0, mean_p=scales.params.pbar,
                   var_r=scales.sigma_r ** 2, var_p=scales.sigma_p ** 2)

    def __call__(self, r, p):
        det = self.var_r * self.var_p - self.cov_rp ** 2
        if det <= 0:
            raise ValueError(f"协方差矩阵不正定: det={det:.3e}")
        dr = np.asarray(r) - self.mean_r
        dp = np.asarray(p) - self.mean_p
        q = (self.var_p * dr ** 2 - 2.0 * self.cov_rp * dr * dp + self.var_r * dp ** 2) / det
        return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))

    def on_grid(self, grid: PhaseSpaceGrid, hbar: float, t: float = 0.0) -> WignerField:
        R, P = grid.mesh()
        return WignerField(values=self(R, P), grid=grid, t=t, origin="classical", hbar=hbar, density=self)


def stormer_verlet(r: np.ndarray, p: np.ndarray, force: Callable, mu: float,
                   duration: float, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Störmer–Verlet（速度 Verlet）积分，duration 可为负（时间反演）"""
    h = duration / n_steps
    f = force(r)
    for _ in range(n_steps):
        p_half = p + 0.5 * h * f
        r = r + h * p_half / mu
        f = force(r)
        p = p_half + 0.5 * h * f
    return r, p


def characteristic_steps(spec: PotentialSpec, duration: float) -> int:
    """按 ω·h ≤ 1e-4 选择步数"""
    omega = spec.params.omega
    return max(16, int(math.ceil(abs(duration) * omega / MAX_OMEGA_STEP)))


def _backtrack(r: np.ndarray, p: np.ndarray, spec: PotentialSpec, duration: float, n_steps: int):
    params = spec.params
    r0, p0 = stormer_verlet(r, p, spec.force, params.mu, -duration, n_steps)
    if spec.kind is not PotentialKind.FREE and np.any(params.L + r0 <= 0):
        raise NumericalAbort("特征线进入碰撞区域 L + r ≤ 0")
    return r0, p0


def _interpolate(f0: WignerField, r: np.ndarray, p: np.ndarray) -> np.ndarray:
    """非解析初值的三次样条插值，网格外取 0"""
    i = (r - f0.grid.r_min) / f0.grid.dr
    j = (p - f0.grid.p_min) / f0.grid.dp
    return ndimage.map_coordinates(f0.values, [i, j], order=3, mode="constant", cval=0.0)


def evolve_classical(f0: WignerField, spec: PotentialSpec, t: float,
                     n_steps: Optional[int] = None) -> WignerField:
    """沿 H_r 的哈密顿特征线反向追踪：f(z, t) = f0(Φ₋ₜ(z))"""
    duration = t - f0.t
    if duration < 0:
        raise ValueError(f"目标时间 {t} 早于初值时间 {f0.t}")
    if duration == 0:
        return replace(f0, origin="classical")
    steps = n_steps or characteristic_steps(spec, duration)
    R, P = f0.grid.mesh()

    def run(sl: slice) -> np.ndarray:
        r0, p0 = _backtrack(R[sl], P[sl], spec, duration, steps)
        if f0.density is not None:
            return f0.density(r0, p0)
        return _interpolate(f0, r0, p0)

    chunks = row_chunks(f0.grid.n_r, settings.max_workers)
    parts = Parallel(n_jobs=settings.max_workers, prefer="threads")(delayed(run)(sl) for sl in chunks)
    values = np.concatenate(parts, axis=0)
    logger.debug(f"经典演化完成: t={t:.4g}, 步数={steps}")
    return WignerField(values=values, grid=f0.grid, t=t, origin="classical", hbar=f0.hbar, density=None)


@dataclass(frozen=True)
class FockBasis:
    """谐振子 Fock 基，χ₀ 与初始相对高斯态重合

    ell² = 2σ_r²，中心 (r0, p0) 可平移到场的均值。
    """
    dim: int
    ell: float
    mu: float
    hbar: float
    r0: float = 0.0
    p0: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Fock 基维数必须为正: {self.dim}")
        if self.ell <= 0:
            raise ValueError(f"振子长度必须为正: {self.ell}")

    @classmethod
    def for_scales(cls, scales: DerivedScales, dim: int = 24) -> "FockBasis":
        return cls(dim=dim, ell=math.sqrt(2.0) * scales.sigma_r, mu=scales.mu, hbar=scales.hbar)

    def displaced(self, r0: float, p0: float) -> "FockBasis":
        return replace(self, r0=r0, p0=p0)

    def centered_on(self, m: MomentSet) -> "FockBasis":
        """把基平移到场的均值，抵消线性力造成的位移"""
        return self.displaced(m.mean_r, m.mean_p)

    def alpha(self, r, p):
        """复振幅 α = ((r−r0)/ℓ + i(p−p0)ℓ/ħ)/√2"""
        return ((np.asarray(r) - self.r0) / self.ell + 1j * (np.asarray(p) - self.p0) * self.ell / self.hbar) / math.sqrt(2.0)

    def wavefunctions(self, r: np.ndarray) -> np.ndarray:
        """χ_n(r)，形状 dim×len(r)，三项递推"""
        x = (np.asarray(r) - self.r0) / self.ell
        out = np.zeros((self.dim, x.shape[0]))
        out[0] = math.pi ** -0.25 * np.exp(-0.5 * x ** 2) / math.sqrt(self.ell)
        if self.dim > 1:
            out[1] = math.sqrt(2.0) * x * out[0]
        for n in range(1, self.dim - 1):
            out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
        phase = np.exp(1j * self.p0 * np.asarray(r) / self.hbar)
        return out * phase[None, :]

    def kernel(self, m: int, n: int, r, p, alpha=None):
        """|m⟩⟨n| 的 Wigner 核（Laguerre 形式）"""
        if m < n:
            return np.conj(self.kernel(n, m, r, p, alpha))
        a = self.alpha(r, p) if alpha is None else alpha
        a2 = np.abs(a) ** 2
        log_norm = 0.5 * (special.gammaln(n + 1) - special.gammaln(m + 1))
        sign = -1.0 if n % 2 else 1.0
        return (sign * math.exp(log_norm) / (math.pi * self.hbar)) * (2.0 * np.conj(a)) ** (m - n) \
            * np.exp(-2.0 * a2) * special.eval_genlaguerre(n, m - n, 4.0 * a2)


@dataclass(frozen=True)
class WeylMatrix:
    """Fock 基下的 Weyl 算符（或密度算符）矩阵"""
    rho: np.ndarray
    t: float
    basis: FockBasis

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    @property
    def leakage(self) -> float:
        """基截断泄漏 η = 1 − tr ρ"""
        return max(0.0, 1.0 - self.trace)

    def block(self, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(indices)
        return self.rho[np.ix_(idx, idx)]


def weyl_fock_matrix(f: WignerField, basis: FockBasis) -> WeylMatrix:
    """ρ_jk = 2πħ ∬ f·W_{|k⟩⟨j|}"""
    if not math.isclose(f.hbar, basis.hbar, rel_tol=1e-12):
        raise ValueError("场与 Fock 基的 ħ 不一致")
    R, P = f.grid.mesh()
    alpha = basis.alpha(R, P)
    weight = 2.0 * math.pi * basis.hbar * f.grid.cell
    pairs = [(j, k) for j in range(basis.dim) for k in range(j, basis.dim)]

    def element(j: int, k: int) -> complex:
        return complex(np.sum(f.values * basis.kernel(k, j, R, P, alpha)) * weight)

    values = Parallel(n_jobs=settings.max_workers, prefer="threads")(
        delayed(element)(j, k) for j, k in pairs
    )
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    for (j, k), v in zip(pairs, values):
        rho[j, k] = v
        rho[k, j] = np.conj(v)
    rho[np.diag_indices(basis.dim)] = np.real(np.diag(rho))

    w = WeylMatrix(rho=rho, t=f.t, basis=basis)
    if w.leakage > LEAKAGE_WARNING:
        logger.warning(f"Fock 基截断泄漏 η={w.leakage:.3e} 超过 {LEAKAGE_WARNING} (dim={basis.dim}, t={f.t:.4g})")
    return w


def min_eigenvalue(w: WeylMatrix, subspace: Optional[Sequence[int]] = None) -> float:
    """（子）矩阵的最小本征值"""
    matrix = w.rho if subspace is None else w.block(subspace)
    return float(linalg.eigvalsh(matrix)[0])


@dataclass(frozen=True)
class SubspaceEigen:
    """{|1⟩, |2⟩} 子块的最小本征对"""
    value: float
    vector: np.ndarray
    phase: float  # 最小本征矢中 |2⟩ 分量相对 |1⟩ 分量的相位


def subspace_block(w: WeylMatrix, indices: Tuple[int, int] = (1, 2)) -> SubspaceEigen:
    """2×2 子块的显式本征分解"""
    values, vectors = linalg.eigh(w.block(indices))
    v = vectors[:, 0]
    if abs(v[0]) > 0:
        v = v * np.exp(-1j * np.angle(v[0]))
    phase = float(np.angle(v[1])) if abs(v[0]) > 0 else 0.0
    return SubspaceEigen(value=float(values[0]), vector=v, phase=phase)


def nonquantumness_witness(w: WeylMatrix) -> float:
    """投影到 (|1⟩ + i|2⟩)/√2 的期望值：½(ρ₁₁ + ρ₂₂) − Im ρ₁₂"""
    if w.basis.dim < 3:
        raise ValueError(f"见证需要至少 3 维的 Fock 基: dim={w.basis.dim}")
    rho = w.rho
    return float(0.5 * (rho[1, 1].real + rho[2, 2].real) - rho[1, 2].imag)


def _lambda_slope(params: PhysicalParams, width: float) -> float:
    return 3.0 * params.m * params.omega ** 2 * width ** 3 / (4.0 * params.hbar * params.L)


def short_time_lambda(params: PhysicalParams, t: float, convention: str = "single") -> float:
    """短时负本征值 λ ≈ −3mω²σ³t/(4ħL)

    convention="single" 用单粒子宽度 σ（与子空间积分一致），"relative" 用 σ_r = √2σ。
    """
    if params.omega * t >= 0.05:
        raise ValueError(f"短时近似要求 ωt < 0.05: ωt={params.omega * t:.3g}")
    if convention == "single":
        width = params.sigma
    elif convention == "relative":
        width = params.sigma * math.sqrt(2.0)
    else:
        raise ValueError(f"未知的宽度约定: {convention}")
    return -_lambda_slope(params, width) * t


def subspace_rate_oracle(params: PhysicalParams, n_points: int = 1024, extent: float = 10.0) -> complex:
    """ρ̇₁₂ 在 t=0 的位置表象二重积分（三次核 𝒱₃）"""
    ell = 2.0 * params.sigma
    basis = FockBasis(dim=3, ell=ell, mu=params.mu, hbar=params.hbar)
    r = np.linspace(-extent * ell, extent * ell, n_points)
    h = r[1] - r[0]
    chi = basis.wavefunctions(r).real
    rr, rp = np.meshgrid(r, r, indexing="ij")
    kernel = (rr - rp) * 3.0 * params.m * params.omega ** 2 / (4.0 * params.L) * (0.5 * (rr + rp)) ** 2
    integrand = (chi[1] * chi[0])[:, None] * kernel * (chi[0] * chi[2])[None, :]
    return complex(-1j / params.hbar * np.sum(integrand) * h * h)


def resolve_sigma_convention(params: PhysicalParams) -> Dict[str, Union[float, str]]:
    """用子空间积分确定短时公式中 σ 的含义，两种候选都报告"""
    oracle = abs(subspace_rate_oracle(params))
    single = _lambda_slope(params, params.sigma)
    relative = _lambda_slope(params, params.sigma * math.sqrt(2.0))
    chosen = "single" if abs(single - oracle) <= abs(relative - oracle) else "relative"
    logger.info(f"短时斜率: 积分={oracle:.4e}, 单粒子σ={single:.4e}, 相对σ_r={relative:.4e}, 采用 {chosen}")
    return {"oracle": oracle, "single": single, "relative": relative, "chosen": chosen}
